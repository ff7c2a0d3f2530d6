#include "contextclip/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include "contextclip/text_format.hpp"

namespace contextclip {

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(lr_image >= 0.0) || !(lr_text >= 0.0)) throw ConfigError("learning rates must be >= 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    loss.validate();
}

TrainingError::TrainingError(std::size_t epoch, std::size_t batch, const std::string& what)
    : NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) + ": " + what),
      epoch_(epoch),
      batch_(batch) {}

void adam_step(std::span<std::vector<double>> params, std::span<const std::vector<double>> grads,
               AdamState& state, double lr, double weight_decay, bool decoupled) {
    if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient count mismatch");
    for (std::size_t p = 0; p < params.size(); ++p) {
        if (params[p].size() != grads[p].size()) {
            throw ShapeError("adam_step: gradient " + std::to_string(p) + " has the wrong length");
        }
        for (double g : grads[p]) {
            if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient");
        }
    }
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.size(), 0.0);
            state.v.emplace_back(p.size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adam_step: state does not match parameters");

    state.t += 1;
    const double t = static_cast<double>(state.t);
    const double correction1 = 1.0 - std::pow(kAdamBeta1, t);
    const double correction2 = 1.0 - std::pow(kAdamBeta2, t);
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& theta = params[p];
        auto& m = state.m[p];
        auto& v = state.v[p];
        if (m.size() != theta.size()) throw ShapeError("adam_step: state does not match parameters");
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double g = decoupled ? grads[p][i] : grads[p][i] + weight_decay * theta[i];
            m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g;
            v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g * g;
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            double next = theta[i] - lr * m_hat / (std::sqrt(v_hat) + kAdamEpsilon);
            if (decoupled) next -= lr * weight_decay * theta[i];
            theta[i] = next;
        }
    }
}

namespace {

std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
    return seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch) + 1;
}

// Adam update of the arrays of one modality, written back into `params`.
void update_group(ModelParams& params, const ModelParams& taped, const Gradients& grads, Modality modality,
                  AdamState& state, double lr, const TrainConfig& cfg) {
    std::vector<std::vector<double>> values, g;
    std::vector<const ParamInfo*> members;
    for (const ParamInfo& info : kParamLayout) {
        if (info.modality != modality) continue;
        members.push_back(&info);
        values.push_back((params.*info.member).storage());
        const auto grad = grads.of(taped.*info.member);
        g.emplace_back(grad.begin(), grad.end());
    }
    adam_step(values, g, state, lr, cfg.weight_decay, cfg.decoupled_weight_decay);
    for (std::size_t k = 0; k < members.size(); ++k) {
        Tensor& slot = params.*(members[k]->member);
        slot = Tensor(slot.shape(), std::move(values[k]));
    }
}

}  // namespace

void check_compatible(const PairCorpus& corpus, const ModelDims& dims) {
    if (corpus.empty()) throw DataError("corpus is empty");
    for (const PairRecord& r : corpus.records) {
        if (r.image.size() != dims.d_img) {
            throw DataError("record " + std::to_string(r.id) + ": image width " + std::to_string(r.image.size()) +
                            " differs from the model's " + std::to_string(dims.d_img));
        }
        for (int t : r.tokens) {
            if (t < 0 || static_cast<std::size_t>(t) >= dims.vocab_size) {
                throw DataError("record " + std::to_string(r.id) + ": token " + std::to_string(t) +
                                " outside the vocabulary");
            }
        }
    }
}

Checkpoint initial_checkpoint(const ModelParams& params, const TrainConfig& cfg) {
    Checkpoint ckpt;
    ckpt.params = params;
    ckpt.config = cfg;
    return ckpt;
}

TrainResult train(const TrainConfig& cfg, const PairCorpus& corpus, const ModelParams& initial) {
    cfg.validate();
    validate_params(initial);
    check_compatible(corpus, initial.dims);

    TrainResult result;
    result.checkpoint = initial_checkpoint(initial, cfg);
    ModelParams& params = result.checkpoint.params;
    AdamState image_state, text_state;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto batches = batch_iter(corpus, cfg.batch_size, epoch_seed(cfg.seed, epoch), cfg.shuffle);
        EpochLoss sums{epoch, 0.0, 0.0, 0.0};
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const PairBatch& batch = batches[b];
            try {
                Tape tape;
                const ModelParams taped = on_tape(params, tape);
                const Tensor image_e = embed_images(taped, batch.images);
                const Tensor text_e = embed_texts(taped, batch.tokens);
                // The contextual pipeline needs N >= 2; a trailing batch of one
                // contributes the contrastive term alone.
                Tensor loss;
                LossBreakdown parts;
                if (cfg.use_contextual && batch.size() >= 2) {
                    TotalLoss total = total_loss(image_e, text_e, image_e, text_e, cfg.loss);
                    loss = total.value;
                    parts = total.breakdown;
                } else {
                    loss = contrastive_loss(image_e, text_e, cfg.loss);
                    parts = {loss.item(), 0.0, loss.item()};
                }
                const Gradients grads = backward(loss, tape);
                update_group(params, taped, grads, Modality::image, image_state, cfg.lr_image, cfg);
                update_group(params, taped, grads, Modality::text, text_state, cfg.lr_text, cfg);
                result.report.batches.push_back({epoch, b, parts});
                sums.total += parts.total;
                sums.contrastive += parts.contrastive;
                sums.contextual += parts.contextual;
            } catch (const NumericError& e) {
                throw TrainingError(epoch, b, e.what());
            }
        }
        const auto n = static_cast<double>(batches.size());
        EpochLoss mean{epoch, sums.total / n, sums.contrastive / n, sums.contextual / n};
        result.report.epochs.push_back(mean);
        result.checkpoint.history.push_back(mean);
        result.checkpoint.epoch = epoch;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Fine-tuning

SplitIndices fine_tune_split(std::size_t n, std::uint64_t seed) {
    const auto order = shuffled_indices(n, seed);
    const std::size_t n_train = n * 8 / 10;
    const std::size_t n_val = n / 10;
    SplitIndices s;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                        order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
    return s;
}

namespace {

Tensor head_logits(const Tensor& image_embed, const ClassifierHead& head) {
    return matmul(image_embed, head.weight) + head.bias;
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> labels) {
    const std::size_t n = logits.rows(), c = logits.cols();
    std::vector<double> onehot(n * c, 0.0);
    for (std::size_t i = 0; i < n; ++i) onehot[i * c + static_cast<std::size_t>(labels[i])] = 1.0;
    const Tensor picked = sum(logits * Tensor::matrix(n, c, std::move(onehot)), Axis::rows);
    return mean(log_sum_exp(logits, Axis::rows) - picked);
}

}  // namespace

Accuracy classify_accuracy(const ModelParams& params, const ClassifierHead& head, const PairBatch& batch) {
    Accuracy acc;
    acc.count = batch.size();
    if (acc.count == 0) return acc;
    const Tensor logits = head_logits(embed_images(params, batch.images), head);
    const std::size_t c = logits.cols();
    const std::size_t k5 = std::min<std::size_t>(5, c);
    std::size_t hit1 = 0, hit5 = 0;
    for (std::size_t i = 0; i < acc.count; ++i) {
        const auto label = static_cast<std::size_t>(batch.labels[i]);
        const double own = logits(i, label);
        // Rank of the true class: classes strictly better, or equal with a lower id.
        std::size_t rank = 0;
        for (std::size_t j = 0; j < c; ++j) {
            const double s = logits(i, j);
            if (s > own || (s == own && j < label)) ++rank;
        }
        hit1 += rank < 1;
        hit5 += rank < k5;
    }
    acc.top1 = static_cast<double>(hit1) / static_cast<double>(acc.count);
    acc.top5 = static_cast<double>(hit5) / static_cast<double>(acc.count);
    return acc;
}

FineTuneResult fine_tune(const Checkpoint& ckpt, const PairCorpus& labeled, const TrainConfig& cfg,
                         std::size_t n_classes) {
    cfg.validate();
    validate_params(ckpt.params);
    check_compatible(labeled, ckpt.params.dims);
    if (n_classes == 0) throw ConfigError("fine_tune: n_classes must be >= 1");
    for (const PairRecord& r : labeled.records) {
        if (r.class_id < 0 || static_cast<std::size_t>(r.class_id) >= n_classes) {
            throw DataError("record " + std::to_string(r.id) + ": class " + std::to_string(r.class_id) +
                            " exceeds the configured " + std::to_string(n_classes) + " classes");
        }
    }

    FineTuneResult result;
    result.checkpoint = ckpt;
    result.checkpoint.config = cfg;
    ModelParams& params = result.checkpoint.params;
    const std::size_t d_e = params.dims.d_e;
    ClassifierHead head{Tensor::zeros({d_e, n_classes}), Tensor::zeros({1, n_classes})};

    const SplitIndices split = fine_tune_split(labeled.size(), cfg.seed);
    PairCorpus train_part;
    for (std::size_t idx : split.train) train_part.records.push_back(labeled.records[idx]);

    AdamState encoder_state, head_state;
    for (std::size_t epoch = 1; epoch <= cfg.epochs && !train_part.empty(); ++epoch) {
        const auto batches = batch_iter(train_part, cfg.batch_size, epoch_seed(cfg.seed, epoch), cfg.shuffle);
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            try {
                Tape tape;
                const ModelParams taped = on_tape(params, tape);
                const ClassifierHead taped_head{tape.leaf(head.weight), tape.leaf(head.bias)};
                const Tensor logits = head_logits(embed_images(taped, batches[b].images), taped_head);
                const Tensor loss = cross_entropy(logits, batches[b].labels);
                const Gradients grads = backward(loss, tape);
                update_group(params, taped, grads, Modality::image, encoder_state, cfg.lr_image, cfg);

                std::vector<std::vector<double>> values{head.weight.storage(), head.bias.storage()};
                const auto gw = grads.of(taped_head.weight);
                const auto gb = grads.of(taped_head.bias);
                const std::vector<std::vector<double>> g{{gw.begin(), gw.end()}, {gb.begin(), gb.end()}};
                adam_step(values, g, head_state, cfg.lr_image, cfg.weight_decay, cfg.decoupled_weight_decay);
                head.weight = Tensor(head.weight.shape(), std::move(values[0]));
                head.bias = Tensor(head.bias.shape(), std::move(values[1]));
                loss_sum += loss.item();
            } catch (const NumericError& e) {
                throw TrainingError(epoch, b, e.what());
            }
        }
        result.epoch_loss.push_back(loss_sum / static_cast<double>(batches.size()));
    }

    result.validation = classify_accuracy(params, head, make_batch(labeled, split.validation));
    result.test = classify_accuracy(params, head, make_batch(labeled, split.test));
    result.checkpoint.head = std::move(head);
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization

namespace {

constexpr const char* kMagic = "contextclip-checkpoint";

void write_tensor(std::ostream& os, std::string_view name, const Tensor& t) {
    os << "[param " << name << ' ' << t.rows() << ' ' << t.cols() << "]\n";
    for (std::size_t i = 0; i < t.rows(); ++i) {
        for (std::size_t j = 0; j < t.cols(); ++j) {
            if (j) os << ' ';
            os << format_real(t(i, j));
        }
        os << '\n';
    }
}

std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& c) {
    return {
        {"epochs", std::to_string(c.epochs)},
        {"batch_size", std::to_string(c.batch_size)},
        {"lr_image", format_real(c.lr_image)},
        {"lr_text", format_real(c.lr_text)},
        {"weight_decay", format_real(c.weight_decay)},
        {"decoupled_weight_decay", c.decoupled_weight_decay ? "1" : "0"},
        {"use_contextual", c.use_contextual ? "1" : "0"},
        {"shuffle", c.shuffle ? "1" : "0"},
        {"tau", format_real(c.loss.tau)},
        {"lambda", format_real(c.loss.lambda)},
        {"alpha", format_real(c.loss.alpha)},
        {"bandwidth", format_real(c.loss.bandwidth)},
        {"eps", format_real(c.loss.eps)},
        {"symmetric_contextual", c.loss.symmetric_contextual ? "1" : "0"},
        {"seed", std::to_string(c.seed)},
    };
}

std::vector<std::pair<std::string, std::size_t>> dims_entries(const ModelDims& d) {
    return {{"d_img", d.d_img}, {"d_hid", d.d_hid}, {"d_i", d.d_i},           {"d_emb", d.d_emb},
            {"d_t", d.d_t},     {"d_e", d.d_e},     {"vocab_size", d.vocab_size}};
}

class LineReader {
  public:
    explicit LineReader(std::istream& is) : is_(is) {}

    bool next(std::string& line) {
        if (!std::getline(is_, line)) return false;
        ++line_no_;
        return true;
    }
    std::string expect() {
        std::string line;
        if (!next(line)) fail("unexpected end of file");
        return line;
    }
    [[noreturn]] void fail(const std::string& what) const {
        throw ParseError("checkpoint line " + std::to_string(line_no_) + ": " + what);
    }

  private:
    std::istream& is_;
    std::size_t line_no_ = 0;
};

std::pair<std::string, std::string> split_key_value(const std::string& line, const LineReader& reader) {
    const auto space = line.find(' ');
    if (space == std::string::npos) reader.fail("expected 'key value', got '" + line + "'");
    return {line.substr(0, space), line.substr(space + 1)};
}

}  // namespace

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
    os << kMagic << '\n';
    os << "format_version " << ckpt.format_version << '\n';
    os << "[dims]\n";
    for (const auto& [k, v] : dims_entries(ckpt.params.dims)) os << k << ' ' << v << '\n';
    os << "[config]\n";
    for (const auto& [k, v] : config_entries(ckpt.config)) os << k << ' ' << v << '\n';
    os << "[state]\n";
    os << "epoch " << ckpt.epoch << '\n';
    for (const ParamInfo& info : kParamLayout) write_tensor(os, info.name, ckpt.params.*info.member);
    if (ckpt.head) {
        write_tensor(os, "head_w", ckpt.head->weight);
        write_tensor(os, "head_b", ckpt.head->bias);
    }
    os << "[history]\n";
    write_loss_history(os, ckpt.history);
}

void write_loss_history(std::ostream& os, std::span<const EpochLoss> history) {
    os << "epoch,L,L_CLIP,L_CX\n";
    for (const EpochLoss& e : history) {
        os << e.epoch << ',' << format_real(e.total) << ',' << format_real(e.contrastive) << ','
           << format_real(e.contextual) << '\n';
    }
}

Checkpoint read_checkpoint(std::istream& is) {
    LineReader reader(is);
    Checkpoint ckpt;
    if (reader.expect() != kMagic) reader.fail("not a contextclip checkpoint");
    {
        const auto [key, value] = split_key_value(reader.expect(), reader);
        if (key != "format_version") reader.fail("expected format_version");
        const auto version = parse_int(value);
        if (version != kCheckpointVersion) {
            throw VersionError("unsupported checkpoint format_version " + std::to_string(version) + " (expected " +
                               std::to_string(kCheckpointVersion) + ")");
        }
        ckpt.format_version = static_cast<int>(version);
    }

    auto read_section = [&](const char* header, std::size_t count) {
        if (reader.expect() != header) reader.fail(std::string("expected ") + header);
        std::map<std::string, std::string> entries;
        for (std::size_t i = 0; i < count; ++i) {
            auto [k, v] = split_key_value(reader.expect(), reader);
            if (!entries.emplace(k, v).second) reader.fail("duplicate key " + k);
        }
        return entries;
    };
    auto take = [&](std::map<std::string, std::string>& entries, const std::string& key) {
        const auto it = entries.find(key);
        if (it == entries.end()) reader.fail("missing key " + key);
        return it->second;
    };

    try {
        auto dims = read_section("[dims]", dims_entries(ModelDims{}).size());
        ModelDims& d = ckpt.params.dims;
        d.d_img = parse_uint(take(dims, "d_img"));
        d.d_hid = parse_uint(take(dims, "d_hid"));
        d.d_i = parse_uint(take(dims, "d_i"));
        d.d_emb = parse_uint(take(dims, "d_emb"));
        d.d_t = parse_uint(take(dims, "d_t"));
        d.d_e = parse_uint(take(dims, "d_e"));
        d.vocab_size = parse_uint(take(dims, "vocab_size"));

        auto cfg = read_section("[config]", config_entries(TrainConfig{}).size());
        TrainConfig& c = ckpt.config;
        c.epochs = parse_uint(take(cfg, "epochs"));
        c.batch_size = parse_uint(take(cfg, "batch_size"));
        c.lr_image = parse_real(take(cfg, "lr_image"));
        c.lr_text = parse_real(take(cfg, "lr_text"));
        c.weight_decay = parse_real(take(cfg, "weight_decay"));
        c.decoupled_weight_decay = parse_bool(take(cfg, "decoupled_weight_decay"));
        c.use_contextual = parse_bool(take(cfg, "use_contextual"));
        c.shuffle = parse_bool(take(cfg, "shuffle"));
        c.loss.tau = parse_real(take(cfg, "tau"));
        c.loss.lambda = parse_real(take(cfg, "lambda"));
        c.loss.alpha = parse_real(take(cfg, "alpha"));
        c.loss.bandwidth = parse_real(take(cfg, "bandwidth"));
        c.loss.eps = parse_real(take(cfg, "eps"));
        c.loss.symmetric_contextual = parse_bool(take(cfg, "symmetric_contextual"));
        c.seed = parse_uint(take(cfg, "seed"));

        auto state = read_section("[state]", 1);
        ckpt.epoch = parse_uint(take(state, "epoch"));
    } catch (const VersionError&) {
        throw;
    } catch (const ParseError& e) {
        reader.fail(e.what());
    }

    auto read_tensor_after = [&](const std::string& header_line, std::string_view name) {
        std::istringstream header(header_line);
        std::string tag, got;
        std::size_t rows = 0, cols = 0;
        if (!(header >> tag >> got >> rows >> cols) || tag != "[param" || got.empty()) {
            reader.fail("expected parameter header for " + std::string(name));
        }
        if (got != name) reader.fail("expected parameter " + std::string(name) + ", found " + got);
        std::vector<double> values;
        values.reserve(rows * cols);
        for (std::size_t i = 0; i < rows; ++i) {
            const std::string line = reader.expect();
            std::size_t pos = 0, found = 0;
            while (pos <= line.size()) {
                const auto end = std::min(line.find(' ', pos), line.size());
                try {
                    values.push_back(parse_real(std::string_view(line).substr(pos, end - pos)));
                } catch (const ParseError& e) {
                    reader.fail(e.what());
                }
                ++found;
                pos = end + 1;
            }
            if (found != cols) reader.fail(std::string(name) + ": row has the wrong number of values");
        }
        return Tensor::matrix(rows, cols, std::move(values));
    };
    auto read_tensor = [&](std::string_view name) { return read_tensor_after(reader.expect(), name); };

    for (const ParamInfo& info : kParamLayout) ckpt.params.*info.member = read_tensor(info.name);
    try {
        validate_params(ckpt.params);
    } catch (const Error& e) {
        throw ParseError(std::string("checkpoint parameters inconsistent with dims: ") + e.what());
    }

    std::string line = reader.expect();
    if (line.starts_with("[param head_w")) {
        ClassifierHead head;
        head.weight = read_tensor_after(line, "head_w");
        head.bias = read_tensor("head_b");
        if (head.weight.rows() != ckpt.params.dims.d_e || head.bias.rows() != 1 ||
            head.bias.cols() != head.weight.cols()) {
            reader.fail("classifier head shape does not match d_e");
        }
        ckpt.head = std::move(head);
        line = reader.expect();
    }
    if (line != "[history]") reader.fail("expected [history]");
    if (reader.expect() != "epoch,L,L_CLIP,L_CX") reader.fail("expected history header");
    while (reader.next(line)) {
        if (line.empty()) reader.fail("blank line in history");
        std::vector<std::string_view> fields;
        std::string_view rest(line);
        while (true) {
            const auto comma = rest.find(',');
            fields.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (fields.size() != 4) reader.fail("history row needs 4 fields");
        try {
            ckpt.history.push_back({static_cast<std::size_t>(parse_uint(fields[0])), parse_real(fields[1]),
                                    parse_real(fields[2]), parse_real(fields[3])});
        } catch (const ParseError& e) {
            reader.fail(e.what());
        }
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    write_checkpoint(os, ckpt);
    if (!os) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return read_checkpoint(is);
}

}  // namespace contextclip
