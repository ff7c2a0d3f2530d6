#include "contextclip/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "contextclip/rng.hpp"

namespace contextclip {

using ordered_json = nlohmann::ordered_json;

void CorpusSpec::validate() const {
    if (n_classes < 1) throw ConfigError("corpus: n_classes must be >= 1");
    if (d_img < 1) throw ConfigError("corpus: d_img must be >= 1");
    if (tokens_per_caption < 1) throw ConfigError("corpus: tokens_per_caption must be >= 1");
    if (class_token_block < 1) throw ConfigError("corpus: class_token_block must be >= 1");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("corpus: noise_sigma must be >= 0");
    if (n_classes * class_token_block + kReservedTokens > vocab_size) {
        throw ConfigError("corpus: vocab_size " + std::to_string(vocab_size) + " cannot hold " +
                          std::to_string(n_classes) + " blocks of " + std::to_string(class_token_block) +
                          " tokens plus " + std::to_string(kReservedTokens) + " reserved ids");
    }
}

int class_block_start(std::size_t class_id, std::size_t class_token_block) {
    return kReservedTokens + static_cast<int>(class_id * class_token_block);
}

std::size_t PairCorpus::class_count() const {
    std::int64_t top = -1;
    for (const auto& r : records) top = std::max(top, r.class_id);
    return static_cast<std::size_t>(top + 1);
}

std::size_t PairCorpus::image_width() const {
    if (records.empty()) return 0;
    const std::size_t width = records.front().image.size();
    for (const auto& r : records) {
        if (r.image.size() != width) throw ShapeError("corpus images have differing widths");
    }
    return width;
}

namespace {

void normalize(std::vector<double>& v) {
    double ss = 0.0;
    for (double x : v) ss += x * x;
    const double norm = std::sqrt(ss);
    if (norm == 0.0) throw NumericError("cannot normalize a zero vector");
    for (double& x : v) x /= norm;
}

std::vector<std::vector<double>> draw_prototypes(const CorpusSpec& spec, Rng& rng) {
    std::vector<std::vector<double>> protos(spec.n_classes, std::vector<double>(spec.d_img));
    for (auto& p : protos) {
        for (double& x : p) x = rng.gaussian();
        normalize(p);
    }
    return protos;
}

}  // namespace

std::vector<std::vector<double>> class_prototypes(const CorpusSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    return draw_prototypes(spec, rng);
}

std::string caption_for(std::int64_t class_id, std::span<const int> tokens) {
    std::ostringstream os;
    os << "class " << class_id << ':';
    for (int t : tokens) os << " t" << t;
    return os.str();
}

PairCorpus generate(const CorpusSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const auto protos = draw_prototypes(spec, rng);
    const std::size_t pool = spec.class_token_block + kStopTokenCount;

    PairCorpus corpus;
    corpus.records.reserve(spec.n_pairs);
    for (std::size_t i = 0; i < spec.n_pairs; ++i) {
        const std::size_t c = i % spec.n_classes;
        PairRecord r;
        r.id = static_cast<std::int64_t>(i);
        r.class_id = static_cast<std::int64_t>(c);
        r.image = protos[c];
        for (double& x : r.image) x += spec.noise_sigma * rng.gaussian();
        normalize(r.image);
        r.tokens.resize(spec.tokens_per_caption);
        for (int& t : r.tokens) {
            const auto k = static_cast<int>(rng.below(pool));
            t = k < kStopTokenCount ? kFirstStopToken + k
                                    : class_block_start(c, spec.class_token_block) + (k - kStopTokenCount);
        }
        r.caption = caption_for(r.class_id, r.tokens);
        corpus.records.push_back(std::move(r));
    }
    return corpus;
}

void write_corpus(std::ostream& os, const PairCorpus& corpus) {
    for (const auto& r : corpus.records) {
        ordered_json j;
        j["id"] = r.id;
        j["class"] = r.class_id;
        j["image"] = r.image;
        j["tokens"] = r.tokens;
        j["caption"] = r.caption;
        os << j.dump() << '\n';
    }
}

namespace {

PairRecord parse_record(const std::string& line) {
    const ordered_json j = ordered_json::parse(line);
    if (!j.is_object() || j.size() != 5) {
        throw std::invalid_argument("expected an object with keys id, class, image, tokens, caption");
    }
    static constexpr const char* kKeys[] = {"id", "class", "image", "tokens", "caption"};
    std::size_t pos = 0;
    for (auto it = j.begin(); it != j.end(); ++it, ++pos) {
        if (it.key() != kKeys[pos]) {
            throw std::invalid_argument("unexpected key '" + it.key() + "' at position " + std::to_string(pos));
        }
    }
    if (!j["id"].is_number_integer() || !j["class"].is_number_integer() || !j["image"].is_array() ||
        !j["tokens"].is_array() || !j["caption"].is_string()) {
        throw std::invalid_argument("field has the wrong type");
    }
    PairRecord r;
    r.id = j["id"].get<std::int64_t>();
    r.class_id = j["class"].get<std::int64_t>();
    if (r.class_id < 0) throw std::invalid_argument("negative class");
    for (const auto& x : j["image"]) {
        if (!x.is_number()) throw std::invalid_argument("image entry is not a number");
        r.image.push_back(x.get<double>());
    }
    for (const auto& t : j["tokens"]) {
        if (!t.is_number_integer() || t.get<std::int64_t>() < 0) {
            throw std::invalid_argument("token is not a non-negative integer");
        }
        r.tokens.push_back(t.get<int>());
    }
    r.caption = j["caption"].get<std::string>();
    return r;
}

}  // namespace

PairCorpus read_corpus(std::istream& is) {
    PairCorpus corpus;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) {
            throw ParseError("corpus line " + std::to_string(line_no) + ": blank line");
        }
        try {
            corpus.records.push_back(parse_record(line));
        } catch (const std::exception& e) {
            throw ParseError("corpus line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    corpus.image_width();
    return corpus;
}

void save_corpus(const PairCorpus& corpus, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    write_corpus(os, corpus);
    if (!os) throw IoError("failed writing " + path.string());
}

PairCorpus load_corpus(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return read_corpus(is);
}

PairBatch make_batch(const PairCorpus& corpus, std::span<const std::size_t> indices) {
    const std::size_t width = corpus.image_width();
    PairBatch b;
    b.indices.assign(indices.begin(), indices.end());
    std::vector<double> images;
    images.reserve(indices.size() * width);
    for (std::size_t idx : indices) {
        const PairRecord& r = corpus.records.at(idx);
        images.insert(images.end(), r.image.begin(), r.image.end());
        b.tokens.push_back(r.tokens);
        b.labels.push_back(r.class_id);
        b.ids.push_back(r.id);
    }
    b.images = Tensor::matrix(indices.size(), width, std::move(images));
    return b;
}

PairBatch full_batch(const PairCorpus& corpus) {
    std::vector<std::size_t> all(corpus.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return make_batch(corpus, all);
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

std::vector<PairBatch> batch_iter(const PairCorpus& corpus, std::size_t batch_size, std::uint64_t seed,
                                  bool shuffle) {
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    std::vector<std::size_t> order;
    if (shuffle) {
        order = shuffled_indices(corpus.size(), seed);
    } else {
        order.resize(corpus.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    }
    std::vector<PairBatch> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t len = std::min(batch_size, order.size() - start);
        batches.push_back(make_batch(corpus, std::span(order).subspan(start, len)));
    }
    return batches;
}

CorpusSplit split_corpus(const PairCorpus& corpus, double train_fraction) {
    if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) {
        throw ConfigError("train_fraction must lie in [0,1]");
    }
    const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(corpus.size()) * train_fraction));
    CorpusSplit split;
    split.train.records.assign(corpus.records.begin(), corpus.records.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.heldout.records.assign(corpus.records.begin() + static_cast<std::ptrdiff_t>(n_train), corpus.records.end());
    return split;
}

}  // namespace contextclip
