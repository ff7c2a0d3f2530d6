#include "cli.hpp"

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <utility>

#include <CLI11.hpp>

#include <contextclip/evaluator.hpp>
#include <contextclip/grad_check.hpp>
#include <contextclip/losses.hpp>
#include <contextclip/rng.hpp>
#include <contextclip/text_format.hpp>

namespace contextclip::cli {

namespace fs = std::filesystem;

namespace {

constexpr std::array<std::pair<Subcommand, std::string_view>, 8> kSubcommands{{
    {Subcommand::gen_data, "gen-data"},
    {Subcommand::train, "train"},
    {Subcommand::fine_tune, "fine-tune"},
    {Subcommand::grad_check, "grad-check"},
    {Subcommand::eval_zeroshot, "eval-zeroshot"},
    {Subcommand::eval_retrieve, "eval-retrieve"},
    {Subcommand::project, "project"},
    {Subcommand::compare, "compare"},
}};

constexpr std::string_view kSubcommandHelp[] = {
    "generate a synthetic paired corpus",
    "train the dual encoder on the corpus's training split",
    "attach a classifier head and train end-to-end on labeled pairs",
    "finite-difference check of the loss gradients",
    "zero-shot classification of held-out images from class prompts",
    "text-to-image retrieval on held-out pairs, or for a configured query",
    "2-D principal-component coordinates of the image embeddings",
    "train with alpha = 0 and with the configured alpha, report both",
};

// ---------------------------------------------------------------------------
// Settings table

struct SettingKey {
    std::string_view name;
    std::function<void(Settings&, std::string_view)> set;
    std::function<std::string(const Settings&)> get;
};

std::size_t parse_size(std::string_view text) { return static_cast<std::size_t>(parse_uint(text)); }

std::string bool_text(bool b) { return b ? "true" : "false"; }

std::vector<int> parse_tokens(std::string_view text) {
    std::vector<int> tokens;
    std::istringstream is{std::string(text)};
    std::string word;
    while (is >> word) tokens.push_back(static_cast<int>(parse_int(word)));
    return tokens;
}

std::string tokens_text(const std::vector<int>& tokens) {
    std::string s;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) s += ' ';
        s += std::to_string(tokens[i]);
    }
    return s;
}

#define CONTEXTCLIP_SIZE_KEY(key, member)                                            \
    SettingKey {                                                                     \
        key, [](Settings& s, std::string_view v) { s.member = parse_size(v); },      \
            [](const Settings& s) { return std::to_string(s.member); }               \
    }
#define CONTEXTCLIP_REAL_KEY(key, member)                                            \
    SettingKey {                                                                     \
        key, [](Settings& s, std::string_view v) { s.member = parse_real(v); },      \
            [](const Settings& s) { return format_real(s.member); }                  \
    }
#define CONTEXTCLIP_BOOL_KEY(key, member)                                            \
    SettingKey {                                                                     \
        key, [](Settings& s, std::string_view v) { s.member = parse_bool(v); },      \
            [](const Settings& s) { return bool_text(s.member); }                    \
    }

const std::vector<SettingKey>& setting_keys() {
    static const std::vector<SettingKey> keys{
        {"seed", [](Settings& s, std::string_view v) { s.seed = parse_uint(v); },
         [](const Settings& s) { return std::to_string(s.seed); }},
        CONTEXTCLIP_SIZE_KEY("n_classes", corpus.n_classes),
        CONTEXTCLIP_SIZE_KEY("n_pairs", corpus.n_pairs),
        CONTEXTCLIP_SIZE_KEY("d_img", corpus.d_img),
        CONTEXTCLIP_SIZE_KEY("vocab_size", corpus.vocab_size),
        CONTEXTCLIP_SIZE_KEY("tokens_per_caption", corpus.tokens_per_caption),
        CONTEXTCLIP_SIZE_KEY("class_token_block", corpus.class_token_block),
        CONTEXTCLIP_REAL_KEY("noise_sigma", corpus.noise_sigma),
        CONTEXTCLIP_SIZE_KEY("d_hid", dims.d_hid),
        CONTEXTCLIP_SIZE_KEY("d_i", dims.d_i),
        CONTEXTCLIP_SIZE_KEY("d_emb", dims.d_emb),
        CONTEXTCLIP_SIZE_KEY("d_t", dims.d_t),
        CONTEXTCLIP_SIZE_KEY("d_e", dims.d_e),
        CONTEXTCLIP_SIZE_KEY("epochs", train.epochs),
        CONTEXTCLIP_SIZE_KEY("batch_size", train.batch_size),
        CONTEXTCLIP_REAL_KEY("lr_image", train.lr_image),
        CONTEXTCLIP_REAL_KEY("lr_text", train.lr_text),
        CONTEXTCLIP_REAL_KEY("weight_decay", train.weight_decay),
        CONTEXTCLIP_BOOL_KEY("decoupled_weight_decay", train.decoupled_weight_decay),
        CONTEXTCLIP_BOOL_KEY("use_contextual", train.use_contextual),
        CONTEXTCLIP_BOOL_KEY("shuffle", train.shuffle),
        CONTEXTCLIP_REAL_KEY("tau", train.loss.tau),
        CONTEXTCLIP_REAL_KEY("lambda", train.loss.lambda),
        CONTEXTCLIP_REAL_KEY("alpha", train.loss.alpha),
        CONTEXTCLIP_REAL_KEY("bandwidth", train.loss.bandwidth),
        CONTEXTCLIP_REAL_KEY("eps", train.loss.eps),
        CONTEXTCLIP_BOOL_KEY("symmetric_contextual", train.loss.symmetric_contextual),
        CONTEXTCLIP_REAL_KEY("train_fraction", train_fraction),
        CONTEXTCLIP_SIZE_KEY("k", k),
        CONTEXTCLIP_SIZE_KEY("grad_pairs", grad_pairs),
        CONTEXTCLIP_SIZE_KEY("grad_dim", grad_dim),
        CONTEXTCLIP_REAL_KEY("grad_step", grad_step),
        CONTEXTCLIP_BOOL_KEY("affinity_report", affinity_report),
        {"query", [](Settings& s, std::string_view v) { s.query = parse_tokens(v); },
         [](const Settings& s) { return tokens_text(s.query); }},
        {"out", [](Settings& s, std::string_view v) { s.out = fs::path(std::string(v)); },
         [](const Settings& s) { return s.out.string(); }},
    };
    return keys;
}

#undef CONTEXTCLIP_SIZE_KEY
#undef CONTEXTCLIP_REAL_KEY
#undef CONTEXTCLIP_BOOL_KEY

// Copies the shared fields into the components that read them.
void synchronize(Settings& s) {
    s.corpus.seed = s.seed;
    s.train.seed = s.seed;
    s.dims.d_img = s.corpus.d_img;
    s.dims.vocab_size = s.corpus.vocab_size;
}

// ---------------------------------------------------------------------------
// File helpers

void ensure_directory(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

template <typename Writer>
void write_file(const fs::path& path, Writer&& writer) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    writer(os);
    os.flush();
    if (!os) throw IoError("write failed: " + path.string());
}

fs::path corpus_path(const Command& cmd, const Settings& s) { return cmd.corpus.value_or(s.out / "corpus.jsonl"); }

fs::path checkpoint_path(const Command& cmd, const Settings& s) {
    return cmd.checkpoint.value_or(s.out / "checkpoint.txt");
}

PairCorpus require_corpus(const fs::path& path) {
    PairCorpus corpus = load_corpus(path);
    if (corpus.empty()) throw DataError("corpus " + path.string() + " has no pairs");
    return corpus;
}

CorpusSplit split_for_eval(const PairCorpus& corpus, const Settings& s) {
    CorpusSplit split = split_corpus(corpus, s.train_fraction);
    if (split.train.empty() || split.heldout.empty()) {
        throw DataError("train_fraction " + format_real(s.train_fraction) + " leaves an empty split of " +
                        std::to_string(corpus.size()) + " pairs");
    }
    return split;
}

// Spec of the classes the prompts are built for; the corpus must fit in it.
CorpusSpec prompt_spec(const PairCorpus& corpus, const Settings& s) {
    if (corpus.class_count() > s.corpus.n_classes) {
        throw DataError("corpus has " + std::to_string(corpus.class_count()) + " classes, configuration " +
                        std::to_string(s.corpus.n_classes));
    }
    return s.corpus;
}

// ---------------------------------------------------------------------------
// Shared evaluation

struct HeldOutMetrics {
    double recall_at_1 = 0.0;
    double recall_at_k = 0.0;
    double paired_recall_at_1 = 0.0;
    double paired_recall_at_k = 0.0;
    EvalResult zero_shot;
};

HeldOutMetrics evaluate_heldout(const ModelParams& params, const PairCorpus& heldout, const Settings& s) {
    HeldOutMetrics m;
    const std::size_t depth = std::min(s.k, heldout.size());
    const auto hits = retrieve_all(params, heldout, heldout, depth);
    const auto ranks = ranked_ids(hits);
    const auto by_class = same_class_truth(heldout);
    const auto paired = paired_truth(heldout);
    m.recall_at_1 = recall_at_k(ranks, by_class, 1);
    m.recall_at_k = recall_at_k(ranks, by_class, depth);
    m.paired_recall_at_1 = recall_at_k(ranks, paired, 1);
    m.paired_recall_at_k = recall_at_k(ranks, paired, depth);

    const auto prompts = synthetic_prompts(prompt_spec(heldout, s));
    const Tensor classes = build_class_embeddings(params, prompts);
    const PairBatch batch = full_batch(heldout);
    m.zero_shot = zero_shot_classify(params, batch.images, batch.labels, classes, std::min(s.k, prompts.size()));
    return m;
}

TrainResult train_from_seed(const Settings& s, const PairCorpus& train_split) {
    return train(s.train, train_split, init_params(s.seed, s.dims));
}

// ---------------------------------------------------------------------------
// Subcommands

int run_gen_data(const Command& cmd, const Settings& s, std::ostream& out) {
    const PairCorpus corpus = generate(s.corpus);
    const fs::path path = corpus_path(cmd, s);
    if (path.has_parent_path()) ensure_directory(path.parent_path());
    save_corpus(corpus, path);
    out << "wrote " << corpus.size() << " pairs to " << path.string() << '\n';
    return kExitOk;
}

int run_train(const Command& cmd, const Settings& s, std::ostream& out) {
    const PairCorpus corpus = require_corpus(corpus_path(cmd, s));
    const CorpusSplit split = split_for_eval(corpus, s);
    const TrainResult result = train_from_seed(s, split.train);

    const fs::path ckpt = checkpoint_path(cmd, s);
    ensure_directory(s.out);
    if (ckpt.has_parent_path()) ensure_directory(ckpt.parent_path());
    save_checkpoint(result.checkpoint, ckpt);
    write_file(s.out / "loss_history.csv",
               [&](std::ostream& os) { write_loss_history(os, result.checkpoint.history); });
    if (s.affinity_report) {
        const std::size_t n = std::min(s.train.batch_size, split.train.size());
        if (n >= 2) {
            std::vector<std::size_t> first(n);
            for (std::size_t i = 0; i < n; ++i) first[i] = i;
            const PairBatch batch = make_batch(split.train, first);
            const ModelParams& p = result.checkpoint.params;
            const AffinityReport report =
                contextual_affinity(embed_images(p, batch.images), embed_texts(p, batch.tokens), s.train.loss);
            write_file(s.out / "affinity_report.txt", [&](std::ostream& os) { write_affinity_report(os, report); });
        }
    }
    const auto& history = result.checkpoint.history;
    out << "trained " << history.size() << " epochs on " << split.train.size() << " pairs";
    if (!history.empty()) out << ", final L " << format_real(history.back().total);
    out << "; checkpoint " << ckpt.string() << '\n';
    return kExitOk;
}

int run_fine_tune(const Command& cmd, const Settings& s, std::ostream& out) {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path(cmd, s));
    const PairCorpus labeled = require_corpus(corpus_path(cmd, s));
    const FineTuneResult r = fine_tune(ckpt, labeled, s.train, s.corpus.n_classes);
    ensure_directory(s.out);
    save_checkpoint(r.checkpoint, s.out / "fine_tuned_checkpoint.txt");
    const std::vector<std::pair<std::string, double>> metrics{
        {"validation_top1", r.validation.top1},
        {"validation_top5", r.validation.top5},
        {"test_top1", r.test.top1},
        {"test_top5", r.test.top5},
    };
    write_file(s.out / "fine_tune.csv", [&](std::ostream& os) { write_metrics_csv(os, metrics); });
    write_metrics_csv(out, metrics);
    return kExitOk;
}

int run_grad_check(const Settings& s, std::ostream& out) {
    const std::size_t n = s.grad_pairs, d = s.grad_dim;
    if (n < 2 || d < 1) throw ConfigError("grad-check needs grad_pairs >= 2 and grad_dim >= 1");
    Rng rng(s.seed);
    std::vector<double> x(2 * n * d);
    for (double& v : x) v = rng.gaussian();
    const LossConfig cfg = s.train.loss;

    // x holds raw image then text features; losses see the normalized rows.
    const auto embeddings = [n, d](const Tensor& flat) {
        return std::pair{l2_normalize_rows(view(flat, 0, {n, d}), kNormGuard),
                         l2_normalize_rows(view(flat, n * d, {n, d}), kNormGuard)};
    };
    const std::vector<std::pair<std::string, ScalarFunction>> losses{
        {"L_CLIP", [&](const Tensor& flat) {
             const auto [img, txt] = embeddings(flat);
             return contrastive_loss(img, txt, cfg);
         }},
        {"L_CX", [&](const Tensor& flat) {
             const auto [img, txt] = embeddings(flat);
             return contextual_loss(img, txt, cfg);
         }},
        {"L", [&](const Tensor& flat) {
             const auto [img, txt] = embeddings(flat);
             return total_loss(img, txt, img, txt, cfg).value;
         }},
    };
    std::vector<std::pair<std::string, double>> rows;
    double worst = 0.0;
    for (const auto& [name, f] : losses) {
        const double err = grad_check(f, x, s.grad_step).max_rel_error;
        worst = std::max(worst, err);
        rows.emplace_back(name, err);
    }
    out << "loss,max_rel_error\n";
    for (const auto& [name, err] : rows) out << name << ',' << format_real(err) << '\n';
    out << "max relative error " << format_real(worst) << '\n';
    if (!(worst < 1e-4)) throw NumericError("gradient check failed: max relative error " + format_real(worst));
    return kExitOk;
}

int run_eval_zeroshot(const Command& cmd, const Settings& s, std::ostream& out) {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path(cmd, s));
    const PairCorpus corpus = require_corpus(corpus_path(cmd, s));
    const PairCorpus heldout = split_for_eval(corpus, s).heldout;
    const auto prompts = synthetic_prompts(prompt_spec(corpus, s));
    const Tensor classes = build_class_embeddings(ckpt.params, prompts);
    const PairBatch batch = full_batch(heldout);
    const EvalResult r = zero_shot_classify(ckpt.params, batch.images, batch.labels, classes, s.k);

    ensure_directory(s.out);
    std::vector<std::pair<std::string, double>> metrics{{"top1", r.top1}, {"top5", r.top5}};
    if (r.k != 1 && r.k != 5) metrics.emplace_back("top" + std::to_string(r.k), r.topk);
    write_file(s.out / "zeroshot.csv", [&](std::ostream& os) { write_metrics_csv(os, metrics); });
    write_file(s.out / "zeroshot_predictions.csv", [&](std::ostream& os) {
        os << "id,class,predicted\n";
        for (std::size_t i = 0; i < batch.size(); ++i) {
            os << batch.ids[i] << ',' << batch.labels[i] << ',' << r.predictions[i] << '\n';
        }
    });
    write_metrics_csv(out, metrics);
    return kExitOk;
}

int run_eval_retrieve(const Command& cmd, const Settings& s, std::ostream& out) {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path(cmd, s));
    const PairCorpus corpus = require_corpus(corpus_path(cmd, s));
    ensure_directory(s.out);
    if (!s.query.empty()) {
        const auto hits = retrieve(ckpt.params, s.query, corpus, std::min(s.k, corpus.size()));
        std::map<std::int64_t, std::int64_t> class_of;
        for (const auto& rec : corpus.records) class_of.emplace(rec.id, rec.class_id);
        const auto write_hits = [&](std::ostream& os) {
            os << "rank,id,class,score\n";
            for (std::size_t r = 0; r < hits.size(); ++r) {
                os << r + 1 << ',' << hits[r].id << ',' << class_of.at(hits[r].id) << ','
                   << format_real(hits[r].score) << '\n';
            }
        };
        write_file(s.out / "retrieval.csv", write_hits);
        write_hits(out);
        return kExitOk;
    }
    const PairCorpus heldout = split_for_eval(corpus, s).heldout;
    const HeldOutMetrics m = evaluate_heldout(ckpt.params, heldout, s);
    const std::string k = std::to_string(std::min(s.k, heldout.size()));
    const std::vector<std::pair<std::string, double>> metrics{
        {"recall_at_1", m.recall_at_1},
        {"recall_at_" + k, m.recall_at_k},
        {"paired_recall_at_1", m.paired_recall_at_1},
        {"paired_recall_at_" + k, m.paired_recall_at_k},
    };
    write_file(s.out / "retrieval.csv", [&](std::ostream& os) { write_metrics_csv(os, metrics); });
    write_metrics_csv(out, metrics);
    return kExitOk;
}

int run_project(const Command& cmd, const Settings& s, std::ostream& out) {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path(cmd, s));
    const PairCorpus corpus = require_corpus(corpus_path(cmd, s));
    const PairBatch batch = full_batch(corpus);
    const Tensor coords = project_2d(embed_images(ckpt.params, batch.images));
    std::vector<std::int64_t> classes(batch.labels.begin(), batch.labels.end());
    ensure_directory(s.out);
    write_file(s.out / "projection.csv",
               [&](std::ostream& os) { write_projection_csv(os, batch.ids, classes, coords); });
    out << "wrote " << corpus.size() << " points to " << (s.out / "projection.csv").string() << '\n';
    return kExitOk;
}

// "alpha" followed by the digits of the value: 0 -> alpha0, 0.5 -> alpha05.
std::string alpha_column(double alpha) {
    std::string name = "alpha";
    for (char c : format_real(alpha)) {
        if (c != '.') name += c;
    }
    return name;
}

int run_compare(const Command& cmd, const Settings& s, std::ostream& out) {
    const PairCorpus corpus = cmd.corpus ? load_corpus(*cmd.corpus) : generate(s.corpus);
    if (corpus.empty()) throw DataError("compare: corpus has no pairs");
    const CorpusSplit split = split_for_eval(corpus, s);

    const std::array<double, 2> alphas{0.0, s.train.loss.alpha};
    std::array<HeldOutMetrics, 2> results;
    for (std::size_t v = 0; v < alphas.size(); ++v) {
        Settings variant = s;
        variant.train.loss.alpha = alphas[v];
        variant.train.use_contextual = alphas[v] != 0.0;
        const TrainResult trained = train_from_seed(variant, split.train);
        results[v] = evaluate_heldout(trained.checkpoint.params, split.heldout, variant);
    }

    const auto write_table = [&](std::ostream& os) {
        os << "metric," << alpha_column(alphas[0]) << ',' << alpha_column(alphas[1]) << '\n';
        const auto row = [&](std::string_view name, auto field) {
            os << name << ',' << format_real(field(results[0])) << ',' << format_real(field(results[1])) << '\n';
        };
        row("recall_at_1", [](const HeldOutMetrics& m) { return m.recall_at_1; });
        row("paired_recall_at_1", [](const HeldOutMetrics& m) { return m.paired_recall_at_1; });
        row("zero_shot_top1", [](const HeldOutMetrics& m) { return m.zero_shot.top1; });
        row("zero_shot_top5", [](const HeldOutMetrics& m) { return m.zero_shot.top5; });
    };
    ensure_directory(s.out);
    write_file(s.out / "compare.csv", write_table);
    write_table(out);
    return kExitOk;
}

}  // namespace

std::string_view subcommand_name(Subcommand kind) noexcept {
    for (const auto& [k, name] : kSubcommands) {
        if (k == kind) return name;
    }
    return "unknown";
}

Settings default_settings() {
    Settings s;
    synchronize(s);
    return s;
}

void apply_setting(Settings& settings, std::string_view key, std::string_view value) {
    for (const auto& entry : setting_keys()) {
        if (entry.name != key) continue;
        try {
            entry.set(settings, trim(value));
        } catch (const ParseError& e) {
            throw ConfigError("config key '" + std::string(key) + "': " + e.what());
        }
        return;
    }
    throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void read_settings(std::istream& is, Settings& settings) {
    std::string line;
    std::size_t number = 0;
    while (std::getline(is, line)) {
        ++number;
        const std::string_view text = trim(line);
        if (text.empty() || text.front() == '#') continue;
        const auto eq = text.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(number) + ": expected key = value");
        }
        try {
            apply_setting(settings, trim(text.substr(0, eq)), text.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(number) + ": " + e.what());
        }
    }
}

void write_settings(std::ostream& os, const Settings& settings) {
    for (const auto& entry : setting_keys()) os << entry.name << " = " << entry.get(settings) << '\n';
}

Settings resolve_settings(const Command& cmd) {
    Settings s;
    if (cmd.config) {
        std::ifstream is(*cmd.config);
        if (!is) throw IoError("cannot open config file " + cmd.config->string());
        read_settings(is, s);
    }
    if (cmd.seed) s.seed = *cmd.seed;
    if (cmd.out) s.out = *cmd.out;
    if (cmd.alpha) s.train.loss.alpha = *cmd.alpha;
    if (cmd.epochs) s.train.epochs = *cmd.epochs;
    if (cmd.k) s.k = *cmd.k;
    synchronize(s);
    s.corpus.validate();
    s.dims.validate();
    s.train.validate();
    if (!(s.train_fraction > 0.0 && s.train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0,1)");
    if (s.k < 1) throw ConfigError("k must be >= 1");
    return s;
}

std::string usage() {
    std::ostringstream os;
    os << "usage: contextclip <subcommand> [--config PATH] [--seed INT] [--out DIR] [--corpus PATH]\n"
          "                   [--checkpoint PATH] [--alpha REAL] [--epochs INT] [--k INT]\n\n"
          "subcommands:\n";
    for (std::size_t i = 0; i < kSubcommands.size(); ++i) {
        os << "  " << kSubcommands[i].second << std::string(16 - kSubcommands[i].second.size(), ' ')
           << kSubcommandHelp[i] << '\n';
    }
    return os.str();
}

Command parse_args(std::span<const std::string> args) {
    if (args.empty()) throw UsageError("missing subcommand");

    Command cmd;
    CLI::App app{"contextclip", "contextclip"};
    app.require_subcommand(1, 1);
    app.set_help_flag();
    std::optional<std::string> config, out, corpus, checkpoint;
    for (std::size_t i = 0; i < kSubcommands.size(); ++i) {
        const auto& [kind, name] = kSubcommands[i];
        CLI::App* sub = app.add_subcommand(std::string(name), std::string(kSubcommandHelp[i]));
        sub->set_help_flag();
        sub->add_option("--config", config);
        sub->add_option("--seed", cmd.seed);
        sub->add_option("--out", out);
        sub->add_option("--corpus", corpus);
        sub->add_option("--checkpoint", checkpoint);
        sub->add_option("--alpha", cmd.alpha);
        sub->add_option("--epochs", cmd.epochs);
        sub->add_option("--k", cmd.k);
        sub->callback([&cmd, kind = kind] { cmd.kind = kind; });
    }

    std::vector<const char*> argv{"contextclip"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        throw UsageError(e.what());
    }
    if (config) cmd.config = *config;
    if (out) cmd.out = *out;
    if (corpus) cmd.corpus = *corpus;
    if (checkpoint) cmd.checkpoint = *checkpoint;
    return cmd;
}

int dispatch(const Command& cmd, std::ostream& out, std::ostream& err) {
    try {
        const Settings s = resolve_settings(cmd);
        switch (cmd.kind) {
            case Subcommand::gen_data: return run_gen_data(cmd, s, out);
            case Subcommand::train: return run_train(cmd, s, out);
            case Subcommand::fine_tune: return run_fine_tune(cmd, s, out);
            case Subcommand::grad_check: return run_grad_check(s, out);
            case Subcommand::eval_zeroshot: return run_eval_zeroshot(cmd, s, out);
            case Subcommand::eval_retrieve: return run_eval_retrieve(cmd, s, out);
            case Subcommand::project: return run_project(cmd, s, out);
            case Subcommand::compare: return run_compare(cmd, s, out);
        }
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    }
}

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
    if (std::any_of(args.begin(), args.end(), [](const std::string& a) { return a == "-h" || a == "--help"; })) {
        out << usage();
        return kExitOk;
    }
    Command cmd;
    try {
        cmd = parse_args(args);
    } catch (const UsageError& e) {
        if (!args.empty()) err << "error: " << e.what() << "\n\n";
        err << usage();
        return kExitUsage;
    }
    return dispatch(cmd, out, err);
}

}  // namespace contextclip::cli
