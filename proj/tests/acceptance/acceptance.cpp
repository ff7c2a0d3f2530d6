// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <cli.hpp>
#include <contextclip/evaluator.hpp>
#include <contextclip/grad_check.hpp>
#include <contextclip/losses.hpp>
#include <contextclip/text_format.hpp>
#include <contextclip/trainer.hpp>

#include "fixtures.hpp"
#include "oracle.hpp"

using namespace contextclip;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

struct Tally {
    int passed = 0;
    int failed = 0;

    void report(const std::string& id, const std::string& name, Outcome& o) {
        std::cout << (o.pass ? "PASS " : "FAIL ") << id << ' ' << name << ':' << o.detail.str() << std::endl;
        (o.pass ? passed : failed) += 1;
    }
};

std::string real(double v) { return format_real(v); }

std::vector<std::size_t> random_permutation(Rng& rng, std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
    return p;
}

Tensor unit(const Tensor& t) { return l2_normalize_rows(t, kNormGuard); }

// ---------------------------------------------------------------------------

void gradient_correctness(Tally& tally) {
    const auto start = Clock::now();
    Outcome o;
    const LossConfig cfg;
    double worst = 0.0;
    std::size_t checks = 0;
    for (std::size_t n : {2u, 4u, 8u}) {
        for (std::size_t d : {4u, 16u}) {
            for (std::uint64_t seed = 1; seed <= 10; ++seed) {
                Rng rng(seed * 1000 + n * 10 + d);
                const std::vector<double> x = fixtures::gaussian_vector(rng, 2 * n * d);
                const auto split = [n, d](const Tensor& t) {
                    return std::pair{unit(view(t, 0, {n, d})), unit(view(t, n * d, {n, d}))};
                };
                const std::vector<ScalarFunction> losses{
                    [&](const Tensor& t) {
                        const auto [u, v] = split(t);
                        return contrastive_loss(u, v, cfg);
                    },
                    [&](const Tensor& t) {
                        const auto [u, v] = split(t);
                        return contextual_loss(u, v, cfg);
                    },
                    [&](const Tensor& t) {
                        const auto [u, v] = split(t);
                        return total_loss(u, v, u, v, cfg).value;
                    },
                };
                for (const auto& f : losses) {
                    const double err = grad_check(f, x, 1e-5).max_rel_error;
                    worst = std::max(worst, err);
                    ++checks;
                    if (!(err < 1e-4)) o.require(false, "N=" + std::to_string(n) + " d=" + std::to_string(d));
                }
            }
        }
    }
    const double elapsed = seconds_since(start);
    o.detail << ' ' << checks << " checks, max relative error " << real(worst) << " (< 1e-4), " << real(elapsed)
             << " s";
    o.require(elapsed < 60.0, "runtime");
    tally.report("1", "gradient correctness", o);
}

double max_abs_diff(const Tensor& a, const oracle::Matrix& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i)
        for (std::size_t j = 0; j < b[i].size(); ++j) m = std::max(m, std::abs(a(i, j) - b[i][j]));
    return m;
}

void oracle_equivalence(Tally& tally) {
    const auto start = Clock::now();
    Outcome o;
    const LossConfig cfg;
    Rng rng(2);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.below(15), d = 4 + rng.below(29);
        const Tensor u = fixtures::gaussian_matrix(rng, n, d);
        const Tensor v = fixtures::gaussian_matrix(rng, n, d);
        const AffinityReport r = contextual_affinity(u, v, cfg);
        const auto ref = oracle::contextual(fixtures::to_rows(u), fixtures::to_rows(v), cfg.bandwidth, cfg.eps);
        worst = std::max({worst, max_abs_diff(r.distances, ref.d), max_abs_diff(r.normalized_distances, ref.d_norm),
                          max_abs_diff(r.affinities, ref.w), max_abs_diff(r.contextual, ref.cx),
                          std::abs(r.cx_scalar - ref.cx_scalar),
                          std::abs(contextual_loss(u, v, cfg).item() - ref.loss)});
    }
    const double elapsed = seconds_since(start);
    o.detail << " 100 instances, max deviation " << real(worst) << " (<= 1e-9), " << real(elapsed) << " s";
    o.require(worst <= 1e-9, "tolerance");
    o.require(elapsed < 10.0, "runtime");
    tally.report("2", "oracle equivalence", o);
}

void analytic_fixed_points(Tally& tally) {
    Outcome o;
    const LossConfig cfg;
    double clip_dev = 0.0, cx_dev = 0.0;
    for (std::size_t n : {2u, 4u, 8u, 32u}) {
        const Tensor same = Tensor::matrix(n, 3, [n] {
            std::vector<double> v;
            for (std::size_t i = 0; i < n; ++i) v.insert(v.end(), {0.6, 0.0, 0.8});
            return v;
        }());
        const Tensor other = Tensor::matrix(n, 3, [n] {
            std::vector<double> v;
            for (std::size_t i = 0; i < n; ++i) v.insert(v.end(), {0.0, 1.0, 0.0});
            return v;
        }());
        clip_dev = std::max(clip_dev, std::abs(contrastive_loss(same, same, cfg).item() - std::log(double(n))));
        cx_dev = std::max(cx_dev, std::abs(contextual_loss(same, other, cfg).item() - std::log(double(n))));
    }
    const Tensor eye = Tensor::matrix(4, 4, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
    const double identical = contextual_loss(eye, eye, cfg).item();
    const Tensor hand_u = Tensor::matrix(2, 2, {1, 0, 0, 1});
    const Tensor hand_v = Tensor::matrix(2, 2, {1, 0, 0.6, 0.8});
    const double hand = contextual_affinity(hand_u, hand_v, cfg).cx_scalar;
    o.detail << " |L_CLIP - ln N| " << real(clip_dev) << ", |L_CX - ln N| " << real(cx_dev)
             << ", identical sets L_CX " << real(identical) << ", hand case CX " << real(hand);
    o.require(clip_dev <= 1e-9, "uniform batch");
    o.require(cx_dev <= 1e-9, "equidistant sets");
    o.require(identical <= 1e-3, "identical sets");
    o.require(std::abs(hand - 0.9998) <= 1e-3, "hand case");
    tally.report("3", "analytic fixed points", o);
}

void invariants(Tally& tally) {
    Outcome o;
    const LossConfig cfg;
    Rng rng(4);
    const std::size_t instances = 60;

    double row_dev = 0.0, cx_min = 1.0, cx_max = 0.0, perm_dev = 0.0, linear_dev = 0.0;
    std::size_t scale_mismatch = 0;
    for (std::size_t trial = 0; trial < instances; ++trial) {
        const std::size_t n = 2 + rng.below(15), d = 2 + rng.below(31);
        const Tensor u = unit(fixtures::gaussian_matrix(rng, n, d));
        const Tensor v = unit(fixtures::gaussian_matrix(rng, n, d));

        const AffinityReport r = contextual_affinity(u, v, cfg);
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += r.contextual(i, j);
            row_dev = std::max(row_dev, std::abs(s - 1.0));
        }
        cx_min = std::min(cx_min, r.cx_scalar);
        cx_max = std::max(cx_max, r.cx_scalar);

        const auto perm = random_permutation(rng, n);
        const Tensor pu = fixtures::permute_rows(u, perm), pv = fixtures::permute_rows(v, perm);
        perm_dev = std::max({perm_dev,
                             std::abs(contrastive_loss(u, v, cfg).item() - contrastive_loss(pu, pv, cfg).item()),
                             std::abs(contextual_loss(u, v, cfg).item() - contextual_loss(pu, pv, cfg).item()),
                             std::abs(total_loss(u, v, u, v, cfg).breakdown.total -
                                      total_loss(pu, pv, pu, pv, cfg).breakdown.total)});

        const Tensor head = fixtures::gaussian_matrix(rng, d, 1 + rng.below(8));
        const Tensor x = fixtures::gaussian_matrix(rng, n, d), y = fixtures::gaussian_matrix(rng, n, d);
        const double a = rng.uniform(-2.0, 2.0), b = rng.uniform(-2.0, 2.0);
        const Tensor lhs = project(scale(x, a) + scale(y, b), head);
        const Tensor rhs = scale(project(x, head), a) + scale(project(y, head), b);
        for (std::size_t k = 0; k < lhs.size(); ++k) {
            linear_dev = std::max(linear_dev, std::abs(lhs.values()[k] - rhs.values()[k]));
        }
    }

    // Zero-shot argmax under positive rescaling of the class embeddings.
    const ModelDims dims = fixtures::small_dims();
    const CorpusSpec spec = fixtures::small_corpus_spec(32);
    const PairBatch batch = full_batch(generate(spec));
    for (std::size_t trial = 0; trial < instances; ++trial) {
        const ModelParams params = init_params(100 + trial, dims);
        const Tensor classes = build_class_embeddings(params, synthetic_prompts(spec));
        const double s = std::exp(rng.uniform(-8.0, 8.0));
        const auto a = zero_shot_classify(params, batch.images, batch.labels, classes, 1).predictions;
        const auto b = zero_shot_classify(params, batch.images, batch.labels, scale(classes, s), 1).predictions;
        if (a != b) ++scale_mismatch;
    }

    o.detail << ' ' << instances << " instances each: row-sum deviation " << real(row_dev) << ", CX in ["
             << real(cx_min) << ", " << real(cx_max) << "], permutation deviation " << real(perm_dev)
             << ", zero-shot mismatches " << scale_mismatch << ", projection linearity deviation " << real(linear_dev);
    o.require(row_dev <= 1e-9, "row-stochasticity");
    o.require(cx_min > 0.0 && cx_max <= 1.0, "CX range");
    o.require(perm_dev <= 1e-12, "permutation equivariance");
    o.require(scale_mismatch == 0, "zero-shot scale invariance");
    o.require(linear_dev <= 1e-12, "projection linearity");
    tally.report("4", "invariant suite", o);
}

// ---------------------------------------------------------------------------

struct TrainingRun {
    CorpusSpec spec;
    CorpusSplit split;
    TrainResult result;
    FineTuneResult fine_tuned;
    double recall_at_1 = 0.0;
    double paired_recall_at_1 = 0.0;
    double zero_shot_top1 = 0.0;
    double seconds = 0.0;
};

constexpr std::uint64_t kTrainingSeed = 7;
constexpr std::size_t kTrainingEpochs = 50;

TrainingRun run_training() {
    const auto start = Clock::now();
    TrainingRun run;
    run.spec.noise_sigma = 0.1;
    run.spec.seed = kTrainingSeed;
    run.split = split_corpus(generate(run.spec), 0.8);

    TrainConfig cfg;
    cfg.epochs = kTrainingEpochs;
    cfg.seed = kTrainingSeed;
    const ModelDims dims;
    run.result = train(cfg, run.split.train, init_params(kTrainingSeed, dims));
    const ModelParams& params = run.result.checkpoint.params;

    const PairCorpus& heldout = run.split.heldout;
    const auto ranks = ranked_ids(retrieve_all(params, heldout, heldout, 1));
    run.recall_at_1 = recall_at_k(ranks, same_class_truth(heldout), 1);
    run.paired_recall_at_1 = recall_at_k(ranks, paired_truth(heldout), 1);

    const Tensor classes = build_class_embeddings(params, synthetic_prompts(run.spec));
    const PairBatch batch = full_batch(heldout);
    run.zero_shot_top1 = zero_shot_classify(params, batch.images, batch.labels, classes, 1).top1;

    CorpusSpec clean = run.spec;
    clean.noise_sigma = 0.0;
    TrainConfig head_cfg;
    head_cfg.seed = kTrainingSeed;
    run.fine_tuned = fine_tune(run.result.checkpoint, generate(clean), head_cfg, clean.n_classes);
    run.seconds = seconds_since(start);
    return run;
}

void end_to_end(Tally& tally, const TrainingRun& run) {
    const auto& history = run.result.checkpoint.history;
    const double first = history.front().total, last = history.back().total;
    {
        Outcome o;
        o.detail << " epoch 1 loss " << real(first) << ", epoch " << history.size() << " loss " << real(last)
                 << ", ratio " << real(last / first) << " (< 0.5)";
        o.require(history.size() == kTrainingEpochs && last < 0.5 * first, "loss ratio");
        tally.report("5a", "training loss halves by epoch 50", o);
    }
    {
        Outcome o;
        o.detail << " recall@1 " << real(run.recall_at_1) << " (>= 0.8) on " << run.split.heldout.size()
                 << " held-out captions; own-pair recall@1 " << real(run.paired_recall_at_1);
        o.require(run.recall_at_1 >= 0.8, "recall");
        tally.report("5b", "held-out text-to-image recall@1", o);
    }
    {
        Outcome o;
        o.detail << " top-1 " << real(run.zero_shot_top1) << " (>= 0.9) over " << run.spec.n_classes << " classes";
        o.require(run.zero_shot_top1 >= 0.9, "accuracy");
        tally.report("5c", "zero-shot top-1", o);
    }
    {
        Outcome o;
        o.detail << " test top-1 " << real(run.fine_tuned.test.top1) << " on " << run.fine_tuned.test.count
                 << " items (== 1)";
        o.require(run.fine_tuned.test.top1 == 1.0, "accuracy");
        tally.report("5d", "fine-tune on the noiseless corpus", o);
    }
    {
        Outcome o;
        o.detail << ' ' << real(run.seconds) << " s (< 300)";
        o.require(run.seconds < 300.0, "runtime");
        tally.report("5e", "end-to-end runtime", o);
    }
}

std::string serialized(const Checkpoint& c) {
    std::ostringstream os;
    write_checkpoint(os, c);
    return os.str();
}

void determinism(Tally& tally, const TrainingRun& a, const TrainingRun& b) {
    Outcome o;
    const bool histories = a.result.checkpoint.history == b.result.checkpoint.history;
    const bool checkpoints = serialized(a.result.checkpoint) == serialized(b.result.checkpoint);
    const bool fine_tuned = serialized(a.fine_tuned.checkpoint) == serialized(b.fine_tuned.checkpoint);
    o.detail << " loss histories " << (histories ? "identical" : "differ") << ", checkpoints "
             << (checkpoints && fine_tuned ? "identical" : "differ");
    o.require(histories, "history");
    o.require(checkpoints && fine_tuned, "checkpoint");
    tally.report("6", "determinism", o);
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    return fields;
}

void comparison_harness(Tally& tally, const TrainingRun& run) {
    Outcome o;
    const fs::path dir = fs::temp_directory_path() / "contextclip_acceptance_compare";
    fs::remove_all(dir);
    fs::create_directories(dir);
    PairCorpus corpus = run.split.train;
    corpus.records.insert(corpus.records.end(), run.split.heldout.records.begin(), run.split.heldout.records.end());
    save_corpus(corpus, dir / "corpus.jsonl");

    std::ostringstream out, err;
    const std::vector<std::string> args{"compare",  "--corpus", (dir / "corpus.jsonl").string(),
                                        "--out",    (dir / "out").string(),
                                        "--seed",   std::to_string(kTrainingSeed),
                                        "--epochs", std::to_string(kTrainingEpochs),
                                        "--alpha",  "0.5"};
    const int code = cli::run(args, out, err);
    o.require(code == cli::kExitOk, "exit code " + std::to_string(code) + ": " + err.str());

    std::ifstream is(dir / "out" / "compare.csv");
    std::vector<std::vector<std::string>> rows;
    for (std::string line; std::getline(is, line);) rows.push_back(split_line(line));
    const std::vector<std::string> header{"metric", "alpha0", "alpha05"};
    const std::vector<std::string> metrics{"recall_at_1", "paired_recall_at_1", "zero_shot_top1", "zero_shot_top5"};
    bool well_formed = rows.size() == metrics.size() + 1 && rows.front() == header;
    for (std::size_t r = 1; well_formed && r < rows.size(); ++r) {
        well_formed = rows[r].size() == 3 && rows[r][0] == metrics[r - 1];
        for (std::size_t c = 1; well_formed && c < 3; ++c) {
            try {
                const double v = parse_real(rows[r][c]);
                well_formed = v >= 0.0 && v <= 1.0;
            } catch (const Error&) {
                well_formed = false;
            }
        }
        if (well_formed) {
            o.detail << ' ' << rows[r][0] << ' ' << rows[r][1] << '/' << rows[r][2];
        }
    }
    o.require(well_formed, "csv layout");
    tally.report("7", "comparison harness (alpha0/alpha05)", o);
    fs::remove_all(dir);
}

void round_trips(Tally& tally) {
    Outcome o;
    Rng rng(8);
    const fs::path dir = fs::temp_directory_path() / "contextclip_acceptance_roundtrip";
    fs::create_directories(dir);
    std::size_t corpus_ok = 0, checkpoint_ok = 0;
    for (std::size_t trial = 0; trial < 20; ++trial) {
        CorpusSpec spec = fixtures::small_corpus_spec(1 + rng.below(60), rng.uniform(0.0, 2.0), rng.below(1u << 30));
        const PairCorpus corpus = generate(spec);
        save_corpus(corpus, dir / "corpus.jsonl");
        if (load_corpus(dir / "corpus.jsonl") == corpus) ++corpus_ok;

        TrainConfig cfg;
        cfg.loss.alpha = rng.uniform();
        cfg.lr_image = rng.uniform() * 1e-2;
        cfg.seed = rng.below(1u << 30);
        Checkpoint ckpt = initial_checkpoint(init_params(cfg.seed, fixtures::small_dims()), cfg);
        for (std::size_t e = 1; e <= rng.below(4); ++e) {
            ckpt.history.push_back({e, rng.gaussian(), rng.gaussian(), rng.gaussian()});
            ckpt.epoch = e;
        }
        if (trial % 2 == 1) {
            ckpt.head = ClassifierHead{fixtures::gaussian_matrix(rng, ckpt.params.dims.d_e, 4),
                                       fixtures::gaussian_matrix(rng, 1, 4)};
        }
        save_checkpoint(ckpt, dir / "checkpoint.txt");
        const Checkpoint back = load_checkpoint(dir / "checkpoint.txt");
        bool same = serialized(back) == serialized(ckpt) && back.history == ckpt.history;
        for (const ParamInfo& info : kParamLayout) {
            same = same && (back.params.*info.member).storage() == (ckpt.params.*info.member).storage();
        }
        if (ckpt.head) {
            same = same && back.head && back.head->weight.storage() == ckpt.head->weight.storage() &&
                   back.head->bias.storage() == ckpt.head->bias.storage();
        }
        if (same) ++checkpoint_ok;
    }
    fs::remove_all(dir);
    o.detail << " corpus " << corpus_ok << "/20, checkpoint " << checkpoint_ok << "/20 bit-exact";
    o.require(corpus_ok == 20, "corpus");
    o.require(checkpoint_ok == 20, "checkpoint");
    tally.report("8", "round-trip fidelity", o);
}

}  // namespace

int main() {
    Tally tally;
    const auto guarded = [&tally](const std::string& id, const std::function<void()>& body) {
        try {
            body();
        } catch (const std::exception& e) {
            Outcome o;
            o.require(false, e.what());
            tally.report(id, "aborted", o);
        }
    };

    guarded("1", [&] { gradient_correctness(tally); });
    guarded("2", [&] { oracle_equivalence(tally); });
    guarded("3", [&] { analytic_fixed_points(tally); });
    guarded("4", [&] { invariants(tally); });
    guarded("5", [&] {
        const TrainingRun first = run_training();
        end_to_end(tally, first);
        guarded("6", [&] { determinism(tally, first, run_training()); });
        guarded("7", [&] { comparison_harness(tally, first); });
    });
    guarded("8", [&] { round_trips(tally); });

    std::cout << tally.passed << " passed, " << tally.failed << " failed" << std::endl;
    return tally.failed == 0 ? 0 : 1;
}
