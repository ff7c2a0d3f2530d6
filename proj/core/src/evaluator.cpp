#include "contextclip/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>

#include "contextclip/losses.hpp"
#include "contextclip/text_format.hpp"

namespace contextclip {

std::vector<ClassPrompt> synthetic_prompts(const CorpusSpec& spec) {
    spec.validate();
    std::vector<ClassPrompt> prompts;
    for (std::size_t c = 0; c < spec.n_classes; ++c) {
        ClassPrompt p;
        p.class_id = static_cast<std::int64_t>(c);
        const int start = class_block_start(c, spec.class_token_block);
        for (int k = 0; k < kStopTokenCount; ++k) {
            std::vector<int> tmpl;
            tmpl.push_back(kFirstStopToken + k);
            for (std::size_t b = 0; b < spec.class_token_block; ++b) tmpl.push_back(start + static_cast<int>(b));
            tmpl.push_back(kFirstStopToken + (k + 1) % kStopTokenCount);
            p.templates.push_back(std::move(tmpl));
        }
        prompts.push_back(std::move(p));
    }
    return prompts;
}

Tensor build_class_embeddings(const ModelParams& params, std::span<const ClassPrompt> prompts) {
    const std::size_t d_e = params.dims.d_e;
    std::vector<double> out;
    out.reserve(prompts.size() * d_e);
    for (std::size_t c = 0; c < prompts.size(); ++c) {
        const ClassPrompt& p = prompts[c];
        if (p.class_id != static_cast<std::int64_t>(c)) {
            throw ConfigError("prompt " + std::to_string(c) + " carries class id " + std::to_string(p.class_id));
        }
        if (p.templates.empty()) {
            throw ConfigError("class " + std::to_string(c) + " has no prompt templates");
        }
        const Tensor embedded = embed_texts(params, p.templates);
        const Tensor averaged = mean(embedded, Axis::cols);
        double norm = 0.0;
        for (double v : averaged.values()) norm += v * v;
        norm = std::sqrt(norm);
        if (norm < 1e-12) {
            throw NumericError("class " + std::to_string(c) + ": template embeddings average to the zero vector");
        }
        const Tensor unit = unit_rows(averaged);
        out.insert(out.end(), unit.values().begin(), unit.values().end());
    }
    return Tensor::matrix(prompts.size(), d_e, std::move(out));
}

EvalResult classify_scores(const Tensor& scores, std::span<const std::int64_t> labels, std::size_t k) {
    const std::size_t n = scores.rows(), c = scores.cols();
    if (labels.size() != n) throw ShapeError("classify: one label per item required");
    if (k < 1 || k > c) throw ConfigError("classify: k must lie in [1, number of classes]");
    EvalResult r;
    r.k = k;
    r.confusion.assign(c, std::vector<std::size_t>(c, 0));
    const std::size_t k5 = std::min<std::size_t>(5, c);
    std::size_t hit1 = 0, hit5 = 0, hitk = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
            throw DataError("label " + std::to_string(labels[i]) + " outside the class range");
        }
        const auto label = static_cast<std::size_t>(labels[i]);
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j) {
            if (scores(i, j) > scores(i, best)) best = j;
        }
        const double own = scores(i, label);
        std::size_t rank = 0;
        for (std::size_t j = 0; j < c; ++j) {
            if (scores(i, j) > own || (scores(i, j) == own && j < label)) ++rank;
        }
        r.predictions.push_back(best);
        r.confusion[label][best] += 1;
        hit1 += rank < 1;
        hit5 += rank < k5;
        hitk += rank < k;
    }
    const double denom = n == 0 ? 1.0 : static_cast<double>(n);
    r.top1 = static_cast<double>(hit1) / denom;
    r.top5 = static_cast<double>(hit5) / denom;
    r.topk = static_cast<double>(hitk) / denom;
    return r;
}

EvalResult zero_shot_classify(const ModelParams& params, const Tensor& images, std::span<const std::int64_t> labels,
                              const Tensor& class_embeds, std::size_t k) {
    if (class_embeds.rank() != 2 || class_embeds.cols() != params.dims.d_e) {
        throw ShapeError("zero_shot_classify: class embeddings must be [C," + std::to_string(params.dims.d_e) +
                         "], got " + shape_string(class_embeds.shape()));
    }
    const Tensor image_e = embed_images(params, images);
    if (image_e.rows() == 0) return classify_scores(Tensor::zeros({0, class_embeds.rows()}), labels, k);
    return classify_scores(cosine_similarity_matrix(image_e, class_embeds), labels, k);
}

std::vector<std::vector<RetrievalHit>> retrieve_all(const ModelParams& params, const PairCorpus& queries,
                                                    const PairCorpus& gallery, std::size_t k) {
    if (gallery.empty()) throw DataError("retrieve: empty corpus");
    if (k > gallery.size()) throw ConfigError("retrieve: k exceeds the corpus size");
    std::vector<std::vector<RetrievalHit>> out(queries.size());
    if (queries.empty() || k == 0) return out;

    std::vector<std::vector<int>> tokens;
    for (const auto& r : queries.records) tokens.push_back(r.tokens);
    const Tensor text_e = embed_texts(params, tokens);
    const Tensor image_e = embed_images(params, full_batch(gallery).images);
    const Tensor scores = cosine_similarity_matrix(text_e, image_e);

    std::vector<std::size_t> order(gallery.size());
    for (std::size_t q = 0; q < queries.size(); ++q) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        auto better = [&](std::size_t a, std::size_t b) {
            const double sa = scores(q, a), sb = scores(q, b);
            if (sa != sb) return sa > sb;
            return gallery.records[a].id < gallery.records[b].id;
        };
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
        for (std::size_t r = 0; r < k; ++r) {
            out[q].push_back({gallery.records[order[r]].id, scores(q, order[r])});
        }
    }
    return out;
}

std::vector<RetrievalHit> retrieve(const ModelParams& params, std::span<const int> query_tokens,
                                   const PairCorpus& corpus, std::size_t k) {
    PairCorpus query;
    PairRecord r;
    r.tokens.assign(query_tokens.begin(), query_tokens.end());
    query.records.push_back(std::move(r));
    return retrieve_all(params, query, corpus, k).front();
}

double recall_at_k(std::span<const std::vector<std::int64_t>> rankings, std::span<const std::set<std::int64_t>> truth,
                   std::size_t k) {
    if (rankings.size() != truth.size()) throw ShapeError("recall_at_k: rankings and truth differ in length");
    if (rankings.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t q = 0; q < rankings.size(); ++q) {
        const std::size_t depth = std::min(k, rankings[q].size());
        for (std::size_t r = 0; r < depth; ++r) {
            if (truth[q].contains(rankings[q][r])) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(rankings.size());
}

std::vector<std::vector<std::int64_t>> ranked_ids(std::span<const std::vector<RetrievalHit>> hits) {
    std::vector<std::vector<std::int64_t>> out;
    out.reserve(hits.size());
    for (const auto& list : hits) {
        std::vector<std::int64_t> ids;
        for (const auto& h : list) ids.push_back(h.id);
        out.push_back(std::move(ids));
    }
    return out;
}

std::vector<std::set<std::int64_t>> same_class_truth(const PairCorpus& corpus) {
    std::map<std::int64_t, std::set<std::int64_t>> by_class;
    for (const auto& r : corpus.records) by_class[r.class_id].insert(r.id);
    std::vector<std::set<std::int64_t>> out;
    for (const auto& r : corpus.records) out.push_back(by_class[r.class_id]);
    return out;
}

std::vector<std::set<std::int64_t>> paired_truth(const PairCorpus& corpus) {
    std::vector<std::set<std::int64_t>> out;
    for (const auto& r : corpus.records) out.push_back({r.id});
    return out;
}

// ---------------------------------------------------------------------------
// Principal components

namespace {

using Matrix = std::vector<std::vector<double>>;

std::vector<double> mat_vec(const Matrix& m, const std::vector<double>& v) {
    std::vector<double> out(m.size(), 0.0);
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = 0; j < v.size(); ++j) out[i] += m[i][j] * v[j];
    return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void remove_components(std::vector<double>& v, const Matrix& basis) {
    for (const auto& u : basis) {
        const double c = dot(v, u);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * u[i];
    }
}

// Returns false when v is (numerically) zero.
bool normalize(std::vector<double>& v) {
    const double n = std::sqrt(dot(v, v));
    if (!(n > 1e-300)) return false;
    for (double& x : v) x /= n;
    return true;
}

void fix_sign(std::vector<double>& v) {
    for (double x : v) {
        if (std::abs(x) > 1e-12) {
            if (x < 0) {
                for (double& y : v) y = -y;
            }
            return;
        }
    }
}

}  // namespace

PrincipalAxes principal_axes(const Tensor& data, std::size_t count) {
    if (data.rank() != 2 || data.rows() < 2) {
        throw ShapeError("principal axes need at least 2 rows, got shape " + shape_string(data.shape()));
    }
    const std::size_t n = data.rows(), d = data.cols();
    PrincipalAxes out;
    out.mean.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out.mean[j] += data(i, j);
    for (double& m : out.mean) m /= static_cast<double>(n);

    Matrix cov(d, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < d; ++a) {
            const double xa = data(i, a) - out.mean[a];
            for (std::size_t b = 0; b < d; ++b) cov[a][b] += xa * (data(i, b) - out.mean[b]);
        }
    double trace = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = 0; b < d; ++b) cov[a][b] /= static_cast<double>(n - 1);
        trace += cov[a][a];
    }

    for (std::size_t axis = 0; axis < count; ++axis) {
        std::vector<double> v(d, 1.0);
        remove_components(v, out.axes);
        if (!normalize(v)) {
            // The all-ones start lies in the span of earlier axes; use the first
            // coordinate direction that does not.
            for (std::size_t j = 0; j < d; ++j) {
                v.assign(d, 0.0);
                v[j] = 1.0;
                remove_components(v, out.axes);
                if (normalize(v)) break;
            }
        }
        double lambda = 0.0;
        for (std::size_t it = 0; it < kPowerMaxIterations; ++it) {
            std::vector<double> w = mat_vec(cov, v);
            remove_components(w, out.axes);  // deflation
            const double norm = std::sqrt(dot(w, w));
            if (norm <= 1e-14 * std::max(trace, 1e-300)) {
                lambda = 0.0;
                break;
            }
            for (double& x : w) x /= norm;
            double delta = 0.0;
            for (std::size_t j = 0; j < d; ++j) delta = std::max(delta, std::abs(w[j] - v[j]));
            v = std::move(w);
            lambda = norm;
            if (delta < kPowerTolerance) break;
        }
        fix_sign(v);
        out.variances.push_back(lambda);
        out.axes.push_back(std::move(v));
    }
    return out;
}

Tensor project_2d(const Tensor& embeddings) {
    if (embeddings.rank() != 2 || embeddings.rows() < 2) {
        throw ShapeError("project_2d needs at least 2 points");
    }
    const std::size_t n = embeddings.rows(), d = embeddings.cols();
    const PrincipalAxes pa = principal_axes(embeddings, std::min<std::size_t>(2, d));
    std::vector<double> coords(n * 2, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < pa.axes.size(); ++a) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += (embeddings(i, j) - pa.mean[j]) * pa.axes[a][j];
            coords[i * 2 + a] = s;
        }
    return Tensor::matrix(n, 2, std::move(coords));
}

void write_metrics_csv(std::ostream& os, std::span<const std::pair<std::string, double>> metrics) {
    os << "metric,value\n";
    for (const auto& [name, value] : metrics) os << name << ',' << format_real(value) << '\n';
}

void write_projection_csv(std::ostream& os, std::span<const std::int64_t> ids, std::span<const std::int64_t> classes,
                          const Tensor& coords) {
    if (ids.size() != coords.rows() || classes.size() != coords.rows()) {
        throw ShapeError("write_projection_csv: ids, classes and coordinates differ in length");
    }
    os << "id,class,x,y\n";
    for (std::size_t i = 0; i < ids.size(); ++i) {
        os << ids[i] << ',' << classes[i] << ',' << format_real(coords(i, 0)) << ',' << format_real(coords(i, 1))
           << '\n';
    }
}

}  // namespace contextclip
