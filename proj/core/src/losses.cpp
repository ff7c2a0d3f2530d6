#include "contextclip/losses.hpp"

#include <cmath>
#include <ostream>
#include <string>

#include "contextclip/text_format.hpp"

namespace contextclip {

void LossConfig::validate() const {
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0,1]");
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
    if (!(bandwidth > 0.0)) throw ConfigError("bandwidth h must be > 0");
    if (!(eps > 0.0)) throw ConfigError("eps must be > 0");
}

Tensor cosine_similarity_matrix(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
        throw ShapeError("cosine_similarity_matrix: dimension mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
    return matmul(unit_rows(a), transpose(unit_rows(b)));
}

Tensor log_sum_exp(const Tensor& logits, Axis axis) {
    const Tensor shift = reduce(logits, axis, ReduceKind::max);
    return log(sum(exp(logits - shift), axis)) + shift;
}

namespace {

Tensor diagonal_mask(std::size_t n) {
    std::vector<double> mask(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) mask[i * n + i] = 1.0;
    return Tensor::matrix(n, n, std::move(mask));
}

}  // namespace

Tensor contrastive_loss(const Tensor& image_embed, const Tensor& text_embed, const LossConfig& cfg) {
    cfg.validate();
    if (image_embed.rank() != 2 || image_embed.rows() == 0 || image_embed.shape() != text_embed.shape()) {
        throw ShapeError("contrastive_loss: need two non-empty [N,d] batches of equal shape, got " +
                         shape_string(image_embed.shape()) + " and " + shape_string(text_embed.shape()));
    }
    const std::size_t n = image_embed.rows();
    const Tensor logits = scale(cosine_similarity_matrix(image_embed, text_embed), 1.0 / cfg.tau);
    const Tensor eye = diagonal_mask(n);
    const Tensor matched_rows = sum(logits * eye, Axis::rows);  // [N,1]
    const Tensor matched_cols = sum(logits * eye, Axis::cols);  // [1,N]
    // -log softmax of the matched entry, image->text along rows, text->image along columns.
    const Tensor image_to_text = log_sum_exp(logits, Axis::rows) - matched_rows;
    const Tensor text_to_image = log_sum_exp(logits, Axis::cols) - matched_cols;
    return scale(sum(image_to_text), cfg.lambda / static_cast<double>(n)) +
           scale(sum(text_to_image), (1.0 - cfg.lambda) / static_cast<double>(n));
}

ContextualGraph contextual_from_distances(const Tensor& distances, const LossConfig& cfg) {
    cfg.validate();
    if (distances.rank() != 2 || distances.rows() < 2 || distances.rows() != distances.cols()) {
        throw ShapeError("contextual pipeline needs an N x N distance matrix with N >= 2, got " +
                         shape_string(distances.shape()));
    }
    ContextualGraph g;
    g.distances = distances;
    const Tensor row_min = reduce(distances, Axis::rows, ReduceKind::min);
    g.normalized_distances = distances / offset(row_min, cfg.eps);
    g.affinities = exp(scale(offset(-g.normalized_distances, 1.0), 1.0 / cfg.bandwidth));
    g.contextual = g.affinities / sum(g.affinities, Axis::rows);
    g.similarity = mean(reduce(g.contextual, Axis::cols, ReduceKind::max));
    return g;
}

ContextualGraph contextual_graph(const Tensor& u_points, const Tensor& v_points, const LossConfig& cfg) {
    if (u_points.shape() != v_points.shape()) {
        throw ShapeError("contextual pipeline needs point sets of equal shape, got " +
                         shape_string(u_points.shape()) + " and " + shape_string(v_points.shape()));
    }
    const Tensor distances = offset(-cosine_similarity_matrix(u_points, v_points), 1.0);
    return contextual_from_distances(distances, cfg);
}

AffinityReport make_report(const ContextualGraph& graph) {
    AffinityReport r;
    r.distances = graph.distances.detached();
    r.normalized_distances = graph.normalized_distances.detached();
    r.affinities = graph.affinities.detached();
    r.contextual = graph.contextual.detached();
    r.cx_scalar = graph.similarity.item();
    const std::size_t n = r.contextual.rows();
    r.col_argmax.assign(n, 0);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 1; i < n; ++i) {
            if (r.contextual(i, j) > r.contextual(r.col_argmax[j], j)) r.col_argmax[j] = i;
        }
    }
    return r;
}

AffinityReport contextual_affinity(const Tensor& u_points, const Tensor& v_points, const LossConfig& cfg) {
    return make_report(contextual_graph(u_points.detached(), v_points.detached(), cfg));
}

double contextual_similarity(const AffinityReport& report) {
    const Tensor& cx = report.contextual;
    const std::size_t rows = cx.rows(), cols = cx.cols();
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
        double best = cx(0, j);
        for (std::size_t i = 1; i < rows; ++i) best = std::max(best, cx(i, j));
        total += best;
    }
    return total / static_cast<double>(cols);
}

Tensor contextual_loss(const Tensor& image_points, const Tensor& text_points, const LossConfig& cfg) {
    const Tensor forward = -log(contextual_graph(image_points, text_points, cfg).similarity);
    if (!cfg.symmetric_contextual) return forward;
    const Tensor reverse = -log(contextual_graph(text_points, image_points, cfg).similarity);
    return scale(forward + reverse, 0.5);
}

TotalLoss total_loss(const Tensor& image_embed, const Tensor& text_embed, const Tensor& image_points,
                     const Tensor& text_points, const LossConfig& cfg) {
    const std::size_t n = image_embed.rows();
    if (image_embed.rank() != 2 || text_embed.rows() != n || image_points.rows() != n || text_points.rows() != n) {
        throw ShapeError("total_loss: batch-size mismatch across the four inputs");
    }
    const Tensor contrastive = contrastive_loss(image_embed, text_embed, cfg);
    const Tensor contextual = contextual_loss(image_points, text_points, cfg);
    TotalLoss out{contrastive + scale(contextual, cfg.alpha), {}};
    out.breakdown = {contrastive.item(), contextual.item(), out.value.item()};
    return out;
}

namespace {

void write_real(std::ostream& os, double v) { os << format_real(v); }

void write_matrix(std::ostream& os, const char* name, const Tensor& m) {
    os << "# " << name << '\n';
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (j) os << ',';
            write_real(os, m(i, j));
        }
        os << '\n';
    }
}

}  // namespace

void write_affinity_report(std::ostream& os, const AffinityReport& report) {
    write_matrix(os, "D", report.distances);
    write_matrix(os, "D_norm", report.normalized_distances);
    write_matrix(os, "W", report.affinities);
    write_matrix(os, "CX", report.contextual);
    os << "# cx_scalar\n";
    write_real(os, report.cx_scalar);
    os << "\n# col_argmax\n";
    for (std::size_t j = 0; j < report.col_argmax.size(); ++j) {
        if (j) os << ',';
        os << report.col_argmax[j];
    }
    os << '\n';
}

}  // namespace contextclip
