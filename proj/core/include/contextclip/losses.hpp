#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "contextclip/tensor.hpp"

namespace contextclip {

struct LossConfig {
    double tau = 1.0;        // softmax temperature of the contrastive term
    double lambda = 0.75;    // weight of the image-to-text direction
    double alpha = 0.5;      // weight of the contextual term in the total loss
    double bandwidth = 0.5;  // h in w_ij = exp((1 - d~_ij) / h)
    double eps = 1e-5;       // stabilizer of the distance normalization
    // Average CX(U,V) and CX(V,U) losses instead of the one-directional form.
    bool symmetric_contextual = false;

    // Throws ConfigError when a bound is violated.
    void validate() const;
};

// Intermediate matrices of the contextual pipeline, detached from any tape.
// Rows index the U points (images), columns the V points (texts).
struct AffinityReport {
    Tensor distances;             // d_ij = 1 - cos(u_i, v_j)
    Tensor normalized_distances;  // d_ij / (min_k d_ik + eps)
    Tensor affinities;            // exp((1 - normalized) / h)
    Tensor contextual;            // affinities, each row normalized to sum 1
    double cx_scalar = 0.0;       // mean over columns of the column maximum
    std::vector<std::size_t> col_argmax;
};

struct LossBreakdown {
    double contrastive = 0.0;
    double contextual = 0.0;
    double total = 0.0;
};

struct TotalLoss {
    Tensor value;
    LossBreakdown breakdown;
};

// log(sum(exp(x))) along rows ([m,1]) or columns ([1,n]), shifted by the max.
Tensor log_sum_exp(const Tensor& logits, Axis axis);

// Entry (i,k) is the cosine similarity of row i of `a` and row k of `b`.
Tensor cosine_similarity_matrix(const Tensor& a, const Tensor& b);

// Bidirectional InfoNCE over a batch of matched pairs (row i of each input).
// Image-to-text terms carry weight lambda, text-to-image terms 1 - lambda.
Tensor contrastive_loss(const Tensor& image_embed, const Tensor& text_embed, const LossConfig& cfg);

// Contextual pipeline from an explicit distance matrix; the taped result keeps
// the CX matrix and the set similarity differentiable.
struct ContextualGraph {
    Tensor distances;
    Tensor normalized_distances;
    Tensor affinities;
    Tensor contextual;
    Tensor similarity;  // rank-0 CX(U,V)
};

ContextualGraph contextual_from_distances(const Tensor& distances, const LossConfig& cfg);
ContextualGraph contextual_graph(const Tensor& u_points, const Tensor& v_points, const LossConfig& cfg);

AffinityReport make_report(const ContextualGraph& graph);

AffinityReport contextual_affinity(const Tensor& u_points, const Tensor& v_points, const LossConfig& cfg);

// CX(U,V) recomputed from the report's CX matrix.
double contextual_similarity(const AffinityReport& report);

// -log CX(U,V), U = image points, V = text points.
Tensor contextual_loss(const Tensor& image_points, const Tensor& text_points, const LossConfig& cfg);

// L = L_contrastive(image_embed, text_embed) + alpha * L_contextual(image_points, text_points).
TotalLoss total_loss(const Tensor& image_embed, const Tensor& text_embed, const Tensor& image_points,
                     const Tensor& text_points, const LossConfig& cfg);

// Plain-text dump: a "# name" header line per section, comma-separated rows.
void write_affinity_report(std::ostream& os, const AffinityReport& report);

}  // namespace contextclip
