#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "contextclip/data.hpp"
#include "contextclip/encoders.hpp"

namespace contextclip {

// Token-sequence templates standing in for "a photo of the {class}" prompts.
struct ClassPrompt {
    std::int64_t class_id = 0;
    std::vector<std::vector<int>> templates;
};

// One template per stop token: the class's whole token block framed by two
// stop tokens, [s_k, block..., s_(k+1)].
std::vector<ClassPrompt> synthetic_prompts(const CorpusSpec& spec);

// Row c: each template embedded and l2-normalized, averaged, normalized again.
// prompts[c].class_id must equal c.
Tensor build_class_embeddings(const ModelParams& params, std::span<const ClassPrompt> prompts);

struct EvalResult {
    double top1 = 0.0;
    double top5 = 0.0;  // top-min(5, C)
    std::size_t k = 1;
    double topk = 0.0;
    std::vector<std::size_t> predictions;            // argmax class per item
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

// Cosine similarity of each normalized image embedding against every class
// embedding; ties are broken toward the lowest class id.
EvalResult zero_shot_classify(const ModelParams& params, const Tensor& images, std::span<const std::int64_t> labels,
                              const Tensor& class_embeds, std::size_t k);

// Scores already computed, [N, C]: ranking and accuracy only.
EvalResult classify_scores(const Tensor& scores, std::span<const std::int64_t> labels, std::size_t k);

struct RetrievalHit {
    std::int64_t id = 0;
    double score = 0.0;

    friend bool operator==(const RetrievalHit&, const RetrievalHit&) = default;
};

// Corpus images ranked by cosine similarity to the query caption, highest
// first, equal scores by ascending id.
std::vector<RetrievalHit> retrieve(const ModelParams& params, std::span<const int> query_tokens,
                                   const PairCorpus& corpus, std::size_t k);

// retrieve() for every caption of `queries` against the images of `gallery`.
std::vector<std::vector<RetrievalHit>> retrieve_all(const ModelParams& params, const PairCorpus& queries,
                                                    const PairCorpus& gallery, std::size_t k);

// Fraction of queries whose top-k ids intersect the relevant set.
double recall_at_k(std::span<const std::vector<std::int64_t>> rankings,
                   std::span<const std::set<std::int64_t>> truth, std::size_t k);

std::vector<std::vector<std::int64_t>> ranked_ids(std::span<const std::vector<RetrievalHit>> hits);

// For each record, the ids of all records sharing its class.
std::vector<std::set<std::int64_t>> same_class_truth(const PairCorpus& corpus);

// For each record, its own id.
std::vector<std::set<std::int64_t>> paired_truth(const PairCorpus& corpus);

struct PrincipalAxes {
    std::vector<double> mean;
    std::vector<std::vector<double>> axes;  // unit vectors, first nonzero loading positive
    std::vector<double> variances;          // eigenvalues of the sample covariance
};

inline constexpr double kPowerTolerance = 1e-10;
inline constexpr std::size_t kPowerMaxIterations = 10000;

// Top principal axes by power iteration with deflation, from an all-ones start.
PrincipalAxes principal_axes(const Tensor& data, std::size_t count);

// Mean-centered data projected onto the top two principal axes, [N, 2].
Tensor project_2d(const Tensor& embeddings);

void write_metrics_csv(std::ostream& os, std::span<const std::pair<std::string, double>> metrics);
void write_projection_csv(std::ostream& os, std::span<const std::int64_t> ids, std::span<const std::int64_t> classes,
                          const Tensor& coords);

}  // namespace contextclip
