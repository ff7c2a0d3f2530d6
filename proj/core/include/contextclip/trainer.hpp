#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "contextclip/data.hpp"
#include "contextclip/encoders.hpp"
#include "contextclip/losses.hpp"

namespace contextclip {

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double lr_image = 1e-4;  // image encoder, W_I and any classifier head
    double lr_text = 1e-6;   // text embeddings, text layer, W_T
    double weight_decay = 1e-3;
    // false: decay is added to the gradient before the Adam moments.
    bool decoupled_weight_decay = false;
    // false: the contextual term is left out of the graph entirely.
    bool use_contextual = true;
    bool shuffle = true;
    LossConfig loss;
    std::uint64_t seed = 0;

    void validate() const;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t t = 0;
};

// One Adam update of every array in `params`, in place. The state is sized
// on first use. Coupled decay uses g + wd * theta as the gradient; decoupled
// decay subtracts lr * wd * theta after the Adam step.
void adam_step(std::span<std::vector<double>> params, std::span<const std::vector<double>> grads,
               AdamState& state, double lr, double weight_decay, bool decoupled = false);

struct EpochLoss {
    std::size_t epoch = 0;  // 1-based
    double total = 0.0;
    double contrastive = 0.0;
    double contextual = 0.0;

    friend bool operator==(const EpochLoss&, const EpochLoss&) = default;
};

struct BatchLoss {
    std::size_t epoch = 0;
    std::size_t batch = 0;
    LossBreakdown loss;
};

struct LossReport {
    std::vector<EpochLoss> epochs;
    std::vector<BatchLoss> batches;
};

// Linear classifier on l2-normalized image embeddings, used by fine_tune.
struct ClassifierHead {
    Tensor weight;  // [d_e, n_classes]
    Tensor bias;    // [1, n_classes]
};

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    int format_version = kCheckpointVersion;
    ModelParams params;
    TrainConfig config;
    std::size_t epoch = 0;
    std::vector<EpochLoss> history;
    std::optional<ClassifierHead> head;
};

// Raised when a batch produces a non-finite value or gradient.
class TrainingError : public NumericError {
  public:
    TrainingError(std::size_t epoch, std::size_t batch, const std::string& what);
    std::size_t epoch() const noexcept { return epoch_; }
    std::size_t batch() const noexcept { return batch_; }

  private:
    std::size_t epoch_;
    std::size_t batch_;
};

struct TrainResult {
    Checkpoint checkpoint;
    LossReport report;
};

// Throws DataError when the corpus is empty or does not fit the model.
void check_compatible(const PairCorpus& corpus, const ModelDims& dims);

// Per batch: encode both modalities, project through W_I / W_T, normalize rows,
// contrastive loss on the normalized embeddings plus alpha times the
// contextual loss on the same point sets, backward, then one Adam step for
// the image-side arrays at lr_image and one for the text-side arrays at lr_text.
TrainResult train(const TrainConfig& cfg, const PairCorpus& corpus, const ModelParams& initial);

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
};

// Shuffled 80/10/10 partition of n items.
SplitIndices fine_tune_split(std::size_t n, std::uint64_t seed);

struct Accuracy {
    double top1 = 0.0;
    double top5 = 0.0;
    std::size_t count = 0;
};

struct FineTuneResult {
    Checkpoint checkpoint;
    Accuracy validation;
    Accuracy test;
    std::vector<double> epoch_loss;  // mean cross-entropy per epoch
};

// Attaches a zero-initialized linear head on the image embeddings and trains
// image encoder, W_I and head end-to-end with softmax cross-entropy. Accuracy
// is measured on the held-out test split; ties favour the lowest class id.
FineTuneResult fine_tune(const Checkpoint& ckpt, const PairCorpus& labeled, const TrainConfig& cfg,
                         std::size_t n_classes);

// Top-1/top-5 of the head on a batch of images.
Accuracy classify_accuracy(const ModelParams& params, const ClassifierHead& head, const PairBatch& batch);

Checkpoint initial_checkpoint(const ModelParams& params, const TrainConfig& cfg);

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// "epoch,L,L_CLIP,L_CX" header then one row per epoch.
void write_loss_history(std::ostream& os, std::span<const EpochLoss> history);

}  // namespace contextclip
