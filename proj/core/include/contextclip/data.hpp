#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "contextclip/tensor.hpp"

namespace contextclip {

// Vocabulary layout: 0 is padding, 1..4 are stop tokens shared by every
// class, then one contiguous block of `class_token_block` ids per class.
inline constexpr int kFirstStopToken = 1;
inline constexpr int kStopTokenCount = 4;
inline constexpr int kReservedTokens = 1 + kStopTokenCount;

struct CorpusSpec {
    std::size_t n_classes = 8;
    std::size_t n_pairs = 640;
    std::size_t d_img = 64;
    std::size_t vocab_size = 128;
    std::size_t tokens_per_caption = 32;
    std::size_t class_token_block = 8;
    double noise_sigma = 0.1;
    std::uint64_t seed = 7;

    void validate() const;
};

// First id of a class's token block.
int class_block_start(std::size_t class_id, std::size_t class_token_block);

struct PairRecord {
    std::int64_t id = 0;
    std::int64_t class_id = 0;
    std::vector<double> image;
    std::vector<int> tokens;
    std::string caption;

    friend bool operator==(const PairRecord&, const PairRecord&) = default;
};

struct PairCorpus {
    std::vector<PairRecord> records;

    std::size_t size() const noexcept { return records.size(); }
    bool empty() const noexcept { return records.empty(); }
    // 1 + largest class id, 0 when empty.
    std::size_t class_count() const;
    // Image width, 0 when empty. Throws ShapeError on ragged images.
    std::size_t image_width() const;

    friend bool operator==(const PairCorpus&, const PairCorpus&) = default;
};

// Prototype per class, then per pair (round-robin classes) the image noise
// followed by the caption tokens, all drawn from one Rng(seed) in that order.
// Tokens are uniform over the class block plus the stop-token pool.
PairCorpus generate(const CorpusSpec& spec);

// The per-class unit prototypes generate() draws first.
std::vector<std::vector<double>> class_prototypes(const CorpusSpec& spec);

// One JSON object per line: id, class, image, tokens, caption, in that order.
void write_corpus(std::ostream& os, const PairCorpus& corpus);
PairCorpus read_corpus(std::istream& is);
void save_corpus(const PairCorpus& corpus, const std::filesystem::path& path);
PairCorpus load_corpus(const std::filesystem::path& path);

// Caption text used for a token list of a class.
std::string caption_for(std::int64_t class_id, std::span<const int> tokens);

struct PairBatch {
    std::vector<std::size_t> indices;  // positions in the corpus
    Tensor images;                     // [n, d_img]
    std::vector<std::vector<int>> tokens;
    std::vector<std::int64_t> labels;
    std::vector<std::int64_t> ids;

    std::size_t size() const noexcept { return indices.size(); }
};

// Batch holding the given corpus positions, in that order.
PairBatch make_batch(const PairCorpus& corpus, std::span<const std::size_t> indices);

// Whole corpus as one batch in corpus order.
PairBatch full_batch(const PairCorpus& corpus);

// Partition of the corpus into consecutive batches of `batch_size` (the last
// one may be short). With `shuffle`, the order is a Fisher-Yates permutation
// drawn from Rng(seed).
std::vector<PairBatch> batch_iter(const PairCorpus& corpus, std::size_t batch_size, std::uint64_t seed,
                                  bool shuffle);

struct CorpusSplit {
    PairCorpus train;
    PairCorpus heldout;
};

// First floor(n * train_fraction) records train, the rest are held out.
CorpusSplit split_corpus(const PairCorpus& corpus, double train_fraction);

// Fisher-Yates permutation of 0..n-1 drawn from Rng(seed).
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

}  // namespace contextclip
