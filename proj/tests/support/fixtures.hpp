#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <contextclip/data.hpp>
#include <contextclip/encoders.hpp>
#include <contextclip/rng.hpp>
#include <contextclip/tensor.hpp>

#include "oracle.hpp"

namespace fixtures {

inline contextclip::Tensor gaussian_matrix(contextclip::Rng& rng, std::size_t rows, std::size_t cols,
                                           double sigma = 1.0) {
    std::vector<double> v(rows * cols);
    for (double& x : v) x = sigma * rng.gaussian();
    return contextclip::Tensor::matrix(rows, cols, std::move(v));
}

inline std::vector<double> gaussian_vector(contextclip::Rng& rng, std::size_t n, double sigma = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = sigma * rng.gaussian();
    return v;
}

inline oracle::Matrix to_rows(const contextclip::Tensor& t) {
    oracle::Matrix m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
    return m;
}

inline contextclip::Tensor from_rows(const oracle::Matrix& m) {
    std::vector<double> v;
    for (const auto& row : m) v.insert(v.end(), row.begin(), row.end());
    return contextclip::Tensor::matrix(m.size(), m.empty() ? 0 : m.front().size(), std::move(v));
}

// Rows of t reordered so that row i of the result is row perm[i] of t.
inline contextclip::Tensor permute_rows(const contextclip::Tensor& t, const std::vector<std::size_t>& perm) {
    std::vector<double> v;
    for (std::size_t i : perm)
        for (std::size_t j = 0; j < t.cols(); ++j) v.push_back(t(i, j));
    return contextclip::Tensor::matrix(t.rows(), t.cols(), std::move(v));
}

// Small model sizes that keep unit tests fast.
inline contextclip::ModelDims small_dims(std::size_t d_img = 16, std::size_t vocab = 32) {
    contextclip::ModelDims d;
    d.d_img = d_img;
    d.d_hid = 12;
    d.d_i = 10;
    d.d_emb = 8;
    d.d_t = 9;
    d.d_e = 6;
    d.vocab_size = vocab;
    return d;
}

// Corpus sized for small_dims: 4 classes of 4 tokens in a 32-token vocabulary.
inline contextclip::CorpusSpec small_corpus_spec(std::size_t n_pairs = 64, double sigma = 0.1,
                                                 std::uint64_t seed = 3) {
    contextclip::CorpusSpec s;
    s.n_classes = 4;
    s.n_pairs = n_pairs;
    s.d_img = 16;
    s.vocab_size = 32;
    s.tokens_per_caption = 6;
    s.class_token_block = 4;
    s.noise_sigma = sigma;
    s.seed = seed;
    return s;
}

}  // namespace fixtures
