#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "contextclip/tensor.hpp"

namespace contextclip {

// Toy dual-encoder sizes. The image path is d_img -> d_hid -> d_i (rectifier
// between), the text path is vocab_size x d_emb embeddings, mean-pooled, then
// d_emb -> d_t. Both project linearly into the shared d_e space.
struct ModelDims {
    std::size_t d_img = 64;
    std::size_t d_hid = 128;
    std::size_t d_i = 128;
    std::size_t d_emb = 32;
    std::size_t d_t = 48;
    std::size_t d_e = 32;
    std::size_t vocab_size = 128;

    void validate() const;
    friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

enum class Modality { image, text };

enum class ParamGroup { image_mlp, text_embed, text_mlp, proj_image, proj_text };

inline constexpr int kPadToken = 0;

// Guard used when embeddings are l2-normalized.
inline constexpr double kNormGuard = 1e-12;

struct ModelParams {
    ModelDims dims;
    Tensor image_w1;    // [d_img, d_hid]
    Tensor image_b1;    // [1, d_hid]
    Tensor image_w2;    // [d_hid, d_i]
    Tensor image_b2;    // [1, d_i]
    Tensor text_embed;  // [vocab_size, d_emb]
    Tensor text_w;      // [d_emb, d_t]
    Tensor text_b;      // [1, d_t]
    Tensor proj_image;  // W_I [d_i, d_e]
    Tensor proj_text;   // W_T [d_t, d_e]
};

struct ParamInfo {
    std::string_view name;
    Modality modality;
    ParamGroup group;
    bool is_bias;
    Tensor ModelParams::*member;
};

// Every parameter array in serialization order.
inline constexpr std::array<ParamInfo, 9> kParamLayout{{
    {"image_w1", Modality::image, ParamGroup::image_mlp, false, &ModelParams::image_w1},
    {"image_b1", Modality::image, ParamGroup::image_mlp, true, &ModelParams::image_b1},
    {"image_w2", Modality::image, ParamGroup::image_mlp, false, &ModelParams::image_w2},
    {"image_b2", Modality::image, ParamGroup::image_mlp, true, &ModelParams::image_b2},
    {"text_embed", Modality::text, ParamGroup::text_embed, false, &ModelParams::text_embed},
    {"text_w", Modality::text, ParamGroup::text_mlp, false, &ModelParams::text_w},
    {"text_b", Modality::text, ParamGroup::text_mlp, true, &ModelParams::text_b},
    {"proj_image", Modality::image, ParamGroup::proj_image, false, &ModelParams::proj_image},
    {"proj_text", Modality::text, ParamGroup::proj_text, false, &ModelParams::proj_text},
}};

// Expected shape of a parameter array under `dims`.
Shape param_shape(const ModelDims& dims, std::string_view name);

// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero, drawn in
// kParamLayout order from Rng(seed).
ModelParams init_params(std::uint64_t seed, const ModelDims& dims);

// Checks every array's shape against the dims record and that values are finite.
void validate_params(const ModelParams& params);

// Copy whose arrays are leaves of `tape`.
ModelParams on_tape(const ModelParams& params, Tape& tape);

Tensor encode_image(const ModelParams& params, const Tensor& images);
Tensor encode_text(const ModelParams& params, std::span<const std::vector<int>> tokens, int pad_id = kPadToken);

// Strictly linear: features . head.
Tensor project(const Tensor& features, const Tensor& head);

// encode -> project -> l2-normalize rows.
Tensor embed_images(const ModelParams& params, const Tensor& images);
Tensor embed_texts(const ModelParams& params, std::span<const std::vector<int>> tokens);

}  // namespace contextclip
