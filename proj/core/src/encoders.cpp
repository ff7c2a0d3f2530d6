#include "contextclip/encoders.hpp"

#include <cmath>
#include <string>

#include "contextclip/rng.hpp"

namespace contextclip {

void ModelDims::validate() const {
    for (std::size_t d : {d_img, d_hid, d_i, d_emb, d_t, d_e, vocab_size}) {
        if (d == 0) throw ConfigError("model dimensions must all be >= 1");
    }
}

Shape param_shape(const ModelDims& d, std::string_view name) {
    if (name == "image_w1") return {d.d_img, d.d_hid};
    if (name == "image_b1") return {1, d.d_hid};
    if (name == "image_w2") return {d.d_hid, d.d_i};
    if (name == "image_b2") return {1, d.d_i};
    if (name == "text_embed") return {d.vocab_size, d.d_emb};
    if (name == "text_w") return {d.d_emb, d.d_t};
    if (name == "text_b") return {1, d.d_t};
    if (name == "proj_image") return {d.d_i, d.d_e};
    if (name == "proj_text") return {d.d_t, d.d_e};
    throw ConfigError("unknown parameter " + std::string(name));
}

ModelParams init_params(std::uint64_t seed, const ModelDims& dims) {
    dims.validate();
    ModelParams p;
    p.dims = dims;
    Rng rng(seed);
    for (const ParamInfo& info : kParamLayout) {
        Shape shape = param_shape(dims, info.name);
        std::vector<double> values(shape_size(shape), 0.0);
        if (!info.is_bias) {
            const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
            for (double& v : values) v = rng.uniform(-limit, limit);
        }
        p.*info.member = Tensor(std::move(shape), std::move(values));
    }
    return p;
}

void validate_params(const ModelParams& params) {
    params.dims.validate();
    for (const ParamInfo& info : kParamLayout) {
        const Tensor& t = params.*info.member;
        if (t.shape() != param_shape(params.dims, info.name)) {
            throw ShapeError(std::string(info.name) + " has shape " + shape_string(t.shape()) + ", expected " +
                             shape_string(param_shape(params.dims, info.name)));
        }
        for (double v : t.values()) {
            if (!std::isfinite(v)) throw NumericError(std::string(info.name) + " holds a non-finite value");
        }
    }
}

ModelParams on_tape(const ModelParams& params, Tape& tape) {
    ModelParams out = params;
    for (const ParamInfo& info : kParamLayout) out.*info.member = tape.leaf(params.*info.member);
    return out;
}

Tensor encode_image(const ModelParams& p, const Tensor& images) {
    if (images.rank() != 2 || images.cols() != p.dims.d_img) {
        throw ShapeError("encode_image: expected [N," + std::to_string(p.dims.d_img) + "], got " +
                         shape_string(images.shape()));
    }
    const Tensor hidden = relu(matmul(images, p.image_w1) + p.image_b1);
    return matmul(hidden, p.image_w2) + p.image_b2;
}

Tensor encode_text(const ModelParams& p, std::span<const std::vector<int>> tokens, int pad_id) {
    const Tensor pooled = pooled_lookup(p.text_embed, tokens, pad_id);
    return matmul(pooled, p.text_w) + p.text_b;
}

Tensor project(const Tensor& features, const Tensor& head) {
    if (features.rank() != 2 || head.rank() != 2 || features.cols() != head.rows()) {
        throw ShapeError("project: " + shape_string(features.shape()) + " cannot be projected by " +
                         shape_string(head.shape()));
    }
    return matmul(features, head);
}

Tensor embed_images(const ModelParams& p, const Tensor& images) {
    return l2_normalize_rows(project(encode_image(p, images), p.proj_image), kNormGuard);
}

Tensor embed_texts(const ModelParams& p, std::span<const std::vector<int>> tokens) {
    return l2_normalize_rows(project(encode_text(p, tokens), p.proj_text), kNormGuard);
}

}  // namespace contextclip
