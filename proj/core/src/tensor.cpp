#include "contextclip/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <utility>

namespace contextclip {

namespace {

void require_finite(const std::vector<double>& values, std::string_view op) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op) + ": non-finite result");
        }
    }
}

void require_rank2(const Tensor& t, std::string_view op) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected rank-2 tensor, got shape " + shape_string(t.shape()));
    }
}

// Tape shared by the recorded inputs, or nullptr when none are recorded.
Tape* common_tape(std::initializer_list<const Tensor*> inputs) {
    Tape* tape = nullptr;
    for (const Tensor* t : inputs) {
        if (!t->recorded()) continue;
        if (tape != nullptr && tape != t->tape()) {
            throw Error("inputs are recorded on different tapes");
        }
        tape = t->tape();
    }
    return tape;
}

std::vector<NodeId> parent_ids(std::initializer_list<const Tensor*> inputs) {
    std::vector<NodeId> ids;
    for (const Tensor* t : inputs) {
        if (t->recorded()) ids.push_back(*t->node());
    }
    return ids;
}

Tensor finish(OpKind kind, std::initializer_list<const Tensor*> inputs, Shape shape, std::vector<double> values,
              BackwardFn backward) {
    require_finite(values, op_name(kind));
    Tape* tape = common_tape(inputs);
    if (tape == nullptr) {
        return Tensor(std::move(shape), std::move(values));
    }
    return tape->record(kind, parent_ids(inputs), std::move(shape), std::move(values), std::move(backward));
}

enum class Broadcast { none, per_row, per_col };

Broadcast classify_broadcast(const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) return Broadcast::none;
    if (a.rank() == 2 && b.rank() == 2) {
        if (b.shape()[0] == a.shape()[0] && b.shape()[1] == 1) return Broadcast::per_row;
        if (b.shape()[0] == 1 && b.shape()[1] == a.shape()[1]) return Broadcast::per_col;
    }
    throw ShapeError("incompatible shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
}

}  // namespace

Tensor::Tensor() : values_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
    if (values.size() != shape_size(shape_)) {
        throw ShapeError("length mismatch: shape " + shape_string(shape_) + " needs " +
                         std::to_string(shape_size(shape_)) + " values, got " + std::to_string(values.size()));
    }
    values_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::zeros(Shape shape) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const {
    if (shape_.empty()) return 1;
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (shape_.size() < 2) return 1;
    return shape_[1];
}

double Tensor::item() const {
    if (size() != 1) {
        throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    }
    return (*values_)[0];
}

Tensor Tensor::detached() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_.reset();
    return t;
}

std::size_t shape_size(const Shape& shape) noexcept {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor build(Shape shape, std::vector<double> values) { return Tensor(std::move(shape), std::move(values)); }

std::string_view op_name(OpKind kind) noexcept {
    switch (kind) {
        case OpKind::leaf: return "leaf";
        case OpKind::matmul: return "matmul";
        case OpKind::transpose: return "transpose";
        case OpKind::unary: return "unary";
        case OpKind::binary: return "binary";
        case OpKind::reduce: return "reduce";
        case OpKind::normalize_rows: return "normalize_rows";
        case OpKind::pooled_lookup: return "pooled_lookup";
        case OpKind::view: return "view";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// Tape and backward

Tensor Tape::leaf(const Tensor& t) {
    if (t.tape_ == this) return t;
    Tensor out = t.detached();
    nodes_.push_back(TapeNode{OpKind::leaf, {}, t.size(), {}});
    out.tape_ = this;
    out.node_ = nodes_.size() - 1;
    return out;
}

Tensor Tape::record(OpKind kind, std::vector<NodeId> parents, Shape shape, std::vector<double> values,
                    BackwardFn backward) {
    Tensor out(std::move(shape), std::move(values));
    nodes_.push_back(TapeNode{kind, std::move(parents), out.size(), std::move(backward)});
    out.tape_ = this;
    out.node_ = nodes_.size() - 1;
    return out;
}

std::span<const double> Gradients::at(NodeId id) const {
    if (id >= buffers_.size()) {
        throw Error("node " + std::to_string(id) + " has no gradient");
    }
    return buffers_[id];
}

std::span<const double> Gradients::of(const Tensor& t) const {
    if (!t.recorded() || t.tape() != tape_) {
        throw Error("tensor is not recorded on the differentiated tape");
    }
    return at(*t.node());
}

Gradients backward(const Tensor& loss, const Tape& tape) {
    if (loss.rank() != 0) {
        throw ShapeError("backward needs a rank-0 loss, got shape " + shape_string(loss.shape()));
    }
    if (!loss.recorded() || loss.tape() != &tape) {
        throw Error("backward: loss is not recorded on this tape");
    }
    GradientBuffers grads(tape.size());
    for (NodeId id = 0; id < tape.size(); ++id) {
        grads[id].assign(tape.node(id).size, 0.0);
    }
    const NodeId root = *loss.node();
    grads[root][0] = 1.0;
    for (NodeId id = root + 1; id-- > 0;) {
        const TapeNode& node = tape.node(id);
        if (node.backward) node.backward(grads[id], grads);
    }
    return Gradients(std::move(grads), &tape);
}

// ---------------------------------------------------------------------------
// Operations

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw ShapeError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
    }
    const auto& av = a.storage();
    const auto& bv = b.storage();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double x = av[i * k + p];
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += x * bv[p * n + j];
        }
    }
    auto a_id = a.node(), b_id = b.node();
    BackwardFn bw = [a_id, b_id, av = a.detached(), bv = b.detached(), m, k, n](
                        const std::vector<double>& g, GradientBuffers& grads) {
        if (a_id) {
            auto& ga = grads[*a_id];
            const auto& bs = bv.storage();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bs[p * n + j];
                    ga[i * k + p] += acc;
                }
        }
        if (b_id) {
            auto& gb = grads[*b_id];
            const auto& as = av.storage();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double x = as[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += x * g[i * n + j];
                }
        }
    };
    return finish(OpKind::matmul, {&a, &b}, {m, n}, std::move(out), std::move(bw));
}

Tensor transpose(const Tensor& t) {
    require_rank2(t, "transpose");
    const std::size_t m = t.rows(), n = t.cols();
    const auto& v = t.storage();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = v[i * n + j];
    auto id = t.node();
    BackwardFn bw = [id, m, n](const std::vector<double>& g, GradientBuffers& grads) {
        auto& gt = grads[*id];
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gt[i * n + j] += g[j * m + i];
    };
    return finish(OpKind::transpose, {&t}, {n, m}, std::move(out), std::move(bw));
}

Tensor view(const Tensor& t, std::size_t offset, Shape shape) {
    const std::size_t n = shape_size(shape);
    if (offset > t.size() || n > t.size() - offset) {
        throw ShapeError("view: range [" + std::to_string(offset) + ", " + std::to_string(offset + n) +
                         ") exceeds " + std::to_string(t.size()) + " values");
    }
    const auto first = t.storage().begin() + static_cast<std::ptrdiff_t>(offset);
    std::vector<double> out(first, first + static_cast<std::ptrdiff_t>(n));
    auto id = t.node();
    BackwardFn bw = [id, offset, n](const std::vector<double>& g, GradientBuffers& grads) {
        auto& gt = grads[*id];
        for (std::size_t i = 0; i < n; ++i) gt[offset + i] += g[i];
    };
    return finish(OpKind::view, {&t}, std::move(shape), std::move(out), std::move(bw));
}

Tensor apply_unary(const Tensor& t, UnaryOp op) {
    const auto& v = t.storage();
    std::vector<double> out(v.size());
    using K = UnaryOp::Kind;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double x = v[i];
        switch (op.kind) {
            case K::exp: out[i] = std::exp(x); break;
            case K::log:
                if (!(x > 0.0)) throw NumericError("log: non-positive entry " + std::to_string(x));
                out[i] = std::log(x);
                break;
            case K::neg: out[i] = -x; break;
            case K::scale: out[i] = op.constant * x; break;
            case K::offset: out[i] = x + op.constant; break;
            case K::relu: out[i] = x >= 0.0 ? x : 0.0; break;
        }
    }
    auto id = t.node();
    std::shared_ptr<const std::vector<double>> saved;
    if (t.recorded() && (op.kind == K::exp || op.kind == K::log || op.kind == K::relu)) {
        saved = std::make_shared<const std::vector<double>>(op.kind == K::exp ? out : v);
    }
    BackwardFn bw = [id, op, saved](const std::vector<double>& g, GradientBuffers& grads) {
        auto& gt = grads[*id];
        for (std::size_t i = 0; i < g.size(); ++i) {
            switch (op.kind) {
                case K::exp: gt[i] += g[i] * (*saved)[i]; break;
                case K::log: gt[i] += g[i] / (*saved)[i]; break;
                case K::neg: gt[i] -= g[i]; break;
                case K::scale: gt[i] += g[i] * op.constant; break;
                case K::offset: gt[i] += g[i]; break;
                case K::relu:
                    if ((*saved)[i] >= 0.0) gt[i] += g[i];
                    break;
            }
        }
    };
    return finish(OpKind::unary, {&t}, t.shape(), std::move(out), std::move(bw));
}

Tensor apply_binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
    const Broadcast bc = classify_broadcast(a, b);
    const std::size_t n_total = a.size();
    const std::size_t cols = bc == Broadcast::none ? 1 : a.cols();
    const auto& av = a.storage();
    const auto& bv = b.storage();
    auto b_index = [bc, cols](std::size_t flat) -> std::size_t {
        switch (bc) {
            case Broadcast::none: return flat;
            case Broadcast::per_row: return flat / cols;
            case Broadcast::per_col: return flat % cols;
        }
        return flat;
    };
    if (kind == BinaryKind::div) {
        for (double d : bv) {
            if (d == 0.0) throw NumericError("div: divisor contains 0");
        }
    }
    std::vector<double> out(n_total);
    for (std::size_t i = 0; i < n_total; ++i) {
        const double x = av[i], y = bv[b_index(i)];
        switch (kind) {
            case BinaryKind::add: out[i] = x + y; break;
            case BinaryKind::sub: out[i] = x - y; break;
            case BinaryKind::mul: out[i] = x * y; break;
            case BinaryKind::div: out[i] = x / y; break;
        }
    }
    auto a_id = a.node(), b_id = b.node();
    const bool keep = kind == BinaryKind::mul || kind == BinaryKind::div;
    Tensor a_saved = keep && b.recorded() ? a.detached() : Tensor();
    Tensor b_saved = keep ? b.detached() : Tensor();
    BackwardFn bw = [a_id, b_id, kind, b_index, a_saved, b_saved](const std::vector<double>& g,
                                                                  GradientBuffers& grads) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            const std::size_t j = b_index(i);
            double da = 0.0, db = 0.0;
            switch (kind) {
                case BinaryKind::add: da = g[i]; db = g[i]; break;
                case BinaryKind::sub: da = g[i]; db = -g[i]; break;
                case BinaryKind::mul:
                    da = g[i] * b_saved[j];
                    if (b_id) db = g[i] * a_saved[i];
                    break;
                case BinaryKind::div: {
                    const double y = b_saved[j];
                    da = g[i] / y;
                    if (b_id) db = -g[i] * a_saved[i] / (y * y);
                    break;
                }
            }
            if (a_id) grads[*a_id][i] += da;
            if (b_id) grads[*b_id][j] += db;
        }
    };
    return finish(OpKind::binary, {&a, &b}, a.shape(), std::move(out), std::move(bw));
}

Tensor reduce(const Tensor& t, Axis axis, ReduceKind kind) {
    std::size_t groups = 1, extent = t.size(), stride = 1, group_step = 0;
    Shape out_shape;
    if (axis != Axis::all) {
        require_rank2(t, "reduce");
        const std::size_t m = t.rows(), n = t.cols();
        if (axis == Axis::rows) {
            groups = m, extent = n, stride = 1, group_step = n;
            out_shape = {m, 1};
        } else {
            groups = n, extent = m, stride = n, group_step = 1;
            out_shape = {1, n};
        }
    }
    if (extent == 0) {
        throw ShapeError("reduce over a zero-length axis of shape " + shape_string(t.shape()));
    }
    const auto& v = t.storage();
    std::vector<double> out(groups);
    std::vector<std::size_t> picked(kind == ReduceKind::max || kind == ReduceKind::min ? groups : 0);
    for (std::size_t gi = 0; gi < groups; ++gi) {
        const std::size_t base = gi * group_step;
        double acc = v[base];
        std::size_t best = base;
        if (kind == ReduceKind::sum || kind == ReduceKind::mean) {
            acc = 0.0;
            for (std::size_t e = 0; e < extent; ++e) acc += v[base + e * stride];
            if (kind == ReduceKind::mean) acc /= static_cast<double>(extent);
        } else {
            for (std::size_t e = 1; e < extent; ++e) {
                const std::size_t idx = base + e * stride;
                if ((kind == ReduceKind::max && v[idx] > acc) || (kind == ReduceKind::min && v[idx] < acc)) {
                    acc = v[idx];
                    best = idx;
                }
            }
            picked[gi] = best;
        }
        out[gi] = acc;
    }
    auto id = t.node();
    BackwardFn bw = [id, kind, groups, extent, stride, group_step, picked = std::move(picked)](
                        const std::vector<double>& g, GradientBuffers& grads) {
        auto& gt = grads[*id];
        for (std::size_t gi = 0; gi < groups; ++gi) {
            if (kind == ReduceKind::max || kind == ReduceKind::min) {
                gt[picked[gi]] += g[gi];
                continue;
            }
            const double share = kind == ReduceKind::mean ? g[gi] / static_cast<double>(extent) : g[gi];
            const std::size_t base = gi * group_step;
            for (std::size_t e = 0; e < extent; ++e) gt[base + e * stride] += share;
        }
    };
    return finish(OpKind::reduce, {&t}, std::move(out_shape), std::move(out), std::move(bw));
}

namespace {

Tensor normalize_rows_impl(const Tensor& t, double guard, bool exact) {
    require_rank2(t, "normalize_rows");
    const std::size_t m = t.rows(), n = t.cols();
    const auto& v = t.storage();
    std::vector<double> norms(m, 0.0);
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        double ss = 0.0;
        for (std::size_t j = 0; j < n; ++j) ss += v[i * n + j] * v[i * n + j];
        norms[i] = std::sqrt(ss);
        if (exact && norms[i] == 0.0) {
            throw NumericError("unit_rows: row " + std::to_string(i) + " has zero norm");
        }
        const double denom = norms[i] + guard;
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = denom > 0.0 ? v[i * n + j] / denom : 0.0;
    }
    auto id = t.node();
    Tensor x = t.recorded() ? t.detached() : Tensor();
    BackwardFn bw = [id, x, norms = std::move(norms), guard, m, n](const std::vector<double>& g,
                                                                  GradientBuffers& grads) {
        auto& gt = grads[*id];
        const auto& xv = x.storage();
        for (std::size_t i = 0; i < m; ++i) {
            const double s = norms[i] + guard;
            if (s == 0.0) continue;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += xv[i * n + j] * g[i * n + j];
            // d(x/s)/dx = I/s - x x^T / (s^2 |x|); the second term vanishes at x = 0.
            const double coeff = norms[i] > 0.0 ? dot / (s * s * norms[i]) : 0.0;
            for (std::size_t j = 0; j < n; ++j) gt[i * n + j] += g[i * n + j] / s - xv[i * n + j] * coeff;
        }
    };
    return finish(OpKind::normalize_rows, {&t}, t.shape(), std::move(out), std::move(bw));
}

}  // namespace

Tensor l2_normalize_rows(const Tensor& t, double guard) {
    if (!(guard > 0.0)) {
        throw ConfigError("l2_normalize_rows: guard must be > 0");
    }
    return normalize_rows_impl(t, guard, false);
}

Tensor unit_rows(const Tensor& t) { return normalize_rows_impl(t, 0.0, true); }

Tensor pooled_lookup(const Tensor& table, std::span<const std::vector<int>> tokens, int pad_id) {
    require_rank2(table, "pooled_lookup");
    const std::size_t vocab = table.rows(), d = table.cols();
    const std::size_t n = tokens.size();
    std::vector<std::vector<std::size_t>> ids(n);
    for (std::size_t r = 0; r < n; ++r) {
        for (int tok : tokens[r]) {
            if (tok < 0 || static_cast<std::size_t>(tok) >= vocab) {
                throw ShapeError("token " + std::to_string(tok) + " out of range [0," + std::to_string(vocab) +
                                 ") in row " + std::to_string(r));
            }
            if (tok != pad_id) ids[r].push_back(static_cast<std::size_t>(tok));
        }
        if (ids[r].empty()) {
            throw ShapeError("row " + std::to_string(r) + " has no non-pad tokens");
        }
        std::sort(ids[r].begin(), ids[r].end());
    }
    const auto& tv = table.storage();
    std::vector<double> out(n * d, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t id : ids[r])
            for (std::size_t j = 0; j < d; ++j) out[r * d + j] += tv[id * d + j];
        const double count = static_cast<double>(ids[r].size());
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] /= count;
    }
    auto table_id = table.node();
    BackwardFn bw = [table_id, ids = std::move(ids), d](const std::vector<double>& g, GradientBuffers& grads) {
        auto& gt = grads[*table_id];
        for (std::size_t r = 0; r < ids.size(); ++r) {
            const double inv = 1.0 / static_cast<double>(ids[r].size());
            for (std::size_t id : ids[r])
                for (std::size_t j = 0; j < d; ++j) gt[id * d + j] += g[r * d + j] * inv;
        }
    };
    return finish(OpKind::pooled_lookup, {&table}, {n, d}, std::move(out), std::move(bw));
}

}  // namespace contextclip
