#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "contextclip/errors.hpp"

namespace contextclip {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;

class Tape;

// Dense row-major array of doubles, at most rank 2 for the differentiable ops.
// Values are immutable once constructed; copies share storage. A tensor may
// be recorded on a Tape, in which case it carries the tape and its node id.
class Tensor {
  public:
    // Rank-0 zero.
    Tensor();

    // Throws ShapeError when values.size() != product(shape).
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double value);
    static Tensor zeros(Shape shape);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return values_->size(); }

    // Rank-2 extents; rows() of a rank-1 tensor is its length, cols() is 1.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> values() const noexcept { return *values_; }
    const std::vector<double>& storage() const noexcept { return *values_; }
    double operator()(std::size_t row, std::size_t col) const { return (*values_)[row * cols() + col]; }
    double operator[](std::size_t flat) const { return (*values_)[flat]; }

    // Value of a single-element tensor.
    double item() const;

    Tape* tape() const noexcept { return tape_; }
    std::optional<NodeId> node() const noexcept { return node_; }
    bool recorded() const noexcept { return node_.has_value(); }

    // Same values, detached from any tape.
    Tensor detached() const;

  private:
    friend class Tape;

    Shape shape_;
    std::shared_ptr<const std::vector<double>> values_;
    Tape* tape_ = nullptr;
    std::optional<NodeId> node_;
};

std::size_t shape_size(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

// build(shape, values): the plain constructor under its operation name.
Tensor build(Shape shape, std::vector<double> values);

enum class OpKind {
    leaf,
    matmul,
    transpose,
    unary,
    binary,
    reduce,
    normalize_rows,
    pooled_lookup,
    view,
};

std::string_view op_name(OpKind kind) noexcept;

using GradientBuffers = std::vector<std::vector<double>>;

// Accumulates the incoming output gradient into the parent buffers.
using BackwardFn = std::function<void(const std::vector<double>& grad_out, GradientBuffers& grads)>;

struct TapeNode {
    OpKind kind = OpKind::leaf;
    std::vector<NodeId> parents;
    std::size_t size = 0;
    BackwardFn backward;
};

class Gradients;

// Ordered record of forward operations. Insertion order is a topological order.
// Tensors recorded here hold a raw pointer to the tape, so the tape must outlive
// them; it is neither copyable nor movable.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers a differentiable input. The returned tensor shares values with t.
    Tensor leaf(const Tensor& t);

    std::size_t size() const noexcept { return nodes_.size(); }
    const TapeNode& node(NodeId id) const { return nodes_.at(id); }

    // Used by operations: appends a node whose parents are the recorded inputs.
    Tensor record(OpKind kind, std::vector<NodeId> parents, Shape shape, std::vector<double> values,
                  BackwardFn backward);

  private:
    std::vector<TapeNode> nodes_;
};

// Gradient arrays keyed by node id, one per node of the tape.
class Gradients {
  public:
    Gradients() = default;
    explicit Gradients(GradientBuffers buffers, const Tape* tape)
        : buffers_(std::move(buffers)), tape_(tape) {}

    std::span<const double> at(NodeId id) const;

    // Gradient for a tensor recorded on the tape that produced this map.
    std::span<const double> of(const Tensor& t) const;

    std::size_t size() const noexcept { return buffers_.size(); }
    const GradientBuffers& buffers() const noexcept { return buffers_; }

  private:
    GradientBuffers buffers_;
    const Tape* tape_ = nullptr;
};

// Reverse sweep from a rank-0 loss recorded on `tape`.
Gradients backward(const Tensor& loss, const Tape& tape);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& t);

// Values [offset, offset + product(shape)) of t in row-major order, reshaped.
Tensor view(const Tensor& t, std::size_t offset, Shape shape);

struct UnaryOp {
    enum class Kind { exp, log, neg, scale, offset, relu };
    Kind kind = Kind::neg;
    double constant = 0.0;

    static UnaryOp exp() { return {Kind::exp, 0.0}; }
    static UnaryOp log() { return {Kind::log, 0.0}; }
    static UnaryOp neg() { return {Kind::neg, 0.0}; }
    static UnaryOp scale(double c) { return {Kind::scale, c}; }
    static UnaryOp offset(double c) { return {Kind::offset, c}; }
    // max(x, 0); the tie at x == 0 routes the gradient to x.
    static UnaryOp relu() { return {Kind::relu, 0.0}; }
};

Tensor apply_unary(const Tensor& t, UnaryOp op);

enum class BinaryKind { add, sub, mul, div };

// b must match a's shape exactly, or be a per-row [m,1] / per-column [1,n]
// vector broadcast against a rank-2 a.
Tensor apply_binary(const Tensor& a, const Tensor& b, BinaryKind kind);

enum class Axis {
    rows,  // one result per row, shape [m,1]
    cols,  // one result per column, shape [1,n]
    all,   // rank-0
};
enum class ReduceKind { sum, max, min, mean };

// max/min backward routes the gradient to the first attaining index.
Tensor reduce(const Tensor& t, Axis axis, ReduceKind kind);

// Each row divided by (its Euclidean norm + guard); guard must be > 0.
Tensor l2_normalize_rows(const Tensor& t, double guard);

// Each row divided by its exact Euclidean norm; a zero row is a NumericError.
Tensor unit_rows(const Tensor& t);

// Mean of table rows selected by each token list, skipping `pad_id`.
// Rows are summed in ascending id order so the result does not depend on
// token order within a list.
Tensor pooled_lookup(const Tensor& table, std::span<const std::vector<int>> tokens, int pad_id);

inline Tensor exp(const Tensor& t) { return apply_unary(t, UnaryOp::exp()); }
inline Tensor log(const Tensor& t) { return apply_unary(t, UnaryOp::log()); }
inline Tensor relu(const Tensor& t) { return apply_unary(t, UnaryOp::relu()); }
inline Tensor scale(const Tensor& t, double c) { return apply_unary(t, UnaryOp::scale(c)); }
inline Tensor offset(const Tensor& t, double c) { return apply_unary(t, UnaryOp::offset(c)); }
inline Tensor operator-(const Tensor& t) { return apply_unary(t, UnaryOp::neg()); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return apply_binary(a, b, BinaryKind::add); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return apply_binary(a, b, BinaryKind::sub); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return apply_binary(a, b, BinaryKind::mul); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return apply_binary(a, b, BinaryKind::div); }

inline Tensor sum(const Tensor& t, Axis axis = Axis::all) { return reduce(t, axis, ReduceKind::sum); }
inline Tensor mean(const Tensor& t, Axis axis = Axis::all) { return reduce(t, axis, ReduceKind::mean); }

}  // namespace contextclip
