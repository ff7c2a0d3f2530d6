#pragma once

#include <functional>
#include <span>
#include <vector>

#include "contextclip/tensor.hpp"

namespace contextclip {

// Scalar function of a flat parameter vector. It receives a rank-1 tensor that
// may or may not be recorded on a tape and must return a rank-0 tensor built
// from it with the differentiable operations.
using ScalarFunction = std::function<Tensor(const Tensor& x)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::vector<double> analytic;
    std::vector<double> numeric;
};

// Central differences against reverse-mode gradients. Relative error per
// coordinate is |a - n| / max(1, |a|, |n|).
GradCheckResult grad_check(const ScalarFunction& f, std::span<const double> x, double step);

}  // namespace contextclip
