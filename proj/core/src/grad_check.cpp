#include "contextclip/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace contextclip {

namespace {

double evaluate(const ScalarFunction& f, std::vector<double> x) {
    const std::size_t n = x.size();
    const double value = f(Tensor({n}, std::move(x))).item();
    if (!std::isfinite(value)) {
        throw NumericError("grad_check: function returned a non-finite value");
    }
    return value;
}

}  // namespace

GradCheckResult grad_check(const ScalarFunction& f, std::span<const double> x, double step) {
    if (!(step > 0.0)) {
        throw ConfigError("grad_check: step must be > 0");
    }
    const std::size_t n = x.size();
    std::vector<double> point(x.begin(), x.end());

    GradCheckResult result;
    {
        Tape tape;
        const Tensor input = tape.leaf(Tensor({n}, point));
        const Tensor out = f(input);
        if (!std::isfinite(out.item())) {
            throw NumericError("grad_check: function returned a non-finite value");
        }
        if (out.recorded()) {
            const Gradients grads = backward(out, tape);
            const auto g = grads.of(input);
            result.analytic.assign(g.begin(), g.end());
        } else {
            // Output independent of the input: the gradient is zero.
            result.analytic.assign(n, 0.0);
        }
    }

    result.numeric.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> plus = point, minus = point;
        plus[i] += step;
        minus[i] -= step;
        result.numeric[i] = (evaluate(f, std::move(plus)) - evaluate(f, std::move(minus))) / (2.0 * step);
        const double a = result.analytic[i], d = result.numeric[i];
        const double denom = std::max({1.0, std::abs(a), std::abs(d)});
        result.max_rel_error = std::max(result.max_rel_error, std::abs(a - d) / denom);
    }
    return result;
}

}  // namespace contextclip
