#include <benchmark/benchmark.h>

#include <cstddef>
#include <vector>

#include <contextclip/encoders.hpp>
#include <contextclip/losses.hpp>
#include <contextclip/rng.hpp>
#include <contextclip/tensor.hpp>

namespace {

using namespace contextclip;

Tensor unit_points(Rng& rng, std::size_t n, std::size_t d) {
    std::vector<double> v(n * d);
    for (double& x : v) x = rng.gaussian();
    return l2_normalize_rows(Tensor::matrix(n, d, std::move(v)), kNormGuard);
}

void BM_ContrastiveForward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    const Tensor u = unit_points(rng, n, 32), v = unit_points(rng, n, 32);
    const LossConfig cfg;
    for (auto _ : state) benchmark::DoNotOptimize(contrastive_loss(u, v, cfg).item());
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_ContrastiveForward)->RangeMultiplier(2)->Range(8, 256)->Complexity();

void BM_ContextualForward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(2);
    const Tensor u = unit_points(rng, n, 32), v = unit_points(rng, n, 32);
    const LossConfig cfg;
    for (auto _ : state) benchmark::DoNotOptimize(contextual_loss(u, v, cfg).item());
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_ContextualForward)->RangeMultiplier(2)->Range(8, 256)->Complexity();

void BM_TotalLossBackward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(3);
    const Tensor u0 = unit_points(rng, n, 32), v0 = unit_points(rng, n, 32);
    const LossConfig cfg;
    for (auto _ : state) {
        Tape tape;
        const Tensor u = tape.leaf(u0), v = tape.leaf(v0);
        const TotalLoss loss = total_loss(u, v, u, v, cfg);
        benchmark::DoNotOptimize(backward(loss.value, tape).size());
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_TotalLossBackward)->RangeMultiplier(2)->Range(8, 256)->Complexity();

}  // namespace
