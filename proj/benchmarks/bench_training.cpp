#include <benchmark/benchmark.h>

#include <cstddef>

#include <contextclip/data.hpp>
#include <contextclip/encoders.hpp>
#include <contextclip/evaluator.hpp>
#include <contextclip/trainer.hpp>

namespace {

using namespace contextclip;

void BM_TrainEpoch(benchmark::State& state) {
    CorpusSpec spec;
    spec.n_pairs = static_cast<std::size_t>(state.range(0));
    const PairCorpus corpus = generate(spec);
    const ModelParams initial = init_params(7, ModelDims{});
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.use_contextual = state.range(1) != 0;
    for (auto _ : state) benchmark::DoNotOptimize(train(cfg, corpus, initial).report.epochs.size());
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainEpoch)->ArgsProduct({{128, 512}, {0, 1}})->Unit(benchmark::kMillisecond);

void BM_RetrieveAll(benchmark::State& state) {
    CorpusSpec spec;
    spec.n_pairs = static_cast<std::size_t>(state.range(0));
    const PairCorpus corpus = generate(spec);
    const ModelParams params = init_params(7, ModelDims{});
    for (auto _ : state) benchmark::DoNotOptimize(retrieve_all(params, corpus, corpus, 5).size());
}
BENCHMARK(BM_RetrieveAll)->Arg(128)->Arg(640)->Unit(benchmark::kMillisecond);

void BM_Project2d(benchmark::State& state) {
    CorpusSpec spec;
    spec.n_pairs = static_cast<std::size_t>(state.range(0));
    const PairCorpus corpus = generate(spec);
    const ModelParams params = init_params(7, ModelDims{});
    const Tensor embeddings = embed_images(params, full_batch(corpus).images);
    for (auto _ : state) benchmark::DoNotOptimize(project_2d(embeddings).rows());
}
BENCHMARK(BM_Project2d)->Arg(128)->Arg(640)->Unit(benchmark::kMillisecond);

}  // namespace
