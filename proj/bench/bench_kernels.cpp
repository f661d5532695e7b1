// Serial reference vs OpenMP kernels. Set OMP_NUM_THREADS to compare scaling.

#include <benchmark/benchmark.h>

#include <memory>

#include "latentdrive/concept_space.hpp"
#include "latentdrive/experiments.hpp"
#include "latentdrive/masked_extract.hpp"

using namespace ld;

namespace {

vit::Image bench_image(int side) {
    vit::Image img(side, side);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>((i * 2654435761u) % 1000) / 1000.0f;
    return img;
}

const vit::EncoderWeights& weights() {
    static const auto w = vit::random_weights(vit::EncoderConfig{}, 1);
    return w;
}

void BM_ExtractDense(benchmark::State& state) {
    const auto img = bench_image(static_cast<int>(state.range(0)));
    const int g = (static_cast<int>(state.range(0)) - 4) / 4 + 1;
    const mask::MaskConfig m;
    for (auto _ : state) benchmark::DoNotOptimize(mask::extract_dense(weights(), img, 2, m, g, g));
}

void BM_ExtractDenseSerial(benchmark::State& state) {
    const auto img = bench_image(static_cast<int>(state.range(0)));
    const int g = (static_cast<int>(state.range(0)) - 4) / 4 + 1;
    const mask::MaskConfig m;
    for (auto _ : state) benchmark::DoNotOptimize(mask::extract_dense_serial(weights(), img, 2, m, g, g));
}

struct EvalFixture {
    exp::Recipe recipe;
    std::shared_ptr<const concepts::ConceptBank> bank =
        std::make_shared<const concepts::ConceptBank>(exp::embedding_bank());
    sim::Driver driver = sim::teacher_driver(recipe.sim);
};

void BM_Evaluate(benchmark::State& state) {
    EvalFixture f;
    const auto pipeline = exp::pipeline_for(f.recipe, f.bank);
    for (auto _ : state)
        benchmark::DoNotOptimize(sim::evaluate(f.driver, f.recipe.train_family, static_cast<int>(state.range(0)), 7,
                                               f.recipe.sim, pipeline));
}

void BM_EvaluateSerial(benchmark::State& state) {
    EvalFixture f;
    const auto pipeline = exp::pipeline_for(f.recipe, f.bank);
    for (auto _ : state)
        benchmark::DoNotOptimize(sim::evaluate_serial(f.driver, f.recipe.train_family, static_cast<int>(state.range(0)),
                                                      7, f.recipe.sim, pipeline));
}

void BM_Substitute(benchmark::State& state) {
    const auto bank = exp::embedding_bank();
    FeatureMap f(64, 64, bank.dim());
    for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] = static_cast<float>((i * 40503u) % 997) / 997.0f - 0.5f;
    concepts::SubstitutionRule rule;
    rule.threshold = 0.2;
    rule.replacement = concepts::ReplacementMap::uniform();
    for (auto _ : state) benchmark::DoNotOptimize(concepts::substitute(f, bank, rule, 3));
}

void BM_SubstituteSerial(benchmark::State& state) {
    const auto bank = exp::embedding_bank();
    FeatureMap f(64, 64, bank.dim());
    for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] = static_cast<float>((i * 40503u) % 997) / 997.0f - 0.5f;
    concepts::SubstitutionRule rule;
    rule.threshold = 0.2;
    rule.replacement = concepts::ReplacementMap::uniform();
    for (auto _ : state) benchmark::DoNotOptimize(concepts::substitute_serial(f, bank, rule, 3));
}

} // namespace

BENCHMARK(BM_ExtractDense)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ExtractDenseSerial)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Evaluate)->Arg(20)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EvaluateSerial)->Arg(20)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Substitute)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SubstituteSerial)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
