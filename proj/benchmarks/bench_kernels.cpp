#include <random>

#include <benchmark/benchmark.h>

#include "lanse/lanse_encoder.hpp"
#include "lanse/metrics.hpp"
#include "lanse/neuron_curation.hpp"
#include "lanse/sparse_autoencoder.hpp"

using namespace lanse;

namespace {

Vec random_input(std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    Vec v(static_cast<Eigen::Index>(d));
    for (auto& x : v) x = g(rng);
    return v;
}

BitRows random_rows(std::size_t n, std::size_t d, double density, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution b(density);
    BitRows rows(n, Bits(d));
    for (auto& r : rows)
        for (auto& x : r) x = b(rng);
    return rows;
}

}  // namespace

static void BM_SaeEncode(benchmark::State& state) {
    const auto latent = static_cast<std::size_t>(state.range(0));
    const auto p = init_sae(1536, latent, 32, 1);
    const Vec e = random_input(1536, 2);
    for (auto _ : state) benchmark::DoNotOptimize(encode(p, e));
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_SaeEncode)->Arg(1024)->Arg(4096)->Arg(15000)->Unit(benchmark::kMicrosecond);

static void BM_SaeTrainStep(benchmark::State& state) {
    const auto p = init_sae(256, 1024, 32, 1);
    Mat batch(64, 256);
    for (Eigen::Index i = 0; i < batch.rows(); ++i) batch.row(i) = random_input(256, 10 + i).transpose();
    SaeGradients g;
    for (auto _ : state) benchmark::DoNotOptimize(sae_loss_and_grad(p, batch, g));
}
BENCHMARK(BM_SaeTrainStep)->Unit(benchmark::kMillisecond);

static void BM_ActivateAndBinarize(benchmark::State& state) {
    std::vector<Neuron> reg;
    std::size_t i = 0;
    for (Category c : kAllGroups)
        for (int k = 0; k < 40; ++k) {
            Neuron n;
            n.id = "n" + std::to_string(i);
            n.w = random_input(1536, 100 + i++);
            n.category = c;
            reg.push_back(std::move(n));
        }
    auto model = assemble(reg);
    const Vec x = random_input(1536, 3);
    for (auto _ : state)
        for (Category c : kAllGroups) {
            const auto& g = model.group(c);
            benchmark::DoNotOptimize(binarize(activate(model, x, c), g.tau));
        }
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_ActivateAndBinarize)->Unit(benchmark::kMicrosecond);

static void BM_PromptMatch(benchmark::State& state) {
    const auto v = random_rows(static_cast<std::size_t>(state.range(0)), 64, 0.1, 1);
    const auto t = random_rows(static_cast<std::size_t>(state.range(0)), 64, 0.1, 2);
    for (auto _ : state) benchmark::DoNotOptimize(prompt_match(v, t));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_PromptMatch)->Arg(1000)->Arg(10000);

static void BM_ContentDiversityExhaustive(benchmark::State& state) {
    const auto rows = random_rows(static_cast<std::size_t>(state.range(0)), 64, 0.1, 3);
    for (auto _ : state) benchmark::DoNotOptimize(content_diversity(rows));
    state.SetItemsProcessed(state.iterations() * state.range(0) * (state.range(0) - 1) / 2);
}
BENCHMARK(BM_ContentDiversityExhaustive)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

static void BM_ContentDiversitySampled(benchmark::State& state) {
    const auto rows = random_rows(20000, 64, 0.1, 4);
    const PairSampler sampler{.exhaustive_limit = 2000, .samples = static_cast<std::size_t>(state.range(0)), .seed = 0};
    for (auto _ : state) benchmark::DoNotOptimize(content_diversity(rows, sampler));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ContentDiversitySampled)->Arg(100000)->Arg(1000000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
