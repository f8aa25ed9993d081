#include <benchmark/benchmark.h>

#include <vector>

#include "ucl/meanfield_net.hpp"
#include "ucl/rng.hpp"
#include "ucl/ucl_loss.hpp"

namespace {

using namespace ucl;

// 784-h-h-10 single-head network, the Permuted MNIST shape.
Network mnist_net(int hidden, std::uint64_t seed) {
    Rng rng(seed);
    const std::vector<int> widths = {hidden, hidden};
    return Network::build(784, widths, 10, HeadMode::single, InitScheme::constant(0.06), rng);
}

Matrix batch(int rows, Rng& rng) {
    Matrix x(rows, 784);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform();
    return x;
}

void BM_SampledStep(benchmark::State& state) {
    const int hidden = static_cast<int>(state.range(0));
    const Network net = mnist_net(hidden, 1);
    Rng rng(2);
    const Matrix x = batch(256, rng);
    std::vector<int> labels(256);
    for (auto& l : labels) l = static_cast<int>(rng.below(10));
    for (auto _ : state) {
        const SampleDraw draw = draw_noise(net, 0, rng);
        const ForwardPass pass = forward(net, 0, x, draw);
        benchmark::DoNotOptimize(backward_data_loss(net, pass, labels));
    }
    state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_SampledStep)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);

void BM_MeanForward(benchmark::State& state) {
    const Network net = mnist_net(static_cast<int>(state.range(0)), 1);
    Rng rng(3);
    const Matrix x = batch(1024, rng);
    for (auto _ : state) benchmark::DoNotOptimize(forward(net, 0, x).logits);
    state.SetItemsProcessed(state.iterations() * 1024);
}
BENCHMARK(BM_MeanForward)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);

void BM_Regularizer(benchmark::State& state) {
    const int hidden = static_cast<int>(state.range(0));
    const Network prev = mnist_net(hidden, 1);
    const Network cur = mnist_net(hidden, 4);
    const TaskSnapshot snapshot = snapshot_posterior(prev);
    RegularizerConfig config;
    config.sigma_init = prev.sigma_init();
    for (auto _ : state) benchmark::DoNotOptimize(total_regularizer(cur, snapshot, config).value);
}
BENCHMARK(BM_Regularizer)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);

void BM_DrawNoise(benchmark::State& state) {
    const Network net = mnist_net(static_cast<int>(state.range(0)), 1);
    Rng rng(5);
    for (auto _ : state) benchmark::DoNotOptimize(draw_noise(net, 0, rng));
}
BENCHMARK(BM_DrawNoise)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
