#include <benchmark/benchmark.h>

#include <random>

#include "pedcross/model.hpp"
#include "pedcross/ops.hpp"
#include "pedcross/training.hpp"

using namespace pedcross;
namespace op = pedcross::ops;

namespace {

Tensor random_tensor(std::vector<int> shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = dist(rng);
    return t;
}

Tensor random_boxes(int rows, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> corner(0.05, 0.6);
    std::uniform_real_distribution<double> extent(0.05, 0.3);
    Tensor t({rows, 4});
    for (int i = 0; i < rows; ++i) {
        const double x1 = corner(rng), y1 = corner(rng);
        t.at(i, 0) = x1;
        t.at(i, 1) = y1;
        t.at(i, 2) = x1 + extent(rng);
        t.at(i, 3) = y1 + extent(rng);
    }
    return t;
}

ModelConfig bench_config(Arch arch) {
    ModelConfig cfg;
    cfg.arch = arch;
    cfg.d_model = 128;
    cfg.n_heads = 8;
    cfg.n_layers = 4;
    cfg.d_ffn = 256;
    return cfg;
}

void BM_Matmul(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    Tensor a = random_tensor({16, n}, 1);
    Tensor b = random_tensor({n, n}, 2);
    for (auto _ : state) {
        Tensor c = op::matmul(a, b);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * 16 * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_MaskedSoftmax(benchmark::State& state) {
    Tensor x = random_tensor({16, 16}, 3);
    Tensor mask = causal_mask(16);
    for (auto _ : state) {
        Tensor y = op::masked_softmax(x, mask);
        benchmark::DoNotOptimize(y.data());
    }
}
BENCHMARK(BM_MaskedSoftmax);

void BM_LayerNorm(benchmark::State& state) {
    Tensor x = random_tensor({16, 128}, 4);
    Tensor gain = Tensor::full({128}, 1.0);
    Tensor bias({128});
    for (auto _ : state) {
        Tensor y = op::layer_norm(x, gain, bias, 1e-5);
        benchmark::DoNotOptimize(y.data());
    }
}
BENCHMARK(BM_LayerNorm);

void BM_ForwardProbability(benchmark::State& state) {
    const Arch arch = static_cast<Arch>(state.range(0));
    ModelParams m = init_model(bench_config(arch), 7);
    Tensor x = random_boxes(16, 11);
    for (auto _ : state) {
        Tensor p = forward_probability(m, x);
        benchmark::DoNotOptimize(p.data());
    }
}
BENCHMARK(BM_ForwardProbability)
    ->Arg(static_cast<int>(Arch::kTeo))
    ->Arg(static_cast<int>(Arch::kTep))
    ->Arg(static_cast<int>(Arch::kTed));

void BM_TrainStepTeo(benchmark::State& state) {
    ModelParams m = init_model(bench_config(Arch::kTeo), 7);
    Tensor x = random_boxes(16, 13);
    std::vector<Tensor> params;
    for (auto& [name, t] : m.named_parameters()) params.push_back(t);
    AdamState adam(params, AdamConfig{});
    Tape tape;
    for (auto _ : state) {
        Tensor p = forward_teo(m, x, &tape);
        tape.backward(bce_loss(p, 1, &tape));
        tape.clear();
        adam.step();
        for (Tensor& t : params) t.zero_grad();
    }
}
BENCHMARK(BM_TrainStepTeo);

}  // namespace

BENCHMARK_MAIN();
