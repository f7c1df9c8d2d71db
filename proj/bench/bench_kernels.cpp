// Serial reference against OpenMP kernels on shapes seen during training.

#include <benchmark/benchmark.h>

#include "tomfield/kernels.hpp"
#include "tomfield/rng.hpp"

using namespace tomfield;

namespace {

Matrix random(std::size_t r, std::size_t c, std::uint64_t seed) {
    Rng rng(seed);
    Matrix m(r, c);
    for (double& v : m.values()) v = rng.uniform(-1.0, 1.0);
    return m;
}

template <void (*Affine)(const Matrix&, const Matrix&, const Matrix&, Matrix&)>
void BM_Affine(benchmark::State& state) {
    const auto rows = static_cast<std::size_t>(state.range(0));
    const auto width = static_cast<std::size_t>(state.range(1));
    const Matrix x = random(rows, width, 1);
    const Matrix w = random(width, width, 2);
    const Matrix b = random(1, width, 3);
    Matrix out(rows, width);
    for (auto _ : state) {
        Affine(x, w, b, out);
        benchmark::DoNotOptimize(out.values().data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * rows * width * width));
}

template <void (*Grad)(const Matrix&, const Matrix&, Matrix&)>
void BM_GradWeights(benchmark::State& state) {
    const auto rows = static_cast<std::size_t>(state.range(0));
    const auto width = static_cast<std::size_t>(state.range(1));
    const Matrix x = random(rows, width, 4);
    const Matrix dy = random(rows, width, 5);
    Matrix dw(width, width);
    for (auto _ : state) {
        Grad(x, dy, dw);
        benchmark::DoNotOptimize(dw.values().data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * rows * width * width));
}

void shapes(benchmark::internal::Benchmark* b) {
    for (int rows : {64, 512}) {
        for (int width : {64, 256}) b->Args({rows, width});
    }
}

}  // namespace

BENCHMARK(BM_Affine<kernels::serial::affine>)->Name("affine/serial")->Apply(shapes);
BENCHMARK(BM_Affine<kernels::parallel::affine>)->Name("affine/parallel")->Apply(shapes);
BENCHMARK(BM_GradWeights<kernels::serial::affine_grad_weights>)->Name("grad_weights/serial")->Apply(shapes);
BENCHMARK(BM_GradWeights<kernels::parallel::affine_grad_weights>)->Name("grad_weights/parallel")->Apply(shapes);

BENCHMARK_MAIN();
