// OpenMP kernels against the serial reference. Pass --benchmark_filter to
// select, OMP_NUM_THREADS to set the thread count.
#include <benchmark/benchmark.h>

#include <vector>

#include "vfm/encoder.hpp"
#include "vfm/kernels.hpp"
#include "vfm/rng.hpp"

namespace k = vfm::kernels;

namespace {

std::vector<double> randv(std::size_t n, std::uint64_t seed) {
  vfm::Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

template <bool Parallel>
void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = randv(n * n, 1), b = randv(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::matmul(a, b, c, n, n, n);
    } else {
      k::serial::matmul(a, b, c, n, n, n);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long long>(2 * n * n * n));
}

template <bool Parallel>
void BM_softmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), cols = rows;
  const auto x = randv(rows * cols, 3);
  std::vector<double> y(rows * cols);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::softmax_rows(x, y, rows, cols);
    } else {
      k::serial::softmax_rows(x, y, rows, cols);
    }
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_gelu(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = randv(n, 4);
  std::vector<double> y(n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::gelu(x, y);
    } else {
      k::serial::gelu(x, y);
    }
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_encode(benchmark::State& state) {
  vfm::EncoderConfig cfg;
  cfg.image_size = 128;
  cfg.patch_size = 16;
  cfg.embed_dim = 192;
  cfg.depth = static_cast<int>(state.range(0));
  cfg.n_heads = 6;
  const vfm::Encoder enc(cfg, vfm::Modality::FUNDUS, 0);
  vfm::Image img(128, 128, 1);
  vfm::Rng rng(5);
  for (auto& v : img.pixels) v = rng.uniform();
  for (auto _ : state) benchmark::DoNotOptimize(enc.encode(img));
}

}  // namespace

BENCHMARK(BM_matmul<true>)->Name("matmul/omp")->Arg(64)->Arg(192)->Arg(384);
BENCHMARK(BM_matmul<false>)->Name("matmul/serial")->Arg(64)->Arg(192)->Arg(384);
BENCHMARK(BM_softmax<true>)->Name("softmax/omp")->Arg(65)->Arg(257);
BENCHMARK(BM_softmax<false>)->Name("softmax/serial")->Arg(65)->Arg(257);
BENCHMARK(BM_gelu<true>)->Name("gelu/omp")->Arg(1 << 16);
BENCHMARK(BM_gelu<false>)->Name("gelu/serial")->Arg(1 << 16);
BENCHMARK(BM_encode)->Name("encode/depth")->Arg(1)->Arg(6)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
