#include <benchmark/benchmark.h>

#include <random>

#include "repdetect/detect.hpp"
#include "repdetect/knn.hpp"
#include "repdetect/lid.hpp"
#include "repdetect/synthgen.hpp"

using namespace repdetect;

namespace {

MatrixF uniform(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  MatrixF m(rows, cols);
  for (auto& v : m.values()) v = u(rng);
  return m;
}

void BM_KnnSearch(benchmark::State& state, SearchPath path) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  const MatrixF base = uniform(n, d, 1);
  const MatrixF q = uniform(1, d, 2);
  for (auto _ : state) benchmark::DoNotOptimize(knn_search(q.row(0), base, 20, false, path));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK_CAPTURE(BM_KnnSearch, naive, SearchPath::naive)->Args({2000, 32})->Args({2000, 768})->Args({10000, 128});
BENCHMARK_CAPTURE(BM_KnnSearch, blocked, SearchPath::blocked)->Args({2000, 32})->Args({2000, 768})->Args({10000, 128});

void BM_LidEstimate(benchmark::State& state) {
  const MatrixF pool = to_float(gen_ball(static_cast<std::size_t>(state.range(0)), 10'000, 3));
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(lid_estimate(pool.row(seed % 100), pool, 100, 1000, seed++));
}
BENCHMARK(BM_LidEstimate)->Arg(2)->Arg(10)->Arg(64);

void BM_TrainLogistic(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto m = static_cast<std::size_t>(state.range(1));
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  MatrixD x(n, m);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += (x(i, j) = g(rng));
    y[i] = s + g(rng) > 0.0 ? 1 : 0;
  }
  for (auto _ : state) benchmark::DoNotOptimize(train_logistic(x, y));
}
BENCHMARK(BM_TrainLogistic)->Args({800, 3})->Args({800, 4})->Args({8000, 16});

}  // namespace

BENCHMARK_MAIN();
