#include <benchmark/benchmark.h>

#include <numeric>
#include <random>

#include "sparsegroup/shuffle.hpp"

using namespace sparsegroup;

namespace {

ImportanceMatrix planted(int n, int blocks, std::uint64_t seed) {
  ImportanceMatrix s(n, n, 0.0);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  const int bs = n / blocks;
  for (int b = 0; b < blocks; ++b)
    for (int r = b * bs; r < (b + 1) * bs; ++r)
      for (int c = b * bs; c < (b + 1) * bs; ++c) s(r, c) = u(rng);
  std::vector<int> pm(static_cast<std::size_t>(n)), qm(static_cast<std::size_t>(n));
  std::iota(pm.begin(), pm.end(), 0);
  std::iota(qm.begin(), qm.end(), 0);
  std::shuffle(pm.begin(), pm.end(), rng);
  std::shuffle(qm.begin(), qm.end(), rng);
  return permute_importance(s, Permutation(pm), Permutation(qm));
}

}  // namespace

static void BM_OptimizePermutations(benchmark::State& state) {
  const int n = int(state.range(0));
  const ImportanceMatrix s = planted(n, 4, 11);
  const RegMatrix cost = build_reg_matrix(n, n, 2, 0.5);
  ShuffleOptions opts;
  opts.restarts = 5;
  for (auto _ : state) {
    ShuffleResult r = optimize_permutations(s, cost, opts);
    benchmark::DoNotOptimize(r.objective);
  }
}
BENCHMARK(BM_OptimizePermutations)->RangeMultiplier(2)->Range(8, 64);

static void BM_BuildRegMatrix(benchmark::State& state) {
  const int n = int(state.range(0));
  for (auto _ : state) {
    RegMatrix r = build_reg_matrix(n, n, std::nullopt, 0.5);
    benchmark::DoNotOptimize(r.m.v.data());
  }
}
BENCHMARK(BM_BuildRegMatrix)->RangeMultiplier(4)->Range(16, 1024);
