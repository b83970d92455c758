#include <benchmark/benchmark.h>

#include <random>

#include "sparsegroup/assignment.hpp"

using namespace sparsegroup;

namespace {

Matrix random_cost(int n, std::uint64_t seed) {
  Matrix m(n, n);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  for (double& x : m.v) x = u(rng);
  return m;
}

}  // namespace

static void BM_AssignmentSolve(benchmark::State& state) {
  const int n = int(state.range(0));
  const CostMatrix cost(random_cost(n, 7));
  for (auto _ : state) {
    AssignmentSolution s = solve(cost);
    benchmark::DoNotOptimize(s.objective);
  }
  state.SetComplexityN(n);
}
BENCHMARK(BM_AssignmentSolve)->RangeMultiplier(2)->Range(8, 256)->Complexity();

static void BM_BruteForce(benchmark::State& state) {
  const int n = int(state.range(0));
  const CostMatrix cost(random_cost(n, 7));
  for (auto _ : state) {
    AssignmentSolution s = brute_force_solve(cost);
    benchmark::DoNotOptimize(s.objective);
  }
}
BENCHMARK(BM_BruteForce)->DenseRange(5, 8);
