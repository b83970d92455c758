#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "support/oracles.hpp"
#include "sparsegroup/assignment.hpp"

using namespace sparsegroup;

namespace {

Matrix from_rows(const std::vector<std::vector<double>>& rows) {
  Matrix m(int(rows.size()), int(rows[0].size()));
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) m(r, c) = rows[std::size_t(r)][std::size_t(c)];
  return m;
}

Matrix random_int_cost(int n, std::mt19937_64& rng, int lo, int hi) {
  Matrix m(n, n);
  std::uniform_int_distribution<int> dist(lo, hi);
  for (double& x : m.v) x = double(dist(rng));
  return m;
}

}  // namespace

TEST_CASE("solve: free diagonal and free anti-diagonal") {
  {
    const AssignmentSolution s = solve(CostMatrix(from_rows({{0, 1}, {1, 0}})));
    CHECK(s.perm == Permutation({0, 1}));
    CHECK(s.objective == 0.0);
  }
  {
    const AssignmentSolution s = solve(CostMatrix(from_rows({{1, 0}, {0, 1}})));
    CHECK(s.perm == Permutation({1, 0}));
    CHECK(s.objective == 0.0);
  }
}

TEST_CASE("solve matches exhaustive optimum on random 6x6 integer costs") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const CostMatrix cost(random_int_cost(6, rng, 0, 9));
    CHECK(solve(cost).objective == brute_force_solve(cost).objective);
  }
}

TEST_CASE("brute force: singleton and all-ties") {
  const AssignmentSolution one = brute_force_solve(CostMatrix(from_rows({{5}})));
  CHECK(one.perm == Permutation({0}));
  CHECK(one.objective == 5.0);

  const AssignmentSolution ties =
      brute_force_solve(CostMatrix(Matrix(4, 4, 3.0)));
  CHECK(ties.perm == Permutation({0, 1, 2, 3}));  // lexicographic tie rule
  CHECK(ties.objective == 12.0);

  CHECK_THROWS_AS(brute_force_solve(CostMatrix(Matrix(10, 10, 0.0))),
                  std::invalid_argument);
}

TEST_CASE("solve agrees with brute force on 200 random 7x7 instances") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const CostMatrix cost(random_int_cost(7, rng, 0, 99));
    CHECK(solve(cost).objective == brute_force_solve(cost).objective);
  }
}

TEST_CASE("returned solution is always a permutation") {
  std::mt19937_64 rng(5);
  for (int n : {2, 3, 5, 8, 17}) {
    const CostMatrix cost(oracles::random_matrix(n, n, rng, -3.0, 3.0));
    const AssignmentSolution s = solve(cost);
    CHECK(s.perm.size() == n);  // Permutation construction enforces bijection
    double obj = 0.0;
    for (int a = 0; a < n; ++a) obj += cost.m(a, s.perm[a]);
    CHECK(s.objective == obj);
  }
}

TEST_CASE("row shift leaves the argmin set unchanged") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix cost = random_int_cost(5, rng, 0, 20);
    const AssignmentSolution before = solve(CostMatrix(cost));
    const double shift = 7.0;
    for (int c = 0; c < 5; ++c) cost(2, c) += shift;
    const AssignmentSolution after = solve(CostMatrix(cost));
    CHECK(after.objective == before.objective + shift);
  }
}

TEST_CASE("solve is deterministic") {
  std::mt19937_64 rng(12);
  const CostMatrix cost(random_int_cost(9, rng, 0, 4));  // many ties
  const AssignmentSolution a = solve(cost);
  const AssignmentSolution b = solve(cost);
  CHECK(a.perm == b.perm);
  CHECK(a.objective == b.objective);
}

TEST_CASE("cost validation") {
  CHECK_THROWS_AS(CostMatrix(Matrix(2, 3, 0.0)), std::invalid_argument);
  Matrix bad(2, 2, 0.0);
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(CostMatrix(std::move(bad)), std::invalid_argument);
}
