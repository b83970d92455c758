#include "sparsegroup/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace sparsegroup {

CostMatrix::CostMatrix(Matrix mat) : m(std::move(mat)) {
  if (m.rows != m.cols || m.rows < 1)
    throw std::invalid_argument("cost matrix must be square and non-empty");
  for (double x : m.v)
    if (!std::isfinite(x))
      throw std::invalid_argument("cost matrix has non-finite entries");
}

namespace {

double selected_objective(const Matrix& cost, const std::vector<int>& perm) {
  double acc = 0.0;
  for (int a = 0; a < cost.rows; ++a) acc += cost(a, perm[std::size_t(a)]);
  return acc;
}

}  // namespace

AssignmentSolution solve(const CostMatrix& cost) {
  const int n = cost.size();
  if (n == 1)
    return {Permutation::identity(1), cost.m(0, 0)};

  const double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays; p[j] = row matched to column j, column 0 is virtual.
  std::vector<double> u(std::size_t(n) + 1, 0.0), v(std::size_t(n) + 1, 0.0);
  std::vector<int> p(std::size_t(n) + 1, 0), way(std::size_t(n) + 1, 0);
  std::vector<double> minv(std::size_t(n) + 1);
  std::vector<char> used(std::size_t(n) + 1);

  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[std::size_t(j0)] = 1;
      const int i0 = p[std::size_t(j0)];
      int j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[std::size_t(j)]) continue;
        const double cur = cost.m(i0 - 1, j - 1) - u[std::size_t(i0)] - v[std::size_t(j)];
        if (cur < minv[std::size_t(j)]) {
          minv[std::size_t(j)] = cur;
          way[std::size_t(j)] = j0;
        }
        if (minv[std::size_t(j)] < delta) {
          delta = minv[std::size_t(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[std::size_t(j)]) {
          u[std::size_t(p[std::size_t(j)])] += delta;
          v[std::size_t(j)] -= delta;
        } else {
          minv[std::size_t(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[std::size_t(j0)] != 0);
    // Unwind the augmenting path.
    do {
      const int j1 = way[std::size_t(j0)];
      p[std::size_t(j0)] = p[std::size_t(j1)];
      j0 = j1;
    } while (j0);
  }

  std::vector<int> perm(std::size_t(n), -1);
  for (int j = 1; j <= n; ++j) perm[std::size_t(p[std::size_t(j)]) - 1] = j - 1;
  AssignmentSolution sol{Permutation(std::move(perm)), 0.0};
  sol.objective = selected_objective(cost.m, sol.perm.map());
  return sol;
}

AssignmentSolution brute_force_solve(const CostMatrix& cost) {
  const int n = cost.size();
  if (n > 9)
    throw std::invalid_argument("brute_force_solve limited to n <= 9");

  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_obj = selected_objective(cost.m, perm);
  while (std::next_permutation(perm.begin(), perm.end())) {
    const double obj = selected_objective(cost.m, perm);
    if (obj < best_obj) {  // strict: ties keep the lexicographically first
      best_obj = obj;
      best = perm;
    }
  }
  return {Permutation(std::move(best)), best_obj};
}

}  // namespace sparsegroup
