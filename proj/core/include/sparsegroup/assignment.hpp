#pragma once

#include "sparsegroup/tensor.hpp"

namespace sparsegroup {

/// Square, finite LP cost operand.
struct CostMatrix {
  Matrix m;

  explicit CostMatrix(Matrix mat);
  int size() const { return m.rows; }
};

struct AssignmentSolution {
  Permutation perm;   // row a is assigned column perm[a]
  double objective = 0.0;
};

/// Exact minimum-cost assignment via shortest augmenting paths with
/// dual potentials (O(n^3)). The relaxation over doubly-stochastic
/// matrices always has a vertex optimum, so a permutation is returned
/// with the exact optimal objective. Deterministic for fixed input.
AssignmentSolution solve(const CostMatrix& cost);

/// Exhaustive reference solver, n <= 9. Returns the lexicographically
/// smallest optimal permutation.
AssignmentSolution brute_force_solve(const CostMatrix& cost);

}  // namespace sparsegroup
