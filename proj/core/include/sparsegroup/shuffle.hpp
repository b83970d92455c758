#pragma once

#include <cstdint>
#include <vector>

#include "sparsegroup/group_structure.hpp"
#include "sparsegroup/tensor.hpp"

namespace sparsegroup {

struct ShuffleOptions {
  int max_iters = 50;   // alternation rounds per start
  int restarts = 5;     // extra seeded random starts beyond the identity start
  std::uint64_t seed = 0;
  // Optional warm start; when set, the first pass begins from these
  // permutations instead of the identity.
  std::vector<int> init_p;
  std::vector<int> init_q;
};

struct ShuffleResult {
  Permutation p_out;
  Permutation q_in;
  double objective = 0.0;
  int iterations = 0;
  int restarts_used = 0;
  // Objective after every assignment solve of the winning start,
  // beginning with the value under the initial permutations.
  std::vector<double> trajectory;
};

/// Minimizes contract(P S Q, cost) by alternating exact assignment solves:
/// fix Q and solve for P, then fix P and solve for Q. Each step is an exact
/// minimization of the shared objective in one block of variables, so the
/// objective never increases. Stops on zero improvement or max_iters.
/// Capacity-1 matrices are returned untouched under identity permutations.
ShuffleResult optimize_permutations(const ImportanceMatrix& s,
                                    const RegMatrix& cost,
                                    const ShuffleOptions& opts = {});

/// True iff every entry of P S Q outside the diagonal blocks of U_g is <= tol.
bool is_groupable(const ImportanceMatrix& s, int g, const Permutation& p_out,
                  const Permutation& q_in, double tol);

}  // namespace sparsegroup
