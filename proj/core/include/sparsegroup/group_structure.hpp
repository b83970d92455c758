#pragma once

#include <optional>

#include "sparsegroup/tensor.hpp"

namespace sparsegroup {

/// Structured regularization matrix: banded penalty decaying by `power`
/// toward the diagonal blocks. level == nullopt means "max", i.e. the
/// LP cost matrix (recursion limited only by the matrix dimensions).
struct RegMatrix {
  Matrix m;
  std::optional<int> level;  // nullopt = max
  double power = 0.5;
};

/// 0/1 mask of the connections that survive at group level g:
/// 2^{g-1} equally sized all-ones diagonal blocks.
struct RelationshipMatrix {
  Matrix m;
  int level = 1;
};

/// u + 1, where 2^u is the largest power of two dividing gcd(c_out, c_in).
/// Group levels 1..u+1 are realizable for a (c_out x c_in) connection matrix.
int max_group_level(int c_out, int c_in);

/// Recursive band construction: the two off-diagonal half-blocks get the
/// current value (starting at 1), then the two diagonal half-blocks are
/// filled recursively with value * power. The recursion stops when the
/// level budget is exhausted or a block dimension becomes odd (size 1
/// included). With level == nullopt there is no budget.
RegMatrix build_reg_matrix(int c_out, int c_in, std::optional<int> level,
                           double power = 0.5);

RelationshipMatrix build_relationship_matrix(int c_out, int c_in, int level);

/// Largest g in [1, capacity] with contract(s_perm, U_g) >= p * sum(s_perm).
/// g = 1 is always feasible since U_1 is all ones.
int group_level(const ImportanceMatrix& s_perm, double p_threshold,
                int capacity);

/// contract(s_perm, cost.m); zero iff s_perm is block diagonal to the
/// finest level the cost penalizes.
double block_diagonality_score(const ImportanceMatrix& s_perm,
                               const RegMatrix& cost);

/// Importance mass inside the 2^{level-1} diagonal blocks (the U_g support),
/// computed without materializing U_g.
double diagonal_block_mass(const ImportanceMatrix& s_perm, int level);

}  // namespace sparsegroup
