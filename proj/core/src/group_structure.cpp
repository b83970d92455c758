#include "sparsegroup/group_structure.hpp"

#include <numeric>
#include <stdexcept>

namespace sparsegroup {

int max_group_level(int c_out, int c_in) {
  if (c_out < 1 || c_in < 1)
    throw std::invalid_argument("channel counts must be >= 1");
  int g = std::gcd(c_out, c_in);
  int u = 0;
  while (g % 2 == 0) {
    g /= 2;
    ++u;
  }
  return u + 1;
}

namespace {

// In-place recursion over the (r0, c0) + (h x w) window of m.
void assign_band(Matrix& m, int r0, int c0, int h, int w, double val,
                 std::optional<int> budget, double power) {
  if (budget && *budget <= 0) return;
  if (h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0) return;
  const int h2 = h / 2, w2 = w / 2;
  for (int r = r0 + h2; r < r0 + h; ++r)
    for (int c = c0; c < c0 + w2; ++c) m(r, c) = val;
  for (int r = r0; r < r0 + h2; ++r)
    for (int c = c0 + w2; c < c0 + w; ++c) m(r, c) = val;
  const std::optional<int> next = budget ? std::optional<int>(*budget - 1) : std::nullopt;
  assign_band(m, r0 + h2, c0 + w2, h2, w2, val * power, next, power);
  assign_band(m, r0, c0, h2, w2, val * power, next, power);
}

}  // namespace

RegMatrix build_reg_matrix(int c_out, int c_in, std::optional<int> level,
                           double power) {
  const int capacity = max_group_level(c_out, c_in);
  if (level && (*level < 1 || *level > capacity))
    throw std::invalid_argument("group level outside capacity");
  if (!(power > 0.0 && power <= 1.0))
    throw std::invalid_argument("power must lie in (0, 1]");
  RegMatrix reg{Matrix(c_out, c_in, 0.0), level, power};
  assign_band(reg.m, 0, 0, c_out, c_in, 1.0, level, power);
  return reg;
}

RelationshipMatrix build_relationship_matrix(int c_out, int c_in, int level) {
  const int capacity = max_group_level(c_out, c_in);
  if (level < 1 || level > capacity)
    throw std::invalid_argument("group level outside capacity");
  const int blocks = 1 << (level - 1);
  if (c_out % blocks != 0 || c_in % blocks != 0)
    throw std::invalid_argument("dims not divisible by 2^(level-1)");
  RelationshipMatrix u{Matrix(c_out, c_in, 0.0), level};
  const int bh = c_out / blocks, bw = c_in / blocks;
  for (int n = 0; n < blocks; ++n)
    for (int r = n * bh; r < (n + 1) * bh; ++r)
      for (int c = n * bw; c < (n + 1) * bw; ++c) u.m(r, c) = 1.0;
  return u;
}

double diagonal_block_mass(const ImportanceMatrix& s_perm, int level) {
  const int blocks = 1 << (level - 1);
  if (s_perm.rows % blocks != 0 || s_perm.cols % blocks != 0)
    throw std::invalid_argument("dims not divisible by 2^(level-1)");
  const int bh = s_perm.rows / blocks, bw = s_perm.cols / blocks;
  double mass = 0.0;
  for (int n = 0; n < blocks; ++n)
    for (int r = n * bh; r < (n + 1) * bh; ++r)
      for (int c = n * bw; c < (n + 1) * bw; ++c) mass += s_perm(r, c);
  return mass;
}

int group_level(const ImportanceMatrix& s_perm, double p_threshold,
                int capacity) {
  if (!(p_threshold > 0.0 && p_threshold <= 1.0))
    throw std::invalid_argument("threshold must lie in (0, 1]");
  if (capacity < 1 || capacity > max_group_level(s_perm.rows, s_perm.cols))
    throw std::invalid_argument("capacity outside the realizable range");
  const double total = s_perm.sum();
  int g = 1;  // U_1 is all ones, so level 1 always qualifies
  for (int cand = 2; cand <= capacity; ++cand) {
    if (diagonal_block_mass(s_perm, cand) >= p_threshold * total)
      g = cand;
    else
      break;  // block mass is nonincreasing in g
  }
  return g;
}

double block_diagonality_score(const ImportanceMatrix& s_perm,
                               const RegMatrix& cost) {
  return contract(s_perm, cost.m);
}

}  // namespace sparsegroup
