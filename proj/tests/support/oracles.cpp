#include "support/oracles.hpp"
#include <algorithm>

#include <numeric>

#include "sparsegroup/group_structure.hpp"

namespace oracles {

namespace {

void paste(Matrix& dst, const Matrix& src, int r0, int c0) {
  for (int r = 0; r < src.rows; ++r)
    for (int c = 0; c < src.cols; ++c) dst(r0 + r, c0 + c) = src(r, c);
}

Matrix assign_val(int dim1, int dim2, double val, std::optional<int> level,
                  double power) {
  Matrix arr(dim1, dim2, 0.0);
  if (level.has_value() && *level <= 0) return arr;
  if (dim1 < 2 || dim2 < 2 || dim1 % 2 != 0 || dim2 % 2 != 0) return arr;
  const int h1 = dim1 / 2, h2 = dim2 / 2;
  for (int r = h1; r < dim1; ++r)
    for (int c = 0; c < h2; ++c) arr(r, c) = val;
  for (int r = 0; r < h1; ++r)
    for (int c = h2; c < dim2; ++c) arr(r, c) = val;
  const std::optional<int> next =
      level.has_value() ? std::optional<int>(*level - 1) : std::nullopt;
  paste(arr, assign_val(h1, h2, val * power, next, power), h1, h2);
  paste(arr, assign_val(h1, h2, val * power, next, power), 0, 0);
  return arr;
}

}  // namespace

Matrix struc_reg(int dim1, int dim2, std::optional<int> level, double power) {
  return assign_val(dim1, dim2, 1.0, level, power);
}

Matrix relationship(int dim1, int dim2, int level) {
  if (level <= 1) return Matrix(dim1, dim2, 1.0);
  Matrix m(dim1, dim2, 0.0);
  paste(m, relationship(dim1 / 2, dim2 / 2, level - 1), 0, 0);
  paste(m, relationship(dim1 / 2, dim2 / 2, level - 1), dim1 / 2, dim2 / 2);
  return m;
}

int group_level_scan(const ImportanceMatrix& s_perm, double p, int capacity) {
  const double total = [&] {
    double acc = 0.0;
    for (double x : s_perm.v) acc += x;
    return acc;
  }();
  int best = 1;
  for (int g = 1; g <= capacity; ++g) {
    if (contract_naive(s_perm, relationship(s_perm.rows, s_perm.cols, g)) >=
        p * total)
      best = std::max(best, g);
  }
  return best;
}

FeatureMap conv_naive(const sparsegroup::ConvLayer& layer,
                      const FeatureMap& f) {
  const int k = layer.w.k;
  const int Ho = (f.shape.height + 2 * layer.pad - k) / layer.stride + 1;
  const int Wo = (f.shape.width + 2 * layer.pad - k) / layer.stride + 1;
  FeatureMap out(sparsegroup::TensorShape{layer.w.c_out, Ho, Wo});
  for (int j = 0; j < layer.w.c_out; ++j) {
    for (int p = 0; p < Ho; ++p) {
      for (int q = 0; q < Wo; ++q) {
        double acc = layer.bias[std::size_t(j)];
        for (int i = 0; i < layer.w.c_in; ++i) {
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const int y = p * layer.stride + ky - layer.pad;
              const int x = q * layer.stride + kx - layer.pad;
              if (y < 0 || y >= f.shape.height || x < 0 || x >= f.shape.width)
                continue;
              acc += layer.w.at(j, i, ky, kx) * f.at(i, y, x);
            }
          }
        }
        out.at(j, p, q) = acc;
      }
    }
  }
  return out;
}

double contract_naive(const Matrix& a, const Matrix& b) {
  double acc = 0.0;
  for (int r = 0; r < a.rows; ++r)
    for (int c = 0; c < a.cols; ++c) acc += a(r, c) * b(r, c);
  return acc;
}

ImportanceMatrix planted_instance(int n, int g_blocks, std::mt19937_64& rng) {
  ImportanceMatrix s(n, n, 0.0);
  std::uniform_real_distribution<double> val(0.5, 1.5);
  const int bs = n / g_blocks;
  for (int b = 0; b < g_blocks; ++b)
    for (int r = b * bs; r < (b + 1) * bs; ++r)
      for (int c = b * bs; c < (b + 1) * bs; ++c) s(r, c) = val(rng);

  std::vector<int> pm(static_cast<std::size_t>(n)), qm(static_cast<std::size_t>(n));
  std::iota(pm.begin(), pm.end(), 0);
  std::iota(qm.begin(), qm.end(), 0);
  std::shuffle(pm.begin(), pm.end(), rng);
  std::shuffle(qm.begin(), qm.end(), rng);
  return permute_importance(s, sparsegroup::Permutation(pm),
                            sparsegroup::Permutation(qm));
}

Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double lo,
                     double hi) {
  Matrix m(rows, cols);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& x : m.v) x = dist(rng);
  return m;
}

}  // namespace oracles
