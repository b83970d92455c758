#include "sparsegroup/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sparsegroup {

Norm norm_from_string(const std::string& s) {
  if (s == "l1" || s == "L1") return Norm::L1;
  if (s == "l2" || s == "L2") return Norm::L2;
  throw std::invalid_argument("unknown norm: " + s);
}

std::string norm_to_string(Norm n) { return n == Norm::L1 ? "l1" : "l2"; }

Permutation::Permutation(std::vector<int> map) : map_(std::move(map)) {
  std::vector<char> seen(map_.size(), 0);
  for (int x : map_) {
    if (x < 0 || std::size_t(x) >= map_.size() || seen[std::size_t(x)])
      throw std::invalid_argument("permutation map is not a bijection");
    seen[std::size_t(x)] = 1;
  }
}

Permutation Permutation::identity(int n) {
  std::vector<int> m(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) m[std::size_t(i)] = i;
  return Permutation(std::move(m));
}

Permutation Permutation::inverse() const {
  std::vector<int> inv(map_.size());
  for (int i = 0; i < size(); ++i) inv[std::size_t(map_[std::size_t(i)])] = i;
  return Permutation(std::move(inv));
}

Permutation Permutation::then(const Permutation& b) const {
  if (size() != b.size())
    throw std::invalid_argument("permutation size mismatch in composition");
  std::vector<int> m(map_.size());
  for (int i = 0; i < size(); ++i) m[std::size_t(i)] = map_[std::size_t(b[i])];
  return Permutation(std::move(m));
}

bool Permutation::is_identity() const {
  for (int i = 0; i < size(); ++i)
    if (map_[std::size_t(i)] != i) return false;
  return true;
}

double Matrix::sum() const {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

void WeightTensor::validate() const {
  if (c_out < 1 || c_in < 1 || k < 1)
    throw std::invalid_argument("weight tensor dims must be >= 1");
  if (data.size() != std::size_t(c_out) * c_in * k * k)
    throw std::invalid_argument("weight tensor data length mismatch");
  for (double x : data)
    if (!std::isfinite(x))
      throw std::invalid_argument("weight tensor has non-finite values");
}

ImportanceMatrix importance_matrix(const WeightTensor& w, Norm norm) {
  w.validate();
  ImportanceMatrix s(w.c_out, w.c_in);
  const int kk = w.k * w.k;
  for (int j = 0; j < w.c_out; ++j) {
    for (int i = 0; i < w.c_in; ++i) {
      const double* slice = w.data.data() + w.slice_offset(j, i);
      double acc = 0.0;
      if (norm == Norm::L1) {
        for (int t = 0; t < kk; ++t) acc += std::abs(slice[t]);
      } else {
        for (int t = 0; t < kk; ++t) acc += slice[t] * slice[t];
        acc = std::sqrt(acc);
      }
      s(j, i) = acc;
    }
  }
  return s;
}

ImportanceMatrix permute_importance(const ImportanceMatrix& s,
                                    const Permutation& p,
                                    const Permutation& q) {
  if (p.size() != s.rows || q.size() != s.cols)
    throw std::invalid_argument("permutation size does not match matrix");
  ImportanceMatrix out(s.rows, s.cols);
  for (int a = 0; a < s.rows; ++a)
    for (int b = 0; b < s.cols; ++b) out(a, b) = s(p[a], q[b]);
  return out;
}

double contract(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("contract requires equal shapes");
  double acc = 0.0;
  for (std::size_t t = 0; t < a.v.size(); ++t) acc += a.v[t] * b.v[t];
  return acc;
}

WeightTensor permute_weights(const WeightTensor& w, const Permutation& p,
                             const Permutation& q) {
  if (p.size() != w.c_out || q.size() != w.c_in)
    throw std::invalid_argument("permutation size does not match weights");
  WeightTensor out(w.c_out, w.c_in, w.k);
  const std::size_t kk = std::size_t(w.k) * w.k;
  for (int a = 0; a < w.c_out; ++a) {
    for (int b = 0; b < w.c_in; ++b) {
      const double* src = w.data.data() + w.slice_offset(p[a], q[b]);
      double* dst = out.data.data() + out.slice_offset(a, b);
      for (std::size_t t = 0; t < kk; ++t) dst[t] = src[t];
    }
  }
  return out;
}

std::vector<double> permute_vector(const std::vector<double>& b,
                                   const Permutation& p) {
  if (p.size() != int(b.size()))
    throw std::invalid_argument("permutation size does not match vector");
  std::vector<double> out(b.size());
  for (int i = 0; i < p.size(); ++i) out[std::size_t(i)] = b[std::size_t(p[i])];
  return out;
}

namespace {

// Shared kernel for the "wide output" shapes (n is the batched spatial
// axis): 4x16 register tiles accumulated across the whole reduction, with
// a scalar fallback for the row/column tails.
template <typename AIndex>
void matmul_rows_chunked(const double* __restrict a, const double* __restrict b,
                         double* __restrict c, int m, int k, int n, int ldb,
                         int ldc, AIndex a_at) {
  constexpr int MR = 4, JT = 16;

  auto simple = [&](int i0, int i1, int j0, int j1) {
    for (int i = i0; i < i1; ++i) {
      double* crow = c + std::size_t(i) * ldc;
      for (int j = j0; j < j1; ++j) crow[j] = 0.0;
      for (int l = 0; l < k; ++l) {
        const double al = a_at(a, i, l);
        const double* __restrict brow = b + std::size_t(l) * ldb;
        for (int j = j0; j < j1; ++j) crow[j] += al * brow[j];
      }
    }
  };

  int i = 0;
  for (; i + MR <= m; i += MR) {
    int j = 0;
    for (; j + JT <= n; j += JT) {
      double acc0[JT] = {}, acc1[JT] = {}, acc2[JT] = {}, acc3[JT] = {};
      for (int l = 0; l < k; ++l) {
        const double* __restrict brow = b + std::size_t(l) * ldb + j;
        const double a0 = a_at(a, i + 0, l);
        const double a1 = a_at(a, i + 1, l);
        const double a2 = a_at(a, i + 2, l);
        const double a3 = a_at(a, i + 3, l);
        for (int t = 0; t < JT; ++t) {
          const double bt = brow[t];
          acc0[t] += a0 * bt;
          acc1[t] += a1 * bt;
          acc2[t] += a2 * bt;
          acc3[t] += a3 * bt;
        }
      }
      double* crow = c + std::size_t(i) * ldc + j;
      for (int t = 0; t < JT; ++t) crow[t] = acc0[t];
      crow += ldc;
      for (int t = 0; t < JT; ++t) crow[t] = acc1[t];
      crow += ldc;
      for (int t = 0; t < JT; ++t) crow[t] = acc2[t];
      crow += ldc;
      for (int t = 0; t < JT; ++t) crow[t] = acc3[t];
    }
    if (j < n) simple(i, i + MR, j, n);
  }
  if (i < m) simple(i, m, 0, n);
}

}  // namespace

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  matmul_rows_chunked(a, b, c, m, k, n, n, n,
                      [k](const double* p, int i, int l) {
                        return p[std::size_t(i) * k + l];
                      });
}

void matmul_nn_strided(const double* a, const double* b, double* c, int m,
                       int k, int n, int ldb, int ldc) {
  matmul_rows_chunked(a, b, c, m, k, n, ldb, ldc,
                      [k](const double* p, int i, int l) {
                        return p[std::size_t(i) * k + l];
                      });
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  // c[k x n] = a[m x k]^T * b[m x n]: rows of c index the k axis
  matmul_rows_chunked(a, b, c, k, m, n, n, n,
                      [k](const double* p, int i, int l) {
                        return p[std::size_t(l) * k + i];
                      });
}

void transpose(const double* src, double* dst, int rows, int cols) {
  constexpr int kBlock = 32;
  for (int r0 = 0; r0 < rows; r0 += kBlock) {
    const int r1 = std::min(r0 + kBlock, rows);
    for (int c0 = 0; c0 < cols; c0 += kBlock) {
      const int c1 = std::min(c0 + kBlock, cols);
      for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c)
          dst[std::size_t(c) * rows + r] = src[std::size_t(r) * cols + c];
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  // long contiguous reductions over l: 4x2 output tiles with lane-wise
  // accumulators the compiler turns into vector FMAs
  constexpr int MR = 4, NR = 2, VL = 8;
  auto dot = [k](const double* x, const double* y) {
    double acc = 0.0;
    for (int l = 0; l < k; ++l) acc += x[l] * y[l];
    return acc;
  };
  int i = 0;
  for (; i + MR <= m; i += MR) {
    const double* arow[MR];
    for (int u = 0; u < MR; ++u) arow[u] = a + std::size_t(i + u) * k;
    int j = 0;
    for (; j + NR <= n; j += NR) {
      const double* brow[NR];
      for (int v = 0; v < NR; ++v) brow[v] = b + std::size_t(j + v) * k;
      double acc[MR][NR][VL] = {};
      int l = 0;
      for (; l + VL <= k; l += VL) {
        for (int u = 0; u < MR; ++u)
          for (int v = 0; v < NR; ++v)
            for (int t = 0; t < VL; ++t)
              acc[u][v][t] += arow[u][l + t] * brow[v][l + t];
      }
      const int l_tail = l;
      for (int u = 0; u < MR; ++u) {
        for (int v = 0; v < NR; ++v) {
          double s = 0.0;
          for (int t = 0; t < VL; ++t) s += acc[u][v][t];
          for (int t = l_tail; t < k; ++t) s += arow[u][t] * brow[v][t];
          c[std::size_t(i + u) * n + j + v] = s;
        }
      }
    }
    for (; j < n; ++j)
      for (int u = 0; u < MR; ++u)
        c[std::size_t(i + u) * n + j] = dot(arow[u], b + std::size_t(j) * k);
  }
  for (; i < m; ++i)
    for (int j = 0; j < n; ++j)
      c[std::size_t(i) * n + j] =
          dot(a + std::size_t(i) * k, b + std::size_t(j) * k);
}

}  // namespace sparsegroup
