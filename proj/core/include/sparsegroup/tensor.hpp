#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace sparsegroup {

enum class Norm { L1, L2 };

Norm norm_from_string(const std::string& s);
std::string norm_to_string(Norm n);

/// Spatial shape of a feature map (channels x height x width).
struct TensorShape {
  int channels = 0;
  int height = 0;
  int width = 0;

  bool operator==(const TensorShape&) const = default;
  std::size_t numel() const {
    return std::size_t(channels) * height * width;
  }
};

/// Bijection on channel indices, stored as an index array:
/// position i maps to source index map()[i].
class Permutation {
 public:
  Permutation() = default;
  explicit Permutation(std::vector<int> map);
  static Permutation identity(int n);

  int size() const { return int(map_.size()); }
  int operator[](int i) const { return map_[std::size_t(i)]; }
  const std::vector<int>& map() const { return map_; }

  Permutation inverse() const;
  /// (a.then(b))[i] == a[b[i]]: apply a, then reindex by b.
  Permutation then(const Permutation& b) const;
  bool is_identity() const;

  bool operator==(const Permutation&) const = default;

 private:
  std::vector<int> map_;
};

/// Dense row-major matrix. Used for importance matrices, LP costs and
/// the structured regularization masks alike.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c), v(std::size_t(r) * std::size_t(c), fill) {}

  double& operator()(int r, int c) { return v[std::size_t(r) * cols + c]; }
  double operator()(int r, int c) const { return v[std::size_t(r) * cols + c]; }

  double sum() const;
  bool same_shape(const Matrix& o) const {
    return rows == o.rows && cols == o.cols;
  }
  bool operator==(const Matrix&) const = default;
};

using ImportanceMatrix = Matrix;

/// 4-D convolution weights, row-major over (c_out, c_in, k, k).
struct WeightTensor {
  int c_out = 0;
  int c_in = 0;
  int k = 0;
  std::vector<double> data;

  WeightTensor() = default;
  WeightTensor(int co, int ci, int kk, double fill = 0.0)
      : c_out(co), c_in(ci), k(kk),
        data(std::size_t(co) * ci * kk * kk, fill) {}

  std::size_t slice_offset(int j, int i) const {
    return (std::size_t(j) * c_in + i) * k * k;
  }
  double& at(int j, int i, int ky, int kx) {
    return data[slice_offset(j, i) + std::size_t(ky) * k + kx];
  }
  double at(int j, int i, int ky, int kx) const {
    return data[slice_offset(j, i) + std::size_t(ky) * k + kx];
  }

  /// Throws std::invalid_argument on bad dims, size mismatch or non-finite values.
  void validate() const;
};

/// S[j][i] = norm of the (j,i) kernel slice of w. Default norm is L1.
ImportanceMatrix importance_matrix(const WeightTensor& w, Norm norm = Norm::L1);

/// S'[a][b] = S[p[a]][q[b]]; equivalent to the matrix product P*S*Q with
/// P[a][j] = 1 iff j == p[a] and Q[i][b] = 1 iff i == q[b].
ImportanceMatrix permute_importance(const ImportanceMatrix& s,
                                    const Permutation& p,
                                    const Permutation& q);

/// Element-wise multiply-and-sum of two equally shaped matrices.
double contract(const Matrix& a, const Matrix& b);

/// Kernel-slice relabeling consistent with permute_importance:
/// W'[a][b] slice = W[p[a]][q[b]] slice.
WeightTensor permute_weights(const WeightTensor& w, const Permutation& p,
                             const Permutation& q);

/// b'[a] = b[p[a]].
std::vector<double> permute_vector(const std::vector<double>& b,
                                   const Permutation& p);

// Dense matmul kernels shared by the conv layers and subproblem builders.
// All matrices are row-major contiguous. c is overwritten.
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n);
// c[m][n] = a[m][k] * b[n][k]^T
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
// c[k][n] = a[m][k]^T * b[m][n]
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);
// as matmul_nn but with explicit row strides for b and c
void matmul_nn_strided(const double* a, const double* b, double* c, int m,
                       int k, int n, int ldb, int ldc);
// dst[cols x rows] = src[rows x cols]^T
void transpose(const double* src, double* dst, int rows, int cols);

}  // namespace sparsegroup
