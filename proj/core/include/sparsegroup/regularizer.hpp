#pragma once

#include <string>
#include <vector>

#include "sparsegroup/group_structure.hpp"
#include "sparsegroup/tensor.hpp"

namespace sparsegroup {

/// Abstract convolution layer description used for sparsity accounting
/// and pipeline configuration.
struct LayerSpec {
  std::string name;
  int c_in = 0;
  int c_out = 0;
  int k = 0;
  int stride = 1;
  TensorShape in_shape;
  bool has_shortcut_role = false;

  long long param_count() const {
    return 1LL * c_in * c_out * k * k;
  }
};

/// Structured L1 penalty: contract(S', R_g). The total training loss is
/// L_data + lambda * sum over layers of reg_loss.
double reg_loss(const ImportanceMatrix& s_perm, const RegMatrix& reg);

/// Subgradient of reg_loss w.r.t. the dense weights: for kernel slice (j,i)
/// the coefficient is the reg entry at the permuted position, times the norm
/// subgradient of the slice (sign(W) for L1, W/||W||_2 for L2; an exactly
/// zero slice contributes a zero subgradient).
WeightTensor reg_subgradient(const WeightTensor& w, const Permutation& p_out,
                             const Permutation& q_in, const RegMatrix& reg,
                             Norm norm = Norm::L1);

/// Reduction fraction of convolution parameters under per-layer group
/// levels: 1 - sum(p_l / 2^{g_l - 1}) / sum(p_l).
double model_sparsity(const std::vector<int>& levels,
                      const std::vector<LayerSpec>& specs);

/// Controller state for the dynamic penalty coefficient.
struct SparsityState {
  double lambda = 0.0;
  double delta_lambda = 2e-6;
  int epoch = 1;           // t, 1-based
  int total_epochs = 1;    // N
  double target = 0.5;     // r
  double last_sparsity = 0.0;  // r_{t-1}, starts at 0
};

/// One controller step after epoch t: if the expected linear sparsity gain
/// (target - last) / (N - t + 1) was not met, lambda grows by delta; else if
/// the sparsity overshoots the target, lambda shrinks by delta (clamped at
/// zero); otherwise it holds. Advances epoch and last_sparsity.
SparsityState lambda_step(const SparsityState& state, double current_sparsity);

}  // namespace sparsegroup
