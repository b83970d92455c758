#include "sparsegroup/regularizer.hpp"

#include <cmath>
#include <stdexcept>

namespace sparsegroup {

double reg_loss(const ImportanceMatrix& s_perm, const RegMatrix& reg) {
  return contract(s_perm, reg.m);
}

WeightTensor reg_subgradient(const WeightTensor& w, const Permutation& p_out,
                             const Permutation& q_in, const RegMatrix& reg,
                             Norm norm) {
  if (reg.m.rows != w.c_out || reg.m.cols != w.c_in)
    throw std::invalid_argument("reg matrix shape does not match weights");
  if (p_out.size() != w.c_out || q_in.size() != w.c_in)
    throw std::invalid_argument("permutation size does not match weights");

  const Permutation p_inv = p_out.inverse();
  const Permutation q_inv = q_in.inverse();
  WeightTensor grad(w.c_out, w.c_in, w.k);
  const int kk = w.k * w.k;
  for (int j = 0; j < w.c_out; ++j) {
    for (int i = 0; i < w.c_in; ++i) {
      const double coef = reg.m(p_inv[j], q_inv[i]);
      if (coef == 0.0) continue;
      const double* slice = w.data.data() + w.slice_offset(j, i);
      double* out = grad.data.data() + grad.slice_offset(j, i);
      if (norm == Norm::L1) {
        for (int t = 0; t < kk; ++t)
          out[t] = slice[t] > 0.0 ? coef : (slice[t] < 0.0 ? -coef : 0.0);
      } else {
        double nrm = 0.0;
        for (int t = 0; t < kk; ++t) nrm += slice[t] * slice[t];
        nrm = std::sqrt(nrm);
        if (nrm == 0.0) continue;
        for (int t = 0; t < kk; ++t) out[t] = coef * slice[t] / nrm;
      }
    }
  }
  return grad;
}

double model_sparsity(const std::vector<int>& levels,
                      const std::vector<LayerSpec>& specs) {
  if (levels.size() != specs.size())
    throw std::invalid_argument("one group level per conv layer required");
  double dense = 0.0, reduced = 0.0;
  for (std::size_t l = 0; l < specs.size(); ++l) {
    const int capacity = max_group_level(specs[l].c_out, specs[l].c_in);
    if (levels[l] < 1 || levels[l] > capacity)
      throw std::invalid_argument("group level exceeds layer capacity");
    const double p = double(specs[l].param_count());
    dense += p;
    reduced += p / double(1 << (levels[l] - 1));
  }
  if (dense == 0.0) return 0.0;
  return 1.0 - reduced / dense;
}

SparsityState lambda_step(const SparsityState& state, double current_sparsity) {
  if (state.epoch < 1 || state.epoch > state.total_epochs)
    throw std::invalid_argument("epoch outside [1, total_epochs]");
  SparsityState next = state;
  const double expected_gain =
      (state.target - state.last_sparsity) /
      double(state.total_epochs - state.epoch + 1);
  if (current_sparsity - state.last_sparsity < expected_gain) {
    next.lambda = state.lambda + state.delta_lambda;
  } else if (current_sparsity > state.target) {
    next.lambda = std::max(0.0, state.lambda - state.delta_lambda);
  }
  next.last_sparsity = current_sparsity;
  next.epoch = state.epoch + 1;
  return next;
}

}  // namespace sparsegroup
