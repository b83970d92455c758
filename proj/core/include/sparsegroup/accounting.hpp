#pragma once

#include <string>
#include <vector>

#include "sparsegroup/tensor.hpp"

namespace sparsegroup {

/// One entry of an abstract architecture description. Conv and linear
/// layers carry cost; pooling changes the tracked spatial size; relu/bn
/// markers are cost-free. mark/recall save and restore the tracked spatial
/// size so parallel branches (e.g. residual downsample convs) can be listed
/// sequentially.
struct ArchLayer {
  enum class Type { Conv, Linear, MaxPool, AvgPool, GlobalPool, Relu, Bn, Mark, Recall };
  Type type = Type::Conv;
  std::string name;
  // conv
  int c_in = 0, c_out = 0, k = 0, stride = 1, padding = 0, groups = 1;
  bool bias = false;
  // linear
  int in = 0, out = 0;
  // pool
  int pool_k = 0, pool_stride = 0, pool_pad = 0;
};

struct ArchSpec {
  std::string name;
  TensorShape input;
  std::vector<ArchLayer> layers;
};

ArchSpec arch_from_json_file(const std::string& path);
ArchSpec arch_from_json_text(const std::string& text);
std::string arch_to_json_text(const ArchSpec& spec);

/// Conv and linear parameters; a conv with G groups needs
/// c_in*c_out*k^2/G weights. BN and activations carry none.
long long count_params(const ArchSpec& spec);

/// One multiply-accumulate counted as one FLOP; convs cost
/// c_in*c_out*k^2*H_out*W_out/G, linear layers in*out. Biases,
/// activations, BN and pooling are uncounted.
long long count_flops(const ArchSpec& spec);

struct ReportRow {
  std::string name;
  int group_level = 1;
  int cardinality = 1;
  long long params_dense = 0;
  long long params_grouped = 0;
  long long flops_dense = 0;
  long long flops_grouped = 0;
};

/// Dense-vs-grouped ledger for per-layer group levels (one per conv, in
/// listing order). rate is the conv-kernel reduction fraction
/// 1 - sum(p_l / 2^{g_l-1}) / sum(p_l), the same arithmetic as the
/// sparsity controller uses.
struct CompressionReport {
  long long params_dense = 0;
  long long params_grouped = 0;
  long long flops_dense = 0;
  long long flops_grouped = 0;
  double rate = 0.0;
  std::vector<ReportRow> rows;
};

CompressionReport compression_report(const ArchSpec& spec,
                                     const std::vector<int>& levels);

/// Built-in architecture descriptions ("resnet50", "resnet101",
/// "densenet201", "resnet20", "resnet56", "resnet110", "micronet").
ArchSpec make_arch_preset(const std::string& name);
std::vector<std::string> arch_preset_names();

}  // namespace sparsegroup
