#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sparsegroup/micronet.hpp"
#include "sparsegroup/regularizer.hpp"
#include "sparsegroup/shuffle.hpp"
#include "sparsegroup/tensor.hpp"

namespace sparsegroup {

struct PlanLayer {
  std::string name;
  int capacity = 1;
  int group_level = 1;
  Permutation gather_in;
  Permutation scatter_out;
  // Fraction of the layer's importance mass zeroed by compression.
  double off_block_mass_removed = 0.0;
};

/// Everything needed to reproduce the compressed network from the dense
/// checkpoint.
struct GroupingPlan {
  std::vector<PlanLayer> layers;
  double threshold_used = 0.0;
  double target_rate = 0.0;
  double achieved_rate = 0.0;
  bool capacity_limited = false;
  std::vector<double> lambda_history;
  std::vector<double> sparsity_history;
};

struct ThresholdResult {
  double p = 0.0;
  std::vector<int> levels;
  bool capacity_limited = false;
};

/// Binary search (40 bisections over (0,1)) for the largest threshold p
/// whose induced per-layer group levels reach the target reduction. The
/// level map is nonincreasing in p, so sparsity is monotone. If even
/// p -> 0+ cannot reach the target the maximum achievable configuration
/// is returned with the capacity_limited flag set.
ThresholdResult choose_threshold(const std::vector<ImportanceMatrix>& s_perms,
                                 const std::vector<LayerSpec>& specs,
                                 double target_rate);

/// Permutes weights by (p_out, q_in), zeroes every kernel slice outside the
/// diagonal blocks of U_g, and packs the surviving blocks into the grouped
/// layout. g = 1 keeps the layer dense up to channel relabeling.
GroupedLayer compress_layer(const WeightTensor& w,
                            const std::vector<double>& bias,
                            const Permutation& p_out, const Permutation& q_in,
                            int g, int stride, int pad);

struct CompressResult {
  CompressedNet net;
  GroupingPlan plan;
};

/// choose_threshold + per-layer compress_layer over the whole model.
/// perms supplies (p_out, q_in) per conv layer.
CompressResult compress_model(const MicroNet& net,
                              const std::vector<Permutation>& p_out,
                              const std::vector<Permutation>& q_in,
                              double target_rate, Norm norm = Norm::L1);

enum class ShuffleMode { Finetune, FromScratch, ShuffleNet, Random, NoShuffle };

ShuffleMode shuffle_mode_from_string(const std::string& s);
std::string shuffle_mode_to_string(ShuffleMode m);

/// True for every mode except Finetune: the surviving weights are
/// re-initialized before the finetune stage.
bool shuffle_mode_reinitializes(ShuffleMode m);

/// The fixed ShuffleNet pattern for G groups over channels = G * n:
/// reshape the channel dim to (G, n), transpose, flatten.
Permutation shufflenet_permutation(int groups, int channels);

/// Applies one of the channel-shuffle ablation settings to the plan's
/// permutations. Finetune and FromScratch keep the learned permutations;
/// ShuffleNet installs the fixed transpose pattern; Random draws seeded
/// permutations; NoShuffle uses identities.
GroupingPlan shuffle_variant(const GroupingPlan& plan, ShuffleMode mode,
                             std::uint64_t seed);

/// D[i][j] = number of channels coming from output group i of `producer`
/// and feeding input group j of `consumer`. Every row sums to C/G1 and
/// every column to C/G2.
Matrix confusion_matrix(const PlanLayer& producer, const PlanLayer& consumer);

}  // namespace sparsegroup
