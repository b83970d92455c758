#include "sparsegroup/compressor.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>

#include "sparsegroup/group_structure.hpp"

namespace sparsegroup {

namespace {

// Per-layer diagonal-block masses for every level up to capacity; the level
// induced by a threshold p is then a table lookup instead of a rescan.
struct LevelTable {
  double total = 0.0;
  std::vector<double> mass;  // mass[g-1], g = 1..capacity
};

LevelTable level_table(const ImportanceMatrix& s_perm, int capacity) {
  LevelTable t;
  t.total = s_perm.sum();
  t.mass.reserve(static_cast<std::size_t>(capacity));
  for (int g = 1; g <= capacity; ++g)
    t.mass.push_back(diagonal_block_mass(s_perm, g));
  return t;
}

int level_for(const LevelTable& t, double p) {
  int g = 1;
  for (int cand = 2; cand <= int(t.mass.size()); ++cand) {
    if (t.mass[std::size_t(cand - 1)] >= p * t.total)
      g = cand;
    else
      break;
  }
  return g;
}

}  // namespace

ThresholdResult choose_threshold(const std::vector<ImportanceMatrix>& s_perms,
                                 const std::vector<LayerSpec>& specs,
                                 double target_rate) {
  if (s_perms.size() != specs.size())
    throw std::invalid_argument("one importance matrix per conv layer required");
  if (!(target_rate > 0.0 && target_rate < 1.0))
    throw std::invalid_argument("target rate must lie in (0, 1)");

  std::vector<LevelTable> tables;
  tables.reserve(s_perms.size());
  for (std::size_t l = 0; l < s_perms.size(); ++l)
    tables.push_back(level_table(
        s_perms[l], max_group_level(specs[l].c_out, specs[l].c_in)));

  auto levels_at = [&](double p) {
    std::vector<int> levels(tables.size());
    for (std::size_t l = 0; l < tables.size(); ++l)
      levels[l] = level_for(tables[l], p);
    return levels;
  };

  constexpr int kBisections = 40;
  const double p_floor = std::ldexp(1.0, -kBisections);  // 2^-40
  {
    const std::vector<int> floor_levels = levels_at(p_floor);
    if (model_sparsity(floor_levels, specs) < target_rate)
      return {p_floor, floor_levels, true};
  }

  double lo = 0.0, hi = 1.0;  // sparsity(levels_at(p)) is nonincreasing in p
  for (int it = 0; it < kBisections; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (model_sparsity(levels_at(mid), specs) >= target_rate)
      lo = mid;
    else
      hi = mid;
  }
  const double p = lo > 0.0 ? lo : p_floor;
  return {p, levels_at(p), false};
}

GroupedLayer compress_layer(const WeightTensor& w,
                            const std::vector<double>& bias,
                            const Permutation& p_out, const Permutation& q_in,
                            int g, int stride, int pad) {
  w.validate();
  if (bias.size() != std::size_t(w.c_out))
    throw std::invalid_argument("bias length mismatch");
  if (g < 1 || g > max_group_level(w.c_out, w.c_in))
    throw std::invalid_argument("group level outside capacity");
  const int G = 1 << (g - 1);
  if (w.c_out % G != 0 || w.c_in % G != 0)
    throw std::invalid_argument("channels not divisible by cardinality");

  const WeightTensor wp = permute_weights(w, p_out, q_in);

  GroupedLayer layer;
  layer.groups = G;
  layer.c_out = w.c_out;
  layer.c_in = w.c_in;
  layer.k = w.k;
  layer.stride = stride;
  layer.pad = pad;
  layer.gather_in = q_in;
  layer.scatter_out = p_out;
  layer.bias = permute_vector(bias, p_out);

  const int mo = w.c_out / G, m = w.c_in / G;
  const int kk = w.k * w.k;
  layer.w.assign(std::size_t(G) * mo * m * kk, 0.0);
  for (int n = 0; n < G; ++n) {
    for (int oc = 0; oc < mo; ++oc) {
      for (int ic = 0; ic < m; ++ic) {
        const int a = n * mo + oc, b = n * m + ic;
        const double* src = wp.data.data() + wp.slice_offset(a, b);
        double* dst = layer.w.data() +
                      ((std::size_t(n) * mo + oc) * m + ic) * kk;
        std::copy_n(src, kk, dst);
      }
    }
  }
  return layer;
}

static double removed_mass_fraction(const WeightTensor& w,
                                    const Permutation& p_out,
                                    const Permutation& q_in, int g) {
  const ImportanceMatrix sp =
      permute_importance(importance_matrix(w), p_out, q_in);
  const double total = sp.sum();
  if (total == 0.0) return 0.0;
  return 1.0 - diagonal_block_mass(sp, g) / total;
}

CompressResult compress_model(const MicroNet& net,
                              const std::vector<Permutation>& p_out,
                              const std::vector<Permutation>& q_in,
                              double target_rate, Norm norm) {
  const std::vector<LayerSpec> specs = net.conv_specs();
  if (p_out.size() != specs.size() || q_in.size() != specs.size())
    throw std::invalid_argument("one permutation pair per conv layer required");

  std::vector<ImportanceMatrix> s_perms;
  s_perms.reserve(specs.size());
  for (std::size_t l = 0; l < specs.size(); ++l)
    s_perms.push_back(permute_importance(
        importance_matrix(net.convs[l].w, norm), p_out[l], q_in[l]));

  const ThresholdResult th = choose_threshold(s_perms, specs, target_rate);

  CompressResult out;
  out.net.input_shape = net.input_shape;
  out.net.fc = net.fc;
  out.plan.threshold_used = th.p;
  out.plan.target_rate = target_rate;
  out.plan.capacity_limited = th.capacity_limited;
  out.plan.achieved_rate = model_sparsity(th.levels, specs);

  for (std::size_t l = 0; l < specs.size(); ++l) {
    const ConvLayer& conv = net.convs[l];
    out.net.layers.push_back(compress_layer(conv.w, conv.bias, p_out[l],
                                            q_in[l], th.levels[l], conv.stride,
                                            conv.pad));
    PlanLayer pl;
    pl.name = specs[l].name;
    pl.capacity = max_group_level(specs[l].c_out, specs[l].c_in);
    pl.group_level = th.levels[l];
    pl.gather_in = q_in[l];
    pl.scatter_out = p_out[l];
    pl.off_block_mass_removed =
        removed_mass_fraction(conv.w, p_out[l], q_in[l], th.levels[l]);
    out.plan.layers.push_back(std::move(pl));
  }
  return out;
}

ShuffleMode shuffle_mode_from_string(const std::string& s) {
  if (s == "finetune") return ShuffleMode::Finetune;
  if (s == "from_scratch") return ShuffleMode::FromScratch;
  if (s == "shufflenet") return ShuffleMode::ShuffleNet;
  if (s == "random") return ShuffleMode::Random;
  if (s == "no_shuffle") return ShuffleMode::NoShuffle;
  throw std::invalid_argument("unknown shuffle mode: " + s);
}

std::string shuffle_mode_to_string(ShuffleMode m) {
  switch (m) {
    case ShuffleMode::Finetune: return "finetune";
    case ShuffleMode::FromScratch: return "from_scratch";
    case ShuffleMode::ShuffleNet: return "shufflenet";
    case ShuffleMode::Random: return "random";
    case ShuffleMode::NoShuffle: return "no_shuffle";
  }
  throw std::invalid_argument("unknown shuffle mode");
}

bool shuffle_mode_reinitializes(ShuffleMode m) {
  return m != ShuffleMode::Finetune;
}

Permutation shufflenet_permutation(int groups, int channels) {
  if (groups < 1 || channels % groups != 0)
    throw std::invalid_argument("channels must be divisible by groups");
  const int n = channels / groups;
  std::vector<int> map(static_cast<std::size_t>(channels));
  for (int g = 0; g < groups; ++g)
    for (int t = 0; t < n; ++t) map[std::size_t(t) * groups + g] = g * n + t;
  return Permutation(std::move(map));
}

GroupingPlan shuffle_variant(const GroupingPlan& plan, ShuffleMode mode,
                             std::uint64_t seed) {
  GroupingPlan out = plan;
  if (mode == ShuffleMode::Finetune || mode == ShuffleMode::FromScratch)
    return out;

  std::mt19937_64 rng(seed);
  for (PlanLayer& layer : out.layers) {
    const int c_out = layer.scatter_out.size();
    const int c_in = layer.gather_in.size();
    switch (mode) {
      case ShuffleMode::NoShuffle:
        layer.gather_in = Permutation::identity(c_in);
        layer.scatter_out = Permutation::identity(c_out);
        break;
      case ShuffleMode::ShuffleNet: {
        const int G = 1 << (layer.group_level - 1);
        layer.gather_in = Permutation::identity(c_in);
        // The shuffle sits after the GroupConv's output, so the scatter
        // realizes it: out[scatter[a]] = permuted_out[a].
        layer.scatter_out = shufflenet_permutation(G, c_out).inverse();
        break;
      }
      case ShuffleMode::Random: {
        std::vector<int> gm(static_cast<std::size_t>(c_in)), sm(static_cast<std::size_t>(c_out));
        std::iota(gm.begin(), gm.end(), 0);
        std::iota(sm.begin(), sm.end(), 0);
        std::shuffle(gm.begin(), gm.end(), rng);
        std::shuffle(sm.begin(), sm.end(), rng);
        layer.gather_in = Permutation(std::move(gm));
        layer.scatter_out = Permutation(std::move(sm));
        break;
      }
      default:
        break;
    }
  }
  return out;
}

Matrix confusion_matrix(const PlanLayer& producer, const PlanLayer& consumer) {
  const int C = producer.scatter_out.size();
  if (consumer.gather_in.size() != C)
    throw std::invalid_argument("adjacent layers must share the channel count");
  const int g1 = 1 << (producer.group_level - 1);
  const int g2 = 1 << (consumer.group_level - 1);
  const Permutation scatter_inv = producer.scatter_out.inverse();
  Matrix d(g1, g2, 0.0);
  const int per1 = C / g1, per2 = C / g2;
  for (int b = 0; b < C; ++b) {
    const int channel = consumer.gather_in[b];
    const int a = scatter_inv[channel];
    d(a / per1, b / per2) += 1.0;
  }
  return d;
}

}  // namespace sparsegroup
