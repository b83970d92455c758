#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "support/oracles.hpp"
#include "sparsegroup/compressor.hpp"

using namespace sparsegroup;

namespace {

Permutation random_perm(int n, std::mt19937_64& rng) {
  std::vector<int> m(static_cast<std::size_t>(n));
  std::iota(m.begin(), m.end(), 0);
  std::shuffle(m.begin(), m.end(), rng);
  return Permutation(std::move(m));
}

LayerSpec conv_spec(int c_in, int c_out, int k) {
  LayerSpec s;
  s.c_in = c_in;
  s.c_out = c_out;
  s.k = k;
  return s;
}

// Block-diagonal importance with per-entry jitter; groupable at `blocks`.
ImportanceMatrix blocky(int n, int blocks, std::mt19937_64& rng) {
  ImportanceMatrix s(n, n, 0.0);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  const int bs = n / blocks;
  for (int b = 0; b < blocks; ++b)
    for (int r = b * bs; r < (b + 1) * bs; ++r)
      for (int c = b * bs; c < (b + 1) * bs; ++c) s(r, c) = u(rng);
  return s;
}

double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-9});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

WeightTensor random_weights(int co, int ci, int k, std::mt19937_64& rng) {
  WeightTensor w(co, ci, k);
  std::normal_distribution<double> unit(0.0, 0.5);
  for (double& x : w.data) x = unit(rng);
  return w;
}

}  // namespace

TEST_CASE("choose_threshold: fully sparsified layers reach capacity levels") {
  std::mt19937_64 rng(1);
  // both layers exactly block diagonal at their capacity
  const std::vector<ImportanceMatrix> s = {blocky(16, 16, rng),
                                           blocky(32, 32, rng)};
  const std::vector<LayerSpec> specs = {conv_spec(16, 16, 3),
                                        conv_spec(32, 32, 3)};
  const ThresholdResult r = choose_threshold(s, specs, 0.9);
  CHECK_FALSE(r.capacity_limited);
  CHECK(r.levels == std::vector<int>{5, 6});
  CHECK(model_sparsity(r.levels, specs) >= 0.9);
  CHECK(r.p > 0.0);
  CHECK(r.p < 1.0);
}

TEST_CASE("choose_threshold: capacity-limited targets are flagged, not fatal") {
  std::mt19937_64 rng(2);
  // gcd(3, 16) has no even factor: capacity 1, nothing can be reduced
  const std::vector<ImportanceMatrix> s = {
      oracles::random_matrix(16, 3, rng, 0.1, 1.0)};
  const std::vector<LayerSpec> specs = {conv_spec(3, 16, 3)};
  const ThresholdResult r = choose_threshold(s, specs, 0.5);
  CHECK(r.capacity_limited);
  CHECK(r.levels == std::vector<int>{1});
  CHECK(model_sparsity(r.levels, specs) == 0.0);
}

TEST_CASE("choose_threshold matches a dense grid scan") {
  std::mt19937_64 rng(3);
  std::vector<ImportanceMatrix> s;
  std::vector<LayerSpec> specs;
  // mixed block structure with noise so levels vary with p
  for (int n : {16, 32, 64}) {
    ImportanceMatrix m = blocky(n, 4, rng);
    for (double& x : m.v) x += 0.02;  // off-block noise
    s.push_back(std::move(m));
    specs.push_back(conv_spec(n, n, 3));
  }
  const double target = 0.5;
  const ThresholdResult r = choose_threshold(s, specs, target);
  REQUIRE_FALSE(r.capacity_limited);

  auto levels_at = [&](double p) {
    std::vector<int> levels;
    for (std::size_t l = 0; l < s.size(); ++l)
      levels.push_back(group_level(s[l], p,
                                   max_group_level(specs[l].c_out, specs[l].c_in)));
    return levels;
  };
  double best_grid = 0.0;
  for (int i = 1; i < 10000; ++i) {
    const double p = i / 10000.0;
    if (model_sparsity(levels_at(p), specs) >= target) best_grid = p;
  }
  CHECK(std::abs(r.p - best_grid) <= 1e-4 + 1e-12);
  CHECK(model_sparsity(r.levels, specs) >= target);
}

TEST_CASE("compress_layer: g=1 keeps the function up to relabeling") {
  std::mt19937_64 rng(4);
  const WeightTensor w = random_weights(8, 6, 3, rng);
  std::vector<double> bias(8);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (double& x : bias) x = unit(rng);
  const Permutation p = random_perm(8, rng), q = random_perm(6, rng);
  const GroupedLayer layer = compress_layer(w, bias, p, q, 1, 1, 1);

  ConvLayer dense;
  dense.w = w;
  dense.bias = bias;
  dense.stride = 1;
  dense.pad = 1;
  FeatureMap f({6, 6, 6});
  for (double& x : f.data) x = unit(rng);
  const FeatureMap a = conv_forward(dense, f);
  const FeatureMap b = groupconv_forward(layer, f);
  CHECK(max_rel_err(a.data, b.data) <= 1e-12);
}

TEST_CASE("compress_layer: groupable weights keep the function at any level") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (int g = 2; g <= 3; ++g) {
    const int G = 1 << (g - 1);
    // build weights that are exactly block diagonal under (p, q)
    const Permutation p = random_perm(8, rng), q = random_perm(8, rng);
    WeightTensor blockw(8, 8, 3, 0.0);
    for (int a = 0; a < 8; ++a)
      for (int b = 0; b < 8; ++b)
        if ((a / (8 / G)) == (b / (8 / G)))
          for (int t = 0; t < 9; ++t)
            blockw.data[blockw.slice_offset(a, b) + std::size_t(t)] = unit(rng);
    // undo the permutation so that (p, q) re-blocks it
    const WeightTensor w = permute_weights(blockw, p.inverse(), q.inverse());
    std::vector<double> bias(8);
    for (double& x : bias) x = unit(rng);

    const GroupedLayer layer = compress_layer(w, bias, p, q, g, 1, 1);
    ConvLayer dense;
    dense.w = w;
    dense.bias = bias;
    dense.stride = 1;
    dense.pad = 1;
    for (int trial = 0; trial < 3; ++trial) {
      FeatureMap f({8, 5, 5});
      for (double& x : f.data) x = unit(rng);
      const FeatureMap a = conv_forward(dense, f);
      const FeatureMap b = groupconv_forward(layer, f);
      CHECK(max_rel_err(a.data, b.data) <= 1e-6);
    }
    // the reconstructed masked weights are groupable with zero tolerance
    const ConvLayer masked = masked_dense_equivalent(layer);
    CHECK(is_groupable(importance_matrix(masked.w), g, p, q, 0.0));
  }
}

TEST_CASE("compress_layer: output deviation shrinks with off-block mass") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> unit(0.0, 1.0);
  const Permutation id = Permutation::identity(8);
  WeightTensor block(8, 8, 3, 0.0);
  for (int a = 0; a < 8; ++a)
    for (int b = 0; b < 8; ++b)
      if (a / 4 == b / 4)
        for (int t = 0; t < 9; ++t)
          block.data[block.slice_offset(a, b) + std::size_t(t)] = unit(rng);
  const std::vector<double> bias(8, 0.0);
  FeatureMap f({8, 5, 5});
  for (double& x : f.data) x = unit(rng);

  double prev_dev = std::numeric_limits<double>::infinity();
  for (double eps : {1e-1, 1e-2, 1e-3}) {
    WeightTensor leaky = block;
    for (int a = 0; a < 8; ++a)
      for (int b = 0; b < 8; ++b)
        if (a / 4 != b / 4)
          for (int t = 0; t < 9; ++t)
            leaky.data[leaky.slice_offset(a, b) + std::size_t(t)] = eps;
    ConvLayer dense;
    dense.w = leaky;
    dense.bias = bias;
    dense.stride = 1;
    dense.pad = 1;
    const GroupedLayer layer = compress_layer(leaky, bias, id, id, 2, 1, 1);
    const FeatureMap a = conv_forward(dense, f);
    const FeatureMap b = groupconv_forward(layer, f);
    double dev = 0.0;
    for (std::size_t t = 0; t < a.data.size(); ++t)
      dev = std::max(dev, std::abs(a.data[t] - b.data[t]));
    CHECK(dev < prev_dev);
    prev_dev = dev;
  }
  CHECK(prev_dev < 1e-1);
}

TEST_CASE("compress_model: deterministic, rate-respecting, mass accounting") {
  MicroNet net = make_micronet(11);
  std::vector<Permutation> p_out, q_in;
  std::mt19937_64 rng(12);
  for (const ConvLayer& c : net.convs) {
    p_out.push_back(random_perm(c.w.c_out, rng));
    q_in.push_back(random_perm(c.w.c_in, rng));
  }
  const CompressResult a = compress_model(net, p_out, q_in, 0.5);
  const CompressResult b = compress_model(net, p_out, q_in, 0.5);
  CHECK(a.plan.threshold_used == b.plan.threshold_used);
  CHECK(a.plan.achieved_rate == b.plan.achieved_rate);
  for (std::size_t l = 0; l < a.net.layers.size(); ++l)
    CHECK(a.net.layers[l].w == b.net.layers[l].w);

  CHECK_FALSE(a.plan.capacity_limited);
  CHECK(a.plan.achieved_rate >= 0.5);
  std::vector<int> levels;
  for (const PlanLayer& l : a.plan.layers) {
    CHECK(l.group_level >= 1);
    CHECK(l.group_level <= l.capacity);
    CHECK(l.off_block_mass_removed >= 0.0);
    CHECK(l.off_block_mass_removed <= 1.0);
    levels.push_back(l.group_level);
  }
  CHECK(model_sparsity(levels, net.conv_specs()) ==
        doctest::Approx(a.plan.achieved_rate));
}

TEST_CASE("shuffle_variant: the five settings") {
  MicroNet net = make_micronet(13);
  std::vector<Permutation> p_out, q_in;
  std::mt19937_64 rng(14);
  for (const ConvLayer& c : net.convs) {
    p_out.push_back(random_perm(c.w.c_out, rng));
    q_in.push_back(random_perm(c.w.c_in, rng));
  }
  const GroupingPlan plan = compress_model(net, p_out, q_in, 0.5).plan;

  SUBCASE("no_shuffle uses identities everywhere") {
    const GroupingPlan v = shuffle_variant(plan, ShuffleMode::NoShuffle, 1);
    for (const PlanLayer& l : v.layers) {
      CHECK(l.gather_in.is_identity());
      CHECK(l.scatter_out.is_identity());
    }
  }

  SUBCASE("finetune and from_scratch keep the learned permutations") {
    for (ShuffleMode m : {ShuffleMode::Finetune, ShuffleMode::FromScratch}) {
      const GroupingPlan v = shuffle_variant(plan, m, 1);
      for (std::size_t l = 0; l < plan.layers.size(); ++l) {
        CHECK(v.layers[l].gather_in == plan.layers[l].gather_in);
        CHECK(v.layers[l].scatter_out == plan.layers[l].scatter_out);
      }
    }
    CHECK_FALSE(shuffle_mode_reinitializes(ShuffleMode::Finetune));
    CHECK(shuffle_mode_reinitializes(ShuffleMode::FromScratch));
    CHECK(shuffle_mode_reinitializes(ShuffleMode::Random));
  }

  SUBCASE("random is seed-deterministic") {
    const GroupingPlan v1 = shuffle_variant(plan, ShuffleMode::Random, 99);
    const GroupingPlan v2 = shuffle_variant(plan, ShuffleMode::Random, 99);
    const GroupingPlan v3 = shuffle_variant(plan, ShuffleMode::Random, 100);
    bool any_diff = false;
    for (std::size_t l = 0; l < v1.layers.size(); ++l) {
      CHECK(v1.layers[l].gather_in == v2.layers[l].gather_in);
      CHECK(v1.layers[l].scatter_out == v2.layers[l].scatter_out);
      any_diff |= !(v1.layers[l].gather_in == v3.layers[l].gather_in);
    }
    CHECK(any_diff);
  }
}

TEST_CASE("shufflenet permutation: reshape-transpose-flatten") {
  CHECK(shufflenet_permutation(2, 4) == Permutation({0, 2, 1, 3}));
  CHECK(shufflenet_permutation(2, 8) == Permutation({0, 4, 1, 5, 2, 6, 3, 7}));
  CHECK_THROWS_AS(shufflenet_permutation(3, 8), std::invalid_argument);
}

TEST_CASE("confusion matrix marginals and the uniform shufflenet pattern") {
  std::mt19937_64 rng(15);

  SUBCASE("random plans have exact marginals") {
    for (int trial = 0; trial < 20; ++trial) {
      const int C = 32;
      PlanLayer a, b;
      a.group_level = 1 + int(rng() % 4);
      b.group_level = 1 + int(rng() % 4);
      a.scatter_out = random_perm(C, rng);
      a.gather_in = random_perm(C, rng);
      b.gather_in = random_perm(C, rng);
      b.scatter_out = random_perm(C, rng);
      const Matrix d = confusion_matrix(a, b);
      const int g1 = 1 << (a.group_level - 1), g2 = 1 << (b.group_level - 1);
      CHECK(d.rows == g1);
      CHECK(d.cols == g2);
      for (int r = 0; r < g1; ++r) {
        double sum = 0.0;
        for (int c = 0; c < g2; ++c) sum += d(r, c);
        CHECK(sum == double(C / g1));
      }
      for (int c = 0; c < g2; ++c) {
        double sum = 0.0;
        for (int r = 0; r < g1; ++r) sum += d(r, c);
        CHECK(sum == double(C / g2));
      }
    }
  }

  SUBCASE("shufflenet-mode connectivity is exactly uniform") {
    const int C = 512;
    PlanLayer a, b;
    a.group_level = 4;  // eight groups
    b.group_level = 4;
    a.scatter_out = shufflenet_permutation(8, C).inverse();
    a.gather_in = Permutation::identity(C);
    b.gather_in = Permutation::identity(C);
    b.scatter_out = Permutation::identity(C);
    const Matrix d = confusion_matrix(a, b);
    for (double x : d.v) CHECK(x == 8.0);
  }
}
