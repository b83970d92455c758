#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "sparsegroup/accounting.hpp"
#include "sparsegroup/regularizer.hpp"

using namespace sparsegroup;

namespace {

ArchSpec single_conv_spec(int c_in, int c_out, int k, int stride, int padding,
                          int groups, bool bias, TensorShape input) {
  ArchSpec spec;
  spec.name = "single";
  spec.input = input;
  ArchLayer l;
  l.type = ArchLayer::Type::Conv;
  l.name = "conv";
  l.c_in = c_in;
  l.c_out = c_out;
  l.k = k;
  l.stride = stride;
  l.padding = padding;
  l.groups = groups;
  l.bias = bias;
  spec.layers.push_back(l);
  return spec;
}

ArchSpec load_bundled(const std::string& name) {
  return arch_from_json_file(std::string(SPARSEGROUP_DATA_DIR) + "/" + name +
                             ".json");
}

}  // namespace

TEST_CASE("count_params: single conv with and without grouping") {
  const ArchSpec dense =
      single_conv_spec(16, 16, 3, 1, 1, 1, false, {16, 16, 16});
  CHECK(count_params(dense) == 2304);
  const ArchSpec grouped =
      single_conv_spec(16, 16, 3, 1, 1, 4, false, {16, 16, 16});
  CHECK(count_params(grouped) == 576);
  const ArchSpec biased =
      single_conv_spec(16, 16, 3, 1, 1, 1, true, {16, 16, 16});
  CHECK(count_params(biased) == 2304 + 16);
}

TEST_CASE("count_flops: conv cost follows the closed formula") {
  const ArchSpec dense =
      single_conv_spec(16, 16, 3, 1, 1, 1, false, {16, 16, 16});
  CHECK(count_flops(dense) == 2304LL * 256);  // 589824
  const ArchSpec half = single_conv_spec(16, 16, 3, 1, 1, 2, false, {16, 16, 16});
  CHECK(count_flops(half) == 2304LL * 256 / 2);
  const ArchSpec strided =
      single_conv_spec(16, 32, 3, 2, 1, 1, false, {16, 16, 16});
  CHECK(count_flops(strided) == 16LL * 32 * 9 * 8 * 8);
}

TEST_CASE("bundled ResNet-50 spec hits the published budget") {
  const ArchSpec spec = load_bundled("resnet50");
  const double params = double(count_params(spec));
  const double flops = double(count_flops(spec));
  CHECK(std::abs(params - 25.6e6) / 25.6e6 <= 0.01);
  CHECK(std::abs(flops - 4.14e9) / 4.14e9 <= 0.05);
}

TEST_CASE("bundled DenseNet-201 spec hits the published budget") {
  const ArchSpec spec = load_bundled("densenet201");
  const double params = double(count_params(spec));
  const double flops = double(count_flops(spec));
  CHECK(std::abs(params - 20.0e6) / 20.0e6 <= 0.02);
  CHECK(std::abs(flops - 4.39e9) / 4.39e9 <= 0.05);
}

TEST_CASE("bundled files match the in-memory presets") {
  for (const std::string& name : arch_preset_names()) {
    const ArchSpec preset = make_arch_preset(name);
    const ArchSpec loaded = load_bundled(name);
    CHECK(count_params(preset) == count_params(loaded));
    CHECK(count_flops(preset) == count_flops(loaded));
    CHECK(preset.layers.size() == loaded.layers.size());
  }
}

TEST_CASE("arch JSON round trip") {
  const ArchSpec spec = make_arch_preset("micronet");
  const ArchSpec back = arch_from_json_text(arch_to_json_text(spec));
  CHECK(back.name == spec.name);
  CHECK(count_params(back) == count_params(spec));
  CHECK(count_flops(back) == count_flops(spec));
}

TEST_CASE("compression_report: base cases") {
  const ArchSpec spec = make_arch_preset("micronet");
  {
    const CompressionReport rep = compression_report(spec, {1, 1, 1});
    CHECK(rep.rate == 0.0);
    CHECK(rep.params_grouped == rep.params_dense);
  }
  {
    // conv-only spec: uniform g=2 halves everything
    ArchSpec conv_only;
    conv_only.name = "convs";
    conv_only.input = {16, 16, 16};
    for (int l = 0; l < 3; ++l) {
      ArchLayer layer;
      layer.type = ArchLayer::Type::Conv;
      layer.c_in = 16 << (l > 0 ? 1 : 0);
      layer.c_out = 32;
      layer.k = 3;
      layer.stride = 1;
      layer.padding = 1;
      conv_only.layers.push_back(layer);
    }
    conv_only.layers[0].c_in = 16;
    const CompressionReport rep = compression_report(conv_only, {2, 2, 2});
    CHECK(rep.rate == doctest::Approx(0.5));
    CHECK(rep.flops_grouped * 2 == rep.flops_dense);
  }
}

TEST_CASE("compression_report: per-layer reduction is exactly 2^(g-1)") {
  const ArchSpec spec = make_arch_preset("resnet50");
  std::vector<int> levels;
  int conv_count = 0;
  for (const ArchLayer& l : spec.layers)
    if (l.type == ArchLayer::Type::Conv) ++conv_count;
  for (int i = 0; i < conv_count; ++i) levels.push_back(1 + (i % 3));
  const CompressionReport rep = compression_report(spec, levels);
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    const int card = 1 << (levels[i] - 1);
    CHECK(rep.rows[i].cardinality == card);
    CHECK(rep.rows[i].params_dense == rep.rows[i].params_grouped * card);
    CHECK(rep.rows[i].flops_dense == rep.rows[i].flops_grouped * card);
  }
}

TEST_CASE("compression_report rate equals model_sparsity on the micronet") {
  const ArchSpec spec = make_arch_preset("micronet");
  const std::vector<int> levels = {1, 2, 3};
  const CompressionReport rep = compression_report(spec, levels);

  std::vector<LayerSpec> lspecs;
  for (const ArchLayer& l : spec.layers) {
    if (l.type != ArchLayer::Type::Conv) continue;
    LayerSpec s;
    s.c_in = l.c_in;
    s.c_out = l.c_out;
    s.k = l.k;
    lspecs.push_back(s);
  }
  CHECK(rep.rate == doctest::Approx(model_sparsity(levels, lspecs)).epsilon(1e-12));
}

TEST_CASE("compression_report validates level counts and ranges") {
  const ArchSpec spec = make_arch_preset("micronet");
  CHECK_THROWS_AS(compression_report(spec, {1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(compression_report(spec, {1, 1, 1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(compression_report(spec, {2, 1, 1}), std::invalid_argument);
}

TEST_CASE("arch validation rejects malformed specs") {
  CHECK_THROWS_AS(make_arch_preset("vgg999"), std::invalid_argument);
  ArchSpec bad = single_conv_spec(16, 16, 3, 1, 1, 5, false, {16, 16, 16});
  CHECK_THROWS_AS(count_params(bad), std::invalid_argument);  // 5 !| 16
  ArchSpec collapse = single_conv_spec(16, 16, 9, 4, 0, 1, false, {16, 4, 4});
  CHECK_THROWS_AS(count_flops(collapse), std::invalid_argument);
}
