#include "sparsegroup/accounting.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "sparsegroup/group_structure.hpp"

namespace sparsegroup {

namespace {

using nlohmann::json;

ArchLayer::Type type_from_string(const std::string& s) {
  if (s == "conv") return ArchLayer::Type::Conv;
  if (s == "linear") return ArchLayer::Type::Linear;
  if (s == "maxpool") return ArchLayer::Type::MaxPool;
  if (s == "avgpool") return ArchLayer::Type::AvgPool;
  if (s == "gap") return ArchLayer::Type::GlobalPool;
  if (s == "relu") return ArchLayer::Type::Relu;
  if (s == "bn") return ArchLayer::Type::Bn;
  if (s == "mark") return ArchLayer::Type::Mark;
  if (s == "recall") return ArchLayer::Type::Recall;
  throw std::invalid_argument("unknown layer type: " + s);
}

std::string type_to_string(ArchLayer::Type t) {
  switch (t) {
    case ArchLayer::Type::Conv: return "conv";
    case ArchLayer::Type::Linear: return "linear";
    case ArchLayer::Type::MaxPool: return "maxpool";
    case ArchLayer::Type::AvgPool: return "avgpool";
    case ArchLayer::Type::GlobalPool: return "gap";
    case ArchLayer::Type::Relu: return "relu";
    case ArchLayer::Type::Bn: return "bn";
    case ArchLayer::Type::Mark: return "mark";
    case ArchLayer::Type::Recall: return "recall";
  }
  throw std::invalid_argument("unknown layer type");
}

int pooled_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Walks the layer list tracking spatial size; calls fn(layer, h, w) for
// conv/linear entries with the layer's input spatial size.
template <typename Fn>
void walk(const ArchSpec& spec, Fn&& fn) {
  int h = spec.input.height, w = spec.input.width;
  int saved_h = h, saved_w = w;
  for (const ArchLayer& layer : spec.layers) {
    switch (layer.type) {
      case ArchLayer::Type::Conv: {
        if (layer.c_in < 1 || layer.c_out < 1 || layer.k < 1 ||
            layer.stride < 1 || layer.groups < 1)
          throw std::invalid_argument("bad conv entry in arch spec");
        if (layer.c_in % layer.groups != 0 || layer.c_out % layer.groups != 0)
          throw std::invalid_argument("groups must divide both channel counts");
        fn(layer, h, w);
        h = pooled_dim(h, layer.k, layer.stride, layer.padding);
        w = pooled_dim(w, layer.k, layer.stride, layer.padding);
        if (h < 1 || w < 1)
          throw std::invalid_argument("conv output collapses to zero size");
        break;
      }
      case ArchLayer::Type::Linear:
        if (layer.in < 1 || layer.out < 1)
          throw std::invalid_argument("bad linear entry in arch spec");
        fn(layer, h, w);
        break;
      case ArchLayer::Type::MaxPool:
      case ArchLayer::Type::AvgPool:
        h = pooled_dim(h, layer.pool_k, layer.pool_stride, layer.pool_pad);
        w = pooled_dim(w, layer.pool_k, layer.pool_stride, layer.pool_pad);
        break;
      case ArchLayer::Type::GlobalPool:
        h = 1;
        w = 1;
        break;
      case ArchLayer::Type::Mark:
        saved_h = h;
        saved_w = w;
        break;
      case ArchLayer::Type::Recall:
        h = saved_h;
        w = saved_w;
        break;
      default:
        break;
    }
  }
}

long long conv_params(const ArchLayer& l) {
  long long p = 1LL * l.c_in * l.c_out * l.k * l.k / l.groups;
  if (l.bias) p += l.c_out;
  return p;
}

}  // namespace

ArchSpec arch_from_json_text(const std::string& text) {
  const json j = json::parse(text);
  ArchSpec spec;
  spec.name = j.at("name").get<std::string>();
  spec.input.channels = j.at("input").at("channels").get<int>();
  spec.input.height = j.at("input").at("height").get<int>();
  spec.input.width = j.at("input").at("width").get<int>();
  for (const json& lj : j.at("layers")) {
    ArchLayer l;
    l.type = type_from_string(lj.at("type").get<std::string>());
    l.name = lj.value("name", "");
    switch (l.type) {
      case ArchLayer::Type::Conv:
        l.c_in = lj.at("c_in").get<int>();
        l.c_out = lj.at("c_out").get<int>();
        l.k = lj.at("k").get<int>();
        l.stride = lj.value("stride", 1);
        l.padding = lj.value("padding", 0);
        l.groups = lj.value("groups", 1);
        l.bias = lj.value("bias", false);
        break;
      case ArchLayer::Type::Linear:
        l.in = lj.at("in").get<int>();
        l.out = lj.at("out").get<int>();
        l.bias = lj.value("bias", true);
        break;
      case ArchLayer::Type::MaxPool:
      case ArchLayer::Type::AvgPool:
        l.pool_k = lj.at("k").get<int>();
        l.pool_stride = lj.value("stride", l.pool_k);
        l.pool_pad = lj.value("padding", 0);
        break;
      default:
        break;
    }
    spec.layers.push_back(std::move(l));
  }
  return spec;
}

ArchSpec arch_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open arch spec: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return arch_from_json_text(ss.str());
}

std::string arch_to_json_text(const ArchSpec& spec) {
  json j;
  j["name"] = spec.name;
  j["input"] = {{"channels", spec.input.channels},
                {"height", spec.input.height},
                {"width", spec.input.width}};
  j["layers"] = json::array();
  for (const ArchLayer& l : spec.layers) {
    json lj;
    lj["type"] = type_to_string(l.type);
    if (!l.name.empty()) lj["name"] = l.name;
    switch (l.type) {
      case ArchLayer::Type::Conv:
        lj["c_in"] = l.c_in;
        lj["c_out"] = l.c_out;
        lj["k"] = l.k;
        lj["stride"] = l.stride;
        lj["padding"] = l.padding;
        lj["groups"] = l.groups;
        lj["bias"] = l.bias;
        break;
      case ArchLayer::Type::Linear:
        lj["in"] = l.in;
        lj["out"] = l.out;
        lj["bias"] = l.bias;
        break;
      case ArchLayer::Type::MaxPool:
      case ArchLayer::Type::AvgPool:
        lj["k"] = l.pool_k;
        lj["stride"] = l.pool_stride;
        lj["padding"] = l.pool_pad;
        break;
      default:
        break;
    }
    j["layers"].push_back(std::move(lj));
  }
  return j.dump(2) + "\n";
}

long long count_params(const ArchSpec& spec) {
  long long total = 0;
  walk(spec, [&](const ArchLayer& l, int, int) {
    if (l.type == ArchLayer::Type::Conv) {
      total += conv_params(l);
    } else if (l.type == ArchLayer::Type::Linear) {
      total += 1LL * l.in * l.out + (l.bias ? l.out : 0);
    }
  });
  return total;
}

long long count_flops(const ArchSpec& spec) {
  long long total = 0;
  walk(spec, [&](const ArchLayer& l, int h, int w) {
    if (l.type == ArchLayer::Type::Conv) {
      const long long ho = pooled_dim(h, l.k, l.stride, l.padding);
      const long long wo = pooled_dim(w, l.k, l.stride, l.padding);
      total += 1LL * l.c_in * l.c_out * l.k * l.k / l.groups * ho * wo;
    } else if (l.type == ArchLayer::Type::Linear) {
      total += 1LL * l.in * l.out;
    }
  });
  return total;
}

CompressionReport compression_report(const ArchSpec& spec,
                                     const std::vector<int>& levels) {
  CompressionReport rep;
  long long conv_dense = 0, conv_grouped = 0;
  std::size_t conv_idx = 0;
  walk(spec, [&](const ArchLayer& l, int h, int w) {
    if (l.type == ArchLayer::Type::Linear) {
      const long long p = 1LL * l.in * l.out + (l.bias ? l.out : 0);
      rep.params_dense += p;
      rep.params_grouped += p;
      rep.flops_dense += 1LL * l.in * l.out;
      rep.flops_grouped += 1LL * l.in * l.out;
      return;
    }
    if (l.type != ArchLayer::Type::Conv) return;
    if (conv_idx >= levels.size())
      throw std::invalid_argument("one group level per conv layer required");
    const int g = levels[conv_idx++];
    const int capacity = max_group_level(l.c_out, l.c_in);
    if (g < 1 || g > capacity)
      throw std::invalid_argument("group level exceeds layer capacity");
    const int card = 1 << (g - 1);
    const long long ho = pooled_dim(h, l.k, l.stride, l.padding);
    const long long wo = pooled_dim(w, l.k, l.stride, l.padding);
    ReportRow row;
    row.name = l.name.empty() ? ("conv" + std::to_string(conv_idx - 1)) : l.name;
    row.group_level = g;
    row.cardinality = card;
    row.params_dense = conv_params(l);
    row.params_grouped = conv_params(l) / card;
    row.flops_dense = 1LL * l.c_in * l.c_out * l.k * l.k / l.groups * ho * wo;
    row.flops_grouped = row.flops_dense / card;
    rep.rows.push_back(row);
    rep.params_dense += row.params_dense;
    rep.params_grouped += row.params_grouped;
    rep.flops_dense += row.flops_dense;
    rep.flops_grouped += row.flops_grouped;
    const long long kernel = 1LL * l.c_in * l.c_out * l.k * l.k / l.groups;
    conv_dense += kernel;
    conv_grouped += kernel / card;
  });
  if (conv_idx != levels.size())
    throw std::invalid_argument("more levels than conv layers");
  rep.rate = conv_dense == 0 ? 0.0 : 1.0 - double(conv_grouped) / double(conv_dense);
  return rep;
}

namespace {

ArchLayer conv_entry(const std::string& name, int c_in, int c_out, int k,
                     int stride, int padding) {
  ArchLayer l;
  l.type = ArchLayer::Type::Conv;
  l.name = name;
  l.c_in = c_in;
  l.c_out = c_out;
  l.k = k;
  l.stride = stride;
  l.padding = padding;
  return l;
}

ArchLayer pool_entry(ArchLayer::Type t, int k, int stride, int pad) {
  ArchLayer l;
  l.type = t;
  l.pool_k = k;
  l.pool_stride = stride;
  l.pool_pad = pad;
  return l;
}

ArchLayer marker(ArchLayer::Type t) {
  ArchLayer l;
  l.type = t;
  return l;
}

ArchLayer linear_entry(int in, int out) {
  ArchLayer l;
  l.type = ArchLayer::Type::Linear;
  l.name = "fc";
  l.in = in;
  l.out = out;
  l.bias = true;
  return l;
}

// Bottleneck ResNet for ImageNet (stride on the 3x3 conv). Parallel
// downsample convs are listed after a mark/recall pair so the spatial
// tracker sees their true input size.
ArchSpec make_bottleneck_resnet(const std::string& name,
                                const std::vector<int>& blocks) {
  ArchSpec spec;
  spec.name = name;
  spec.input = {3, 224, 224};
  spec.layers.push_back(conv_entry("conv1", 3, 64, 7, 2, 3));
  spec.layers.push_back(pool_entry(ArchLayer::Type::MaxPool, 3, 2, 1));

  int c_in = 64;
  const int widths[4] = {64, 128, 256, 512};
  for (int stage = 0; stage < 4; ++stage) {
    const int width = widths[stage];
    const int c_out = width * 4;
    for (int b = 0; b < blocks[std::size_t(stage)]; ++b) {
      const int stride = (stage > 0 && b == 0) ? 2 : 1;
      const std::string base =
          "layer" + std::to_string(stage + 1) + ".b" + std::to_string(b);
      const bool has_downsample = (b == 0);
      if (has_downsample) spec.layers.push_back(marker(ArchLayer::Type::Mark));
      spec.layers.push_back(conv_entry(base + ".conv1", c_in, width, 1, 1, 0));
      spec.layers.push_back(conv_entry(base + ".conv2", width, width, 3, stride, 1));
      spec.layers.push_back(conv_entry(base + ".conv3", width, c_out, 1, 1, 0));
      if (has_downsample) {
        spec.layers.push_back(marker(ArchLayer::Type::Recall));
        spec.layers.push_back(
            conv_entry(base + ".downsample", c_in, c_out, 1, stride, 0));
      }
      c_in = c_out;
    }
  }
  spec.layers.push_back(marker(ArchLayer::Type::GlobalPool));
  spec.layers.push_back(linear_entry(2048, 1000));
  return spec;
}

// 3-stage basic-block ResNet for 32x32 inputs, depth = 6n + 2.
ArchSpec make_cifar_resnet(const std::string& name, int n) {
  ArchSpec spec;
  spec.name = name;
  spec.input = {3, 32, 32};
  spec.layers.push_back(conv_entry("conv1", 3, 16, 3, 1, 1));
  int c_in = 16;
  const int widths[3] = {16, 32, 64};
  for (int stage = 0; stage < 3; ++stage) {
    const int width = widths[stage];
    for (int b = 0; b < n; ++b) {
      const int stride = (stage > 0 && b == 0) ? 2 : 1;
      const std::string base =
          "stage" + std::to_string(stage + 1) + ".b" + std::to_string(b);
      const bool has_downsample = (stage > 0 && b == 0);
      if (has_downsample) spec.layers.push_back(marker(ArchLayer::Type::Mark));
      spec.layers.push_back(conv_entry(base + ".conv1", c_in, width, 3, stride, 1));
      spec.layers.push_back(conv_entry(base + ".conv2", width, width, 3, 1, 1));
      if (has_downsample) {
        spec.layers.push_back(marker(ArchLayer::Type::Recall));
        spec.layers.push_back(
            conv_entry(base + ".downsample", c_in, width, 1, stride, 0));
      }
      c_in = width;
    }
  }
  spec.layers.push_back(marker(ArchLayer::Type::GlobalPool));
  spec.layers.push_back(linear_entry(64, 10));
  return spec;
}

ArchSpec make_densenet201() {
  ArchSpec spec;
  spec.name = "densenet201";
  spec.input = {3, 224, 224};
  const int growth = 32;
  spec.layers.push_back(conv_entry("conv0", 3, 64, 7, 2, 3));
  spec.layers.push_back(pool_entry(ArchLayer::Type::MaxPool, 3, 2, 1));
  const int block_sizes[4] = {6, 12, 48, 32};
  int channels = 64;
  for (int blk = 0; blk < 4; ++blk) {
    for (int layer = 0; layer < block_sizes[blk]; ++layer) {
      const std::string base = "block" + std::to_string(blk + 1) + ".layer" +
                               std::to_string(layer + 1);
      spec.layers.push_back(
          conv_entry(base + ".conv1", channels, 4 * growth, 1, 1, 0));
      spec.layers.push_back(
          conv_entry(base + ".conv2", 4 * growth, growth, 3, 1, 1));
      channels += growth;
    }
    if (blk < 3) {
      spec.layers.push_back(conv_entry(
          "transition" + std::to_string(blk + 1), channels, channels / 2, 1, 1, 0));
      spec.layers.push_back(pool_entry(ArchLayer::Type::AvgPool, 2, 2, 0));
      channels /= 2;
    }
  }
  spec.layers.push_back(marker(ArchLayer::Type::GlobalPool));
  spec.layers.push_back(linear_entry(channels, 1000));
  return spec;
}

ArchSpec make_micronet_arch() {
  ArchSpec spec;
  spec.name = "micronet";
  spec.input = {3, 16, 16};
  ArchLayer c0 = conv_entry("conv0", 3, 16, 3, 1, 1);
  ArchLayer c1 = conv_entry("conv1", 16, 32, 3, 2, 1);
  ArchLayer c2 = conv_entry("conv2", 32, 64, 3, 2, 1);
  c0.bias = c1.bias = c2.bias = true;
  spec.layers = {c0, c1, c2, marker(ArchLayer::Type::GlobalPool),
                 linear_entry(64, 10)};
  return spec;
}

}  // namespace

ArchSpec make_arch_preset(const std::string& name) {
  if (name == "resnet50") return make_bottleneck_resnet(name, {3, 4, 6, 3});
  if (name == "resnet101") return make_bottleneck_resnet(name, {3, 4, 23, 3});
  if (name == "densenet201") return make_densenet201();
  if (name == "resnet20") return make_cifar_resnet(name, 3);
  if (name == "resnet56") return make_cifar_resnet(name, 9);
  if (name == "resnet110") return make_cifar_resnet(name, 18);
  if (name == "micronet") return make_micronet_arch();
  throw std::invalid_argument("unknown arch preset: " + name);
}

std::vector<std::string> arch_preset_names() {
  return {"resnet50", "resnet101", "densenet201",
          "resnet20", "resnet56", "resnet110", "micronet"};
}

}  // namespace sparsegroup
