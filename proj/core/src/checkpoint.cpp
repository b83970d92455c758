#include "sparsegroup/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace sparsegroup {

namespace {

constexpr char kMagic[4] = {'S', 'S', 'Z', '1'};

void put_u16(std::ostream& out, std::uint16_t v) {
  const unsigned char b[2] = {(unsigned char)(v & 0xFF),
                              (unsigned char)(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {
      (unsigned char)(v & 0xFF), (unsigned char)((v >> 8) & 0xFF),
      (unsigned char)((v >> 16) & 0xFF), (unsigned char)((v >> 24) & 0xFF)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint16_t get_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return std::uint16_t(b[0] | (std::uint16_t(b[1]) << 8));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

void put_f32(std::ostream& out, const float* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &data[i], 4);
    put_u32(out, bits);
  }
}

void get_f32(std::istream& in, float* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = get_u32(in);
    std::memcpy(&data[i], &bits, 4);
  }
}

std::vector<float> to_f32(const std::vector<double>& v) {
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = float(v[i]);
  return out;
}

std::vector<double> to_f64(const std::vector<float>& v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = double(v[i]);
  return out;
}

}  // namespace

std::size_t NamedTensor::numel() const {
  std::size_t n = 1;
  for (std::uint32_t d : dims) n *= d;
  return n;
}

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const NamedTensor& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const NamedTensor& Checkpoint::require(const std::string& name) const {
  const NamedTensor* t = find(name);
  if (!t) throw std::runtime_error("checkpoint is missing tensor " + name);
  return *t;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kMagic, 4);
  put_u32(out, std::uint32_t(ckpt.tensors.size()));
  for (const NamedTensor& t : ckpt.tensors) {
    if (t.name.size() > 0xFFFF)
      throw std::runtime_error("tensor name too long");
    if (t.dims.size() > 0xFF) throw std::runtime_error("too many dims");
    if (t.data.size() != t.numel())
      throw std::runtime_error("tensor payload does not match dims");
    put_u16(out, std::uint16_t(t.name.size()));
    out.write(t.name.data(), std::streamsize(t.name.size()));
    out.put(char(0));  // dtype 0 = f32
    out.put(char(t.dims.size()));
    for (std::uint32_t d : t.dims) put_u32(out, d);
    put_f32(out, t.data.data(), t.data.size());
  }
  if (!out) throw std::runtime_error("short write: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not an SSZ1 checkpoint: " + path);
  const std::uint32_t count = get_u32(in);
  Checkpoint ckpt;
  ckpt.tensors.resize(count);
  for (NamedTensor& t : ckpt.tensors) {
    const std::uint16_t name_len = get_u16(in);
    t.name.resize(name_len);
    in.read(t.name.data(), name_len);
    const int dtype = in.get();
    if (dtype != 0) throw std::runtime_error("unsupported dtype in " + path);
    const int ndim = in.get();
    t.dims.resize(static_cast<std::size_t>(ndim));
    for (std::uint32_t& d : t.dims) d = get_u32(in);
    t.data.resize(t.numel());
    get_f32(in, t.data.data(), t.data.size());
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  }
  return ckpt;
}

Checkpoint checkpoint_from_dense(const MicroNet& net) {
  Checkpoint ckpt;
  for (std::size_t l = 0; l < net.convs.size(); ++l) {
    const ConvLayer& c = net.convs[l];
    ckpt.tensors.push_back({"conv" + std::to_string(l) + ".weight",
                            {std::uint32_t(c.w.c_out), std::uint32_t(c.w.c_in),
                             std::uint32_t(c.w.k), std::uint32_t(c.w.k)},
                            to_f32(c.w.data)});
    ckpt.tensors.push_back({"conv" + std::to_string(l) + ".bias",
                            {std::uint32_t(c.bias.size())},
                            to_f32(c.bias)});
  }
  ckpt.tensors.push_back({"fc.weight",
                          {std::uint32_t(net.fc.out), std::uint32_t(net.fc.in)},
                          to_f32(net.fc.w)});
  ckpt.tensors.push_back(
      {"fc.bias", {std::uint32_t(net.fc.out)}, to_f32(net.fc.b)});
  return ckpt;
}

MicroNet dense_from_checkpoint(const Checkpoint& ckpt) {
  if (checkpoint_is_compressed(ckpt))
    throw std::runtime_error("checkpoint holds a compressed model");
  MicroNet net;
  net.input_shape = {3, 16, 16};
  const int strides[3] = {1, 2, 2};
  for (int l = 0;; ++l) {
    const NamedTensor* w = ckpt.find("conv" + std::to_string(l) + ".weight");
    if (!w) break;
    if (w->dims.size() != 4 || w->dims[2] != w->dims[3])
      throw std::runtime_error("bad conv weight dims");
    ConvLayer c;
    c.w.c_out = int(w->dims[0]);
    c.w.c_in = int(w->dims[1]);
    c.w.k = int(w->dims[2]);
    c.w.data = to_f64(w->data);
    c.bias = to_f64(ckpt.require("conv" + std::to_string(l) + ".bias").data);
    c.stride = l < 3 ? strides[l] : 1;
    c.pad = c.w.k / 2;
    net.convs.push_back(std::move(c));
  }
  const NamedTensor& fcw = ckpt.require("fc.weight");
  net.fc.out = int(fcw.dims[0]);
  net.fc.in = int(fcw.dims[1]);
  net.fc.w = to_f64(fcw.data);
  net.fc.b = to_f64(ckpt.require("fc.bias").data);
  return net;
}

Checkpoint checkpoint_from_compressed(const CompressedNet& net) {
  Checkpoint ckpt;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const GroupedLayer& c = net.layers[l];
    const std::uint32_t G = std::uint32_t(c.groups);
    ckpt.tensors.push_back(
        {"conv" + std::to_string(l) + ".weight",
         {G, std::uint32_t(c.c_out) / G, std::uint32_t(c.c_in) / G,
          std::uint32_t(c.k), std::uint32_t(c.k)},
         to_f32(c.w)});
    ckpt.tensors.push_back({"conv" + std::to_string(l) + ".bias",
                            {std::uint32_t(c.bias.size())},
                            to_f32(c.bias)});
  }
  ckpt.tensors.push_back({"fc.weight",
                          {std::uint32_t(net.fc.out), std::uint32_t(net.fc.in)},
                          to_f32(net.fc.w)});
  ckpt.tensors.push_back(
      {"fc.bias", {std::uint32_t(net.fc.out)}, to_f32(net.fc.b)});
  return ckpt;
}

CompressedNet compressed_from_checkpoint(const Checkpoint& ckpt,
                                         const GroupingPlan& plan) {
  if (!checkpoint_is_compressed(ckpt))
    throw std::runtime_error("checkpoint holds a dense model");
  CompressedNet net;
  net.input_shape = {3, 16, 16};
  const int strides[3] = {1, 2, 2};
  for (std::size_t l = 0; l < plan.layers.size(); ++l) {
    const NamedTensor& w = ckpt.require("conv" + std::to_string(l) + ".weight");
    if (w.dims.size() != 5)
      throw std::runtime_error("expected 5-D grouped weights");
    GroupedLayer layer;
    layer.groups = int(w.dims[0]);
    layer.c_out = int(w.dims[0] * w.dims[1]);
    layer.c_in = int(w.dims[0] * w.dims[2]);
    layer.k = int(w.dims[3]);
    layer.stride = l < 3 ? strides[l] : 1;
    layer.pad = layer.k / 2;
    layer.w = to_f64(w.data);
    layer.bias = to_f64(ckpt.require("conv" + std::to_string(l) + ".bias").data);
    layer.gather_in = plan.layers[l].gather_in;
    layer.scatter_out = plan.layers[l].scatter_out;
    if (layer.groups != (1 << (plan.layers[l].group_level - 1)))
      throw std::runtime_error("plan level disagrees with checkpoint groups");
    net.layers.push_back(std::move(layer));
  }
  const NamedTensor& fcw = ckpt.require("fc.weight");
  net.fc.out = int(fcw.dims[0]);
  net.fc.in = int(fcw.dims[1]);
  net.fc.w = to_f64(fcw.data);
  net.fc.b = to_f64(ckpt.require("fc.bias").data);
  return net;
}

bool checkpoint_is_compressed(const Checkpoint& ckpt) {
  for (const NamedTensor& t : ckpt.tensors)
    if (t.dims.size() == 5 && t.name.find(".weight") != std::string::npos)
      return true;
  return false;
}

Checkpoint checkpoint_from_dataset(const SynthDataset& data) {
  Checkpoint ckpt;
  const auto dims = [&](int n) {
    return std::vector<std::uint32_t>{
        std::uint32_t(n), std::uint32_t(data.shape.channels),
        std::uint32_t(data.shape.height), std::uint32_t(data.shape.width)};
  };
  ckpt.tensors.push_back(
      {"data.train", dims(data.train_count()), to_f32(data.train_images)});
  ckpt.tensors.push_back(
      {"data.test", dims(data.test_count()), to_f32(data.test_images)});
  std::vector<float> train_y(data.train_labels.begin(), data.train_labels.end());
  std::vector<float> test_y(data.test_labels.begin(), data.test_labels.end());
  ckpt.tensors.push_back({"data.train_labels",
                          {std::uint32_t(train_y.size())},
                          std::move(train_y)});
  ckpt.tensors.push_back(
      {"data.test_labels", {std::uint32_t(test_y.size())}, std::move(test_y)});
  return ckpt;
}

}  // namespace sparsegroup
