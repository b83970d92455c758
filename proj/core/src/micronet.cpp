#include "sparsegroup/micronet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace sparsegroup {

namespace {

int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

void validate_conv(const ConvLayer& layer, const TensorShape& in) {
  layer.w.validate();
  if (layer.w.c_in != in.channels)
    throw std::invalid_argument("conv input channel mismatch");
  if (layer.bias.size() != std::size_t(layer.w.c_out))
    throw std::invalid_argument("conv bias length mismatch");
  if (layer.w.k % 2 == 0)
    throw std::invalid_argument("kernel size must be odd");
  if (layer.stride < 1 || layer.pad < 0)
    throw std::invalid_argument("bad stride/padding");
  if (conv_out_dim(in.height, layer.w.k, layer.stride, layer.pad) < 1 ||
      conv_out_dim(in.width, layer.w.k, layer.stride, layer.pad) < 1)
    throw std::invalid_argument("conv output would be empty");
}

// Writes one sample's patch matrix into the batched col buffer.
// Row r = i*k*k + ky*k + kx, column block [s_out, s_out + Ho*Wo).
void im2col(const double* act, int H, int W, int C, int bn_in, int s_in,
            int k, int stride, int pad, int Ho, int Wo, double* col,
            int bn_out, int s_out) {
  for (int i = 0; i < C; ++i) {
    const double* src = act + std::size_t(i) * bn_in + s_in;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* dst =
            col + (std::size_t(i) * k * k + std::size_t(ky) * k + kx) * bn_out +
            s_out;
        for (int p = 0; p < Ho; ++p) {
          const int y = p * stride + ky - pad;
          double* drow = dst + std::size_t(p) * Wo;
          if (y < 0 || y >= H) {
            std::fill(drow, drow + Wo, 0.0);
            continue;
          }
          // valid x range: 0 <= q*stride + kx - pad < W
          int q_lo = 0;
          while (q_lo < Wo && q_lo * stride + kx - pad < 0) ++q_lo;
          int q_hi = Wo;  // exclusive
          while (q_hi > q_lo && (q_hi - 1) * stride + kx - pad >= W) --q_hi;
          std::fill(drow, drow + q_lo, 0.0);
          std::fill(drow + q_hi, drow + Wo, 0.0);
          const double* srow = src + std::size_t(y) * W + (kx - pad);
          if (stride == 1) {
            for (int q = q_lo; q < q_hi; ++q) drow[q] = srow[q];
          } else {
            for (int q = q_lo; q < q_hi; ++q) drow[q] = srow[q * stride];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, int H, int W, int C, int bn_in, int s_in,
                int k, int stride, int pad, int Ho, int Wo, double* act,
                int bn_out, int s_out) {
  for (int i = 0; i < C; ++i) {
    double* dst = act + std::size_t(i) * bn_out + s_out;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* src =
            col + (std::size_t(i) * k * k + std::size_t(ky) * k + kx) * bn_in +
            s_in;
        int q_lo = 0;
        while (q_lo < Wo && q_lo * stride + kx - pad < 0) ++q_lo;
        int q_hi = Wo;
        while (q_hi > q_lo && (q_hi - 1) * stride + kx - pad >= W) --q_hi;
        for (int p = 0; p < Ho; ++p) {
          const int y = p * stride + ky - pad;
          if (y < 0 || y >= H) continue;
          const double* srow = src + std::size_t(p) * Wo;
          double* drow = dst + std::size_t(y) * W + (kx - pad);
          if (stride == 1) {
            for (int q = q_lo; q < q_hi; ++q) drow[q] += srow[q];
          } else {
            for (int q = q_lo; q < q_hi; ++q) drow[q * stride] += srow[q];
          }
        }
      }
    }
  }
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return seed * 0x9E3779B97F4A7C15ULL + stream;
}

void fill_normal(std::vector<double>& v, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& x : v) x = dist(rng);
}

StageDims stage_dims(const TensorShape& input, int n_layers,
                     const int* c_out, const int* k, const int* stride,
                     const int* pad) {
  StageDims d;
  d.c = {input.channels};
  d.h = {input.height};
  d.w = {input.width};
  d.n = {input.height * input.width};
  for (int l = 0; l < n_layers; ++l) {
    d.c.push_back(c_out[l]);
    d.h.push_back(conv_out_dim(d.h.back(), k[l], stride[l], pad[l]));
    d.w.push_back(conv_out_dim(d.w.back(), k[l], stride[l], pad[l]));
    d.n.push_back(d.h.back() * d.w.back());
  }
  return d;
}

// Cross-entropy on work logits; fills dlogits scaled by 1/batch when grad.
BatchResult softmax_loss(const double* z, const int* labels, int batch,
                         int classes, double* dz) {
  BatchResult r;
  for (int s = 0; s < batch; ++s) {
    const double* row = z + std::size_t(s) * classes;
    int arg = 0;
    double m = row[0];
    for (int o = 1; o < classes; ++o)
      if (row[o] > m) { m = row[o]; arg = o; }
    double sumexp = 0.0;
    for (int o = 0; o < classes; ++o) sumexp += std::exp(row[o] - m);
    const int y = labels[s];
    r.loss_sum += std::log(sumexp) + m - row[y];
    if (arg == y) ++r.correct;
    if (dz) {
      double* drow = dz + std::size_t(s) * classes;
      for (int o = 0; o < classes; ++o)
        drow[o] = (std::exp(row[o] - m) / sumexp - (o == y ? 1.0 : 0.0)) /
                  double(batch);
    }
  }
  return r;
}

void add_bias_relu(double* out, const std::vector<double>& bias, int bn,
                   bool relu) {
  for (std::size_t j = 0; j < bias.size(); ++j) {
    double* row = out + j * std::size_t(bn);
    const double b = bias[j];
    if (relu) {
      for (int t = 0; t < bn; ++t) row[t] = std::max(0.0, row[t] + b);
    } else {
      for (int t = 0; t < bn; ++t) row[t] += b;
    }
  }
}

void global_average_pool(const double* act, int C, int N, int bn, int batch,
                         double* pooled) {
  for (int s = 0; s < batch; ++s) {
    for (int c = 0; c < C; ++c) {
      const double* row = act + std::size_t(c) * bn + std::size_t(s) * N;
      double acc = 0.0;
      for (int n = 0; n < N; ++n) acc += row[n];
      pooled[std::size_t(s) * C + c] = acc / double(N);
    }
  }
}

}  // namespace

std::vector<LayerSpec> MicroNet::conv_specs() const {
  std::vector<LayerSpec> specs;
  TensorShape shape = input_shape;
  for (std::size_t l = 0; l < convs.size(); ++l) {
    const ConvLayer& c = convs[l];
    LayerSpec spec;
    spec.name = "conv" + std::to_string(l);
    spec.c_in = c.w.c_in;
    spec.c_out = c.w.c_out;
    spec.k = c.w.k;
    spec.stride = c.stride;
    spec.in_shape = shape;
    specs.push_back(spec);
    shape = TensorShape{c.w.c_out,
                        conv_out_dim(shape.height, c.w.k, c.stride, c.pad),
                        conv_out_dim(shape.width, c.w.k, c.stride, c.pad)};
  }
  return specs;
}

MicroNet make_micronet(std::uint64_t seed) {
  MicroNet net;
  net.rng_seed = seed;
  net.input_shape = TensorShape{3, 16, 16};
  std::mt19937_64 rng(mix_seed(seed, 0xA11CE));
  const int co[3] = {16, 32, 64};
  const int st[3] = {1, 2, 2};
  int ci = 3;
  for (int l = 0; l < 3; ++l) {
    ConvLayer layer;
    layer.w = WeightTensor(co[l], ci, 3);
    layer.bias.assign(std::size_t(co[l]), 0.0);
    layer.stride = st[l];
    layer.pad = 1;
    fill_normal(layer.w.data, rng, std::sqrt(2.0 / (ci * 9.0)));
    net.convs.push_back(std::move(layer));
    ci = co[l];
  }
  net.fc.in = 64;
  net.fc.out = 10;
  net.fc.w.assign(std::size_t(64) * 10, 0.0);
  net.fc.b.assign(10, 0.0);
  fill_normal(net.fc.w, rng, std::sqrt(1.0 / 64.0));
  return net;
}

long long GroupedLayer::param_count(bool with_bias) const {
  long long p = (long long)(w.size());
  if (with_bias) p += (long long)(bias.size());
  return p;
}

void reinit_weights(CompressedNet& net, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0xF2E51));
  for (GroupedLayer& layer : net.layers) {
    const int fan_in = (layer.c_in / layer.groups) * layer.k * layer.k;
    fill_normal(layer.w, rng, std::sqrt(2.0 / double(fan_in)));
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  }
  fill_normal(net.fc.w, rng, std::sqrt(1.0 / double(net.fc.in)));
  std::fill(net.fc.b.begin(), net.fc.b.end(), 0.0);
}

SynthDataset make_synth_dataset(std::uint64_t seed, int train_per_class,
                                int test_per_class, double noise_sigma) {
  SynthDataset data;
  data.seed = seed;
  const int C = data.shape.channels, H = data.shape.height,
            W = data.shape.width;
  const int th = H / 2, tw = W / 2;
  std::mt19937_64 rng(mix_seed(seed, 0xDA7A));
  std::normal_distribution<double> unit(0.0, 1.0);

  std::vector<std::vector<double>> templates(static_cast<std::size_t>(data.n_classes));
  for (auto& t : templates) {
    t.resize(std::size_t(C) * th * tw);
    for (double& x : t) x = unit(rng);
  }

  auto emit = [&](std::vector<double>& images, std::vector<int>& labels,
                  int per_class) {
    images.resize(std::size_t(per_class) * data.n_classes * data.shape.numel());
    labels.resize(std::size_t(per_class) * data.n_classes);
    std::size_t idx = 0;
    for (int cls = 0; cls < data.n_classes; ++cls) {
      const std::vector<double>& t = templates[std::size_t(cls)];
      for (int s = 0; s < per_class; ++s) {
        double* img = images.data() + idx * data.shape.numel();
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
              img[(std::size_t(c) * H + y) * W + x] =
                  t[(std::size_t(c) * th + y / 2) * tw + x / 2] +
                  noise_sigma * unit(rng);
        labels[idx] = cls;
        ++idx;
      }
    }
  };
  emit(data.train_images, data.train_labels, train_per_class);
  emit(data.test_images, data.test_labels, test_per_class);
  return data;
}

FeatureMap conv_forward(const ConvLayer& layer, const FeatureMap& f) {
  validate_conv(layer, f.shape);
  const int k = layer.w.k;
  const int Ho = conv_out_dim(f.shape.height, k, layer.stride, layer.pad);
  const int Wo = conv_out_dim(f.shape.width, k, layer.stride, layer.pad);
  const int No = Ho * Wo;
  std::vector<double> col(std::size_t(layer.w.c_in) * k * k * No);
  im2col(f.data.data(), f.shape.height, f.shape.width, f.shape.channels,
         f.shape.height * f.shape.width, 0, k, layer.stride, layer.pad, Ho, Wo,
         col.data(), No, 0);
  FeatureMap out(TensorShape{layer.w.c_out, Ho, Wo});
  matmul_nn(layer.w.data.data(), col.data(), out.data.data(), layer.w.c_out,
            layer.w.c_in * k * k, No);
  add_bias_relu(out.data.data(), layer.bias, No, false);
  return out;
}

FeatureMap groupconv_forward(const GroupedLayer& layer, const FeatureMap& f) {
  if (f.shape.channels != layer.c_in)
    throw std::invalid_argument("grouped conv input channel mismatch");
  if (layer.c_in % layer.groups != 0 || layer.c_out % layer.groups != 0)
    throw std::invalid_argument("channels not divisible by group count");
  const int k = layer.k, G = layer.groups;
  const int m = layer.c_in / G, mo = layer.c_out / G;
  const int Ho = conv_out_dim(f.shape.height, k, layer.stride, layer.pad);
  const int Wo = conv_out_dim(f.shape.width, k, layer.stride, layer.pad);
  const int No = Ho * Wo;
  const int N = f.shape.height * f.shape.width;

  FeatureMap gathered(f.shape);
  for (int b = 0; b < layer.c_in; ++b)
    std::copy_n(f.data.data() + std::size_t(layer.gather_in[b]) * N, N,
                gathered.data.data() + std::size_t(b) * N);

  std::vector<double> col(std::size_t(layer.c_in) * k * k * No);
  im2col(gathered.data.data(), f.shape.height, f.shape.width, layer.c_in, N, 0,
         k, layer.stride, layer.pad, Ho, Wo, col.data(), No, 0);

  std::vector<double> out_perm(std::size_t(layer.c_out) * No);
  const int kk = m * k * k;
  for (int g = 0; g < G; ++g) {
    matmul_nn(layer.w.data() + std::size_t(g) * mo * kk,
              col.data() + std::size_t(g) * kk * No,
              out_perm.data() + std::size_t(g) * mo * No, mo, kk, No);
  }
  add_bias_relu(out_perm.data(), layer.bias, No, false);

  FeatureMap out(TensorShape{layer.c_out, Ho, Wo});
  for (int a = 0; a < layer.c_out; ++a)
    std::copy_n(out_perm.data() + std::size_t(a) * No, No,
                out.data.data() + std::size_t(layer.scatter_out[a]) * No);
  return out;
}

ConvLayer masked_dense_equivalent(const GroupedLayer& layer) {
  ConvLayer dense;
  dense.w = WeightTensor(layer.c_out, layer.c_in, layer.k);
  dense.bias.assign(std::size_t(layer.c_out), 0.0);
  dense.stride = layer.stride;
  dense.pad = layer.pad;
  const int G = layer.groups;
  const int m = layer.c_in / G, mo = layer.c_out / G;
  const int kk = layer.k * layer.k;
  const Permutation s_inv = layer.scatter_out.inverse();
  const Permutation g_inv = layer.gather_in.inverse();
  for (int j = 0; j < layer.c_out; ++j) {
    const int a = s_inv[j];
    dense.bias[std::size_t(j)] = layer.bias[std::size_t(a)];
    for (int i = 0; i < layer.c_in; ++i) {
      const int b = g_inv[i];
      if (a / mo != b / m) continue;  // off-block: stays zero
      const int g = a / mo;
      const double* src = layer.w.data() +
                          ((std::size_t(g) * mo + (a - g * mo)) * m +
                           (b - g * m)) * kk;
      std::copy_n(src, kk, dense.w.data.data() + dense.w.slice_offset(j, i));
    }
  }
  return dense;
}

Gradients Gradients::like_dense(const MicroNet& net) {
  Gradients g;
  for (const ConvLayer& c : net.convs) {
    g.conv_w.emplace_back(c.w.data.size(), 0.0);
    g.conv_b.emplace_back(c.bias.size(), 0.0);
  }
  g.fc_w.assign(net.fc.w.size(), 0.0);
  g.fc_b.assign(net.fc.b.size(), 0.0);
  return g;
}

Gradients Gradients::like_grouped(const CompressedNet& net) {
  Gradients g;
  for (const GroupedLayer& c : net.layers) {
    g.conv_w.emplace_back(c.w.size(), 0.0);
    g.conv_b.emplace_back(c.bias.size(), 0.0);
  }
  g.fc_w.assign(net.fc.w.size(), 0.0);
  g.fc_b.assign(net.fc.b.size(), 0.0);
  return g;
}

void Gradients::zero() {
  for (auto& v : conv_w) std::fill(v.begin(), v.end(), 0.0);
  for (auto& v : conv_b) std::fill(v.begin(), v.end(), 0.0);
  std::fill(fc_w.begin(), fc_w.end(), 0.0);
  std::fill(fc_b.begin(), fc_b.end(), 0.0);
}

DenseWork::DenseWork(const MicroNet& net, int max_batch_)
    : max_batch(max_batch_) {
  const int L = int(net.convs.size());
  std::vector<int> co(static_cast<std::size_t>(L)), k(static_cast<std::size_t>(L)), st(static_cast<std::size_t>(L)),
      pd(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) {
    co[std::size_t(l)] = net.convs[std::size_t(l)].w.c_out;
    k[std::size_t(l)] = net.convs[std::size_t(l)].w.k;
    st[std::size_t(l)] = net.convs[std::size_t(l)].stride;
    pd[std::size_t(l)] = net.convs[std::size_t(l)].pad;
  }
  dims = stage_dims(net.input_shape, L, co.data(), k.data(), st.data(),
                    pd.data());
  act.resize(std::size_t(L) + 1);
  dact.resize(std::size_t(L) + 1);
  col.resize(static_cast<std::size_t>(L));
  colT.resize(static_cast<std::size_t>(L));
  dcol.resize(static_cast<std::size_t>(L));
  for (int s = 0; s <= L; ++s) {
    const std::size_t sz =
        std::size_t(dims.c[std::size_t(s)]) * max_batch * dims.n[std::size_t(s)];
    act[std::size_t(s)].assign(sz, 0.0);
    dact[std::size_t(s)].assign(sz, 0.0);
  }
  for (int l = 0; l < L; ++l) {
    const std::size_t sz = std::size_t(dims.c[std::size_t(l)]) *
                           k[std::size_t(l)] * k[std::size_t(l)] * max_batch *
                           dims.n[std::size_t(l) + 1];
    col[std::size_t(l)].assign(sz, 0.0);
    colT[std::size_t(l)].assign(sz, 0.0);
    dcol[std::size_t(l)].assign(sz, 0.0);
  }
  const int C = dims.c.back();
  pooled.assign(std::size_t(max_batch) * C, 0.0);
  dpooled.assign(std::size_t(max_batch) * C, 0.0);
  logits_buf.assign(std::size_t(max_batch) * net.fc.out, 0.0);
  dlogits.assign(std::size_t(max_batch) * net.fc.out, 0.0);
}

namespace {

void pack_input(const double* const* images, int batch, int C, int N,
                double* act) {
  const int bn = batch * N;
  for (int s = 0; s < batch; ++s)
    for (int c = 0; c < C; ++c)
      std::copy_n(images[s] + std::size_t(c) * N, N,
                  act + std::size_t(c) * bn + std::size_t(s) * N);
}

BatchResult dense_run(const MicroNet& net, const double* const* images,
                      const int* labels, int batch, DenseWork& w,
                      Gradients* grads) {
  if (batch < 1 || batch > w.max_batch)
    throw std::invalid_argument("batch size outside workspace capacity");
  const int L = int(net.convs.size());
  pack_input(images, batch, w.dims.c[0], w.dims.n[0], w.act[0].data());

  for (int l = 0; l < L; ++l) {
    const ConvLayer& conv = net.convs[std::size_t(l)];
    const int k = conv.w.k;
    const int bn_in = batch * w.dims.n[std::size_t(l)];
    const int bn_out = batch * w.dims.n[std::size_t(l) + 1];
    for (int s = 0; s < batch; ++s)
      im2col(w.act[std::size_t(l)].data(), w.dims.h[std::size_t(l)],
             w.dims.w[std::size_t(l)], w.dims.c[std::size_t(l)], bn_in,
             s * w.dims.n[std::size_t(l)], k, conv.stride, conv.pad,
             w.dims.h[std::size_t(l) + 1], w.dims.w[std::size_t(l) + 1],
             w.col[std::size_t(l)].data(), bn_out,
             s * w.dims.n[std::size_t(l) + 1]);
    matmul_nn(conv.w.data.data(), w.col[std::size_t(l)].data(),
              w.act[std::size_t(l) + 1].data(), conv.w.c_out,
              conv.w.c_in * k * k, bn_out);
    add_bias_relu(w.act[std::size_t(l) + 1].data(), conv.bias, bn_out, true);
  }

  const int C = w.dims.c[std::size_t(L)];
  const int N = w.dims.n[std::size_t(L)];
  global_average_pool(w.act[std::size_t(L)].data(), C, N, batch * N, batch,
                      w.pooled.data());
  matmul_nt(w.pooled.data(), net.fc.w.data(), w.logits_buf.data(), batch, C,
            net.fc.out);
  for (int s = 0; s < batch; ++s)
    for (int o = 0; o < net.fc.out; ++o)
      w.logits_buf[std::size_t(s) * net.fc.out + o] += net.fc.b[std::size_t(o)];

  BatchResult res = softmax_loss(w.logits_buf.data(), labels, batch, net.fc.out,
                                 grads ? w.dlogits.data() : nullptr);
  if (!grads) return res;

  // Classifier backward.
  matmul_tn(w.dlogits.data(), w.pooled.data(), grads->fc_w.data(), batch,
            net.fc.out, C);
  for (int o = 0; o < net.fc.out; ++o) {
    double acc = 0.0;
    for (int s = 0; s < batch; ++s)
      acc += w.dlogits[std::size_t(s) * net.fc.out + o];
    grads->fc_b[std::size_t(o)] = acc;
  }
  matmul_nn(w.dlogits.data(), net.fc.w.data(), w.dpooled.data(), batch,
            net.fc.out, C);

  // Pool backward.
  {
    const int bn = batch * N;
    for (int c = 0; c < C; ++c) {
      double* row = w.dact[std::size_t(L)].data() + std::size_t(c) * bn;
      for (int s = 0; s < batch; ++s) {
        const double g = w.dpooled[std::size_t(s) * C + c] / double(N);
        std::fill(row + std::size_t(s) * N, row + std::size_t(s) * N + N, g);
      }
    }
  }

  for (int l = L - 1; l >= 0; --l) {
    const ConvLayer& conv = net.convs[std::size_t(l)];
    const int k = conv.w.k;
    const int bn_out = batch * w.dims.n[std::size_t(l) + 1];
    const int bn_in = batch * w.dims.n[std::size_t(l)];
    double* dout = w.dact[std::size_t(l) + 1].data();
    const double* actv = w.act[std::size_t(l) + 1].data();
    const std::size_t total = std::size_t(conv.w.c_out) * bn_out;
    for (std::size_t t = 0; t < total; ++t)
      if (actv[t] <= 0.0) dout[t] = 0.0;

    for (int j = 0; j < conv.w.c_out; ++j) {
      double acc = 0.0;
      const double* row = dout + std::size_t(j) * bn_out;
      for (int t = 0; t < bn_out; ++t) acc += row[t];
      grads->conv_b[std::size_t(l)][std::size_t(j)] = acc;
    }
    transpose(w.col[std::size_t(l)].data(), w.colT[std::size_t(l)].data(),
              conv.w.c_in * k * k, bn_out);
    matmul_nn(dout, w.colT[std::size_t(l)].data(),
              grads->conv_w[std::size_t(l)].data(), conv.w.c_out, bn_out,
              conv.w.c_in * k * k);
    if (l > 0) {
      matmul_tn(conv.w.data.data(), dout, w.dcol[std::size_t(l)].data(),
                conv.w.c_out, conv.w.c_in * k * k, bn_out);
      std::fill(w.dact[std::size_t(l)].begin(), w.dact[std::size_t(l)].end(),
                0.0);
      for (int s = 0; s < batch; ++s)
        col2im_add(w.dcol[std::size_t(l)].data(), w.dims.h[std::size_t(l)],
                   w.dims.w[std::size_t(l)], w.dims.c[std::size_t(l)], bn_out,
                   s * w.dims.n[std::size_t(l) + 1], k, conv.stride, conv.pad,
                   w.dims.h[std::size_t(l) + 1], w.dims.w[std::size_t(l) + 1],
                   w.dact[std::size_t(l)].data(), bn_in,
                   s * w.dims.n[std::size_t(l)]);
    }
  }
  return res;
}

}  // namespace

BatchResult dense_forward(const MicroNet& net, const double* const* images,
                          const int* labels, int batch, DenseWork& work) {
  return dense_run(net, images, labels, batch, work, nullptr);
}

BatchResult dense_backward(const MicroNet& net, const double* const* images,
                           const int* labels, int batch, DenseWork& work,
                           Gradients& grads) {
  return dense_run(net, images, labels, batch, work, &grads);
}

BatchResult backward(const MicroNet& net, const double* const* images,
                     const int* labels, int batch, Gradients& grads) {
  DenseWork work(net, batch);
  return dense_backward(net, images, labels, batch, work, grads);
}

GroupedWork::GroupedWork(const CompressedNet& net, int max_batch_)
    : max_batch(max_batch_) {
  const int L = int(net.layers.size());
  std::vector<int> co(static_cast<std::size_t>(L)), k(static_cast<std::size_t>(L)), st(static_cast<std::size_t>(L)),
      pd(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) {
    co[std::size_t(l)] = net.layers[std::size_t(l)].c_out;
    k[std::size_t(l)] = net.layers[std::size_t(l)].k;
    st[std::size_t(l)] = net.layers[std::size_t(l)].stride;
    pd[std::size_t(l)] = net.layers[std::size_t(l)].pad;
  }
  dims = stage_dims(net.input_shape, L, co.data(), k.data(), st.data(),
                    pd.data());
  act.resize(std::size_t(L) + 1);
  dact.resize(std::size_t(L) + 1);
  gathered.resize(static_cast<std::size_t>(L));
  dgathered.resize(static_cast<std::size_t>(L));
  out_perm.resize(static_cast<std::size_t>(L));
  dout_perm.resize(static_cast<std::size_t>(L));
  col.resize(static_cast<std::size_t>(L));
  colT.resize(static_cast<std::size_t>(L));
  dcol.resize(static_cast<std::size_t>(L));
  for (int s = 0; s <= L; ++s) {
    const std::size_t sz =
        std::size_t(dims.c[std::size_t(s)]) * max_batch * dims.n[std::size_t(s)];
    act[std::size_t(s)].assign(sz, 0.0);
    dact[std::size_t(s)].assign(sz, 0.0);
  }
  for (int l = 0; l < L; ++l) {
    const std::size_t in_sz = std::size_t(dims.c[std::size_t(l)]) * max_batch *
                              dims.n[std::size_t(l)];
    const std::size_t out_sz = std::size_t(dims.c[std::size_t(l) + 1]) *
                               max_batch * dims.n[std::size_t(l) + 1];
    gathered[std::size_t(l)].assign(in_sz, 0.0);
    dgathered[std::size_t(l)].assign(in_sz, 0.0);
    out_perm[std::size_t(l)].assign(out_sz, 0.0);
    dout_perm[std::size_t(l)].assign(out_sz, 0.0);
    const std::size_t col_sz = std::size_t(dims.c[std::size_t(l)]) *
                               k[std::size_t(l)] * k[std::size_t(l)] *
                               max_batch * dims.n[std::size_t(l) + 1];
    col[std::size_t(l)].assign(col_sz, 0.0);
    colT[std::size_t(l)].assign(col_sz, 0.0);
    dcol[std::size_t(l)].assign(col_sz, 0.0);
  }
  const int C = dims.c.back();
  pooled.assign(std::size_t(max_batch) * C, 0.0);
  dpooled.assign(std::size_t(max_batch) * C, 0.0);
  logits_buf.assign(std::size_t(max_batch) * net.fc.out, 0.0);
  dlogits.assign(std::size_t(max_batch) * net.fc.out, 0.0);
}

namespace {

BatchResult grouped_run(const CompressedNet& net, const double* const* images,
                        const int* labels, int batch, GroupedWork& w,
                        Gradients* grads) {
  if (batch < 1 || batch > w.max_batch)
    throw std::invalid_argument("batch size outside workspace capacity");
  const int L = int(net.layers.size());
  pack_input(images, batch, w.dims.c[0], w.dims.n[0], w.act[0].data());

  for (int l = 0; l < L; ++l) {
    const GroupedLayer& layer = net.layers[std::size_t(l)];
    const int k = layer.k, G = layer.groups;
    const int m = layer.c_in / G, mo = layer.c_out / G;
    const int kk = m * k * k;
    const int bn_in = batch * w.dims.n[std::size_t(l)];
    const int bn_out = batch * w.dims.n[std::size_t(l) + 1];

    for (int b = 0; b < layer.c_in; ++b)
      std::copy_n(w.act[std::size_t(l)].data() +
                      std::size_t(layer.gather_in[b]) * bn_in,
                  bn_in,
                  w.gathered[std::size_t(l)].data() + std::size_t(b) * bn_in);
    for (int s = 0; s < batch; ++s)
      im2col(w.gathered[std::size_t(l)].data(), w.dims.h[std::size_t(l)],
             w.dims.w[std::size_t(l)], layer.c_in, bn_in,
             s * w.dims.n[std::size_t(l)], k, layer.stride, layer.pad,
             w.dims.h[std::size_t(l) + 1], w.dims.w[std::size_t(l) + 1],
             w.col[std::size_t(l)].data(), bn_out,
             s * w.dims.n[std::size_t(l) + 1]);
    for (int g = 0; g < G; ++g)
      matmul_nn(layer.w.data() + std::size_t(g) * mo * kk,
                w.col[std::size_t(l)].data() + std::size_t(g) * kk * bn_out,
                w.out_perm[std::size_t(l)].data() + std::size_t(g) * mo * bn_out,
                mo, kk, bn_out);
    add_bias_relu(w.out_perm[std::size_t(l)].data(), layer.bias, bn_out, true);
    for (int a = 0; a < layer.c_out; ++a)
      std::copy_n(w.out_perm[std::size_t(l)].data() + std::size_t(a) * bn_out,
                  bn_out,
                  w.act[std::size_t(l) + 1].data() +
                      std::size_t(layer.scatter_out[a]) * bn_out);
  }

  const int C = w.dims.c[std::size_t(L)];
  const int N = w.dims.n[std::size_t(L)];
  global_average_pool(w.act[std::size_t(L)].data(), C, N, batch * N, batch,
                      w.pooled.data());
  matmul_nt(w.pooled.data(), net.fc.w.data(), w.logits_buf.data(), batch, C,
            net.fc.out);
  for (int s = 0; s < batch; ++s)
    for (int o = 0; o < net.fc.out; ++o)
      w.logits_buf[std::size_t(s) * net.fc.out + o] += net.fc.b[std::size_t(o)];

  BatchResult res = softmax_loss(w.logits_buf.data(), labels, batch, net.fc.out,
                                 grads ? w.dlogits.data() : nullptr);
  if (!grads) return res;

  matmul_tn(w.dlogits.data(), w.pooled.data(), grads->fc_w.data(), batch,
            net.fc.out, C);
  for (int o = 0; o < net.fc.out; ++o) {
    double acc = 0.0;
    for (int s = 0; s < batch; ++s)
      acc += w.dlogits[std::size_t(s) * net.fc.out + o];
    grads->fc_b[std::size_t(o)] = acc;
  }
  matmul_nn(w.dlogits.data(), net.fc.w.data(), w.dpooled.data(), batch,
            net.fc.out, C);
  {
    const int bn = batch * N;
    for (int c = 0; c < C; ++c) {
      double* row = w.dact[std::size_t(L)].data() + std::size_t(c) * bn;
      for (int s = 0; s < batch; ++s) {
        const double g = w.dpooled[std::size_t(s) * C + c] / double(N);
        std::fill(row + std::size_t(s) * N, row + std::size_t(s) * N + N, g);
      }
    }
  }

  for (int l = L - 1; l >= 0; --l) {
    const GroupedLayer& layer = net.layers[std::size_t(l)];
    const int k = layer.k, G = layer.groups;
    const int m = layer.c_in / G, mo = layer.c_out / G;
    const int kk = m * k * k;
    const int bn_out = batch * w.dims.n[std::size_t(l) + 1];
    const int bn_in = batch * w.dims.n[std::size_t(l)];

    // Un-scatter the upstream gradient, then apply the ReLU mask.
    double* dperm = w.dout_perm[std::size_t(l)].data();
    const double* actv = w.out_perm[std::size_t(l)].data();
    for (int a = 0; a < layer.c_out; ++a)
      std::copy_n(w.dact[std::size_t(l) + 1].data() +
                      std::size_t(layer.scatter_out[a]) * bn_out,
                  bn_out, dperm + std::size_t(a) * bn_out);
    const std::size_t total = std::size_t(layer.c_out) * bn_out;
    for (std::size_t t = 0; t < total; ++t)
      if (actv[t] <= 0.0) dperm[t] = 0.0;

    for (int a = 0; a < layer.c_out; ++a) {
      double acc = 0.0;
      const double* row = dperm + std::size_t(a) * bn_out;
      for (int t = 0; t < bn_out; ++t) acc += row[t];
      grads->conv_b[std::size_t(l)][std::size_t(a)] = acc;
    }
    const int k2c = layer.c_in * k * k;
    transpose(w.col[std::size_t(l)].data(), w.colT[std::size_t(l)].data(),
              k2c, bn_out);
    for (int g = 0; g < G; ++g) {
      matmul_nn_strided(
          dperm + std::size_t(g) * mo * bn_out,
          w.colT[std::size_t(l)].data() + std::size_t(g) * kk,
          grads->conv_w[std::size_t(l)].data() + std::size_t(g) * mo * kk,
          mo, bn_out, kk, k2c, kk);
    }
    if (l > 0) {
      for (int g = 0; g < G; ++g)
        matmul_tn(layer.w.data() + std::size_t(g) * mo * kk,
                  dperm + std::size_t(g) * mo * bn_out,
                  w.dcol[std::size_t(l)].data() + std::size_t(g) * kk * bn_out,
                  mo, kk, bn_out);
      std::fill(w.dgathered[std::size_t(l)].begin(),
                w.dgathered[std::size_t(l)].end(), 0.0);
      for (int s = 0; s < batch; ++s)
        col2im_add(w.dcol[std::size_t(l)].data(), w.dims.h[std::size_t(l)],
                   w.dims.w[std::size_t(l)], layer.c_in, bn_out,
                   s * w.dims.n[std::size_t(l) + 1], k, layer.stride, layer.pad,
                   w.dims.h[std::size_t(l) + 1], w.dims.w[std::size_t(l) + 1],
                   w.dgathered[std::size_t(l)].data(), bn_in,
                   s * w.dims.n[std::size_t(l)]);
      for (int b = 0; b < layer.c_in; ++b)
        std::copy_n(w.dgathered[std::size_t(l)].data() + std::size_t(b) * bn_in,
                    bn_in,
                    w.dact[std::size_t(l)].data() +
                        std::size_t(layer.gather_in[b]) * bn_in);
    }
  }
  return res;
}

}  // namespace

BatchResult grouped_forward(const CompressedNet& net,
                            const double* const* images, const int* labels,
                            int batch, GroupedWork& work) {
  return grouped_run(net, images, labels, batch, work, nullptr);
}

BatchResult grouped_backward(const CompressedNet& net,
                             const double* const* images, const int* labels,
                             int batch, GroupedWork& work, Gradients& grads) {
  return grouped_run(net, images, labels, batch, work, &grads);
}

std::vector<double> logits(const MicroNet& net, const double* image) {
  FeatureMap f(net.input_shape);
  std::copy_n(image, f.data.size(), f.data.data());
  for (const ConvLayer& conv : net.convs) {
    f = conv_forward(conv, f);
    for (double& x : f.data) x = std::max(0.0, x);
  }
  const int N = f.shape.height * f.shape.width;
  std::vector<double> h(static_cast<std::size_t>(f.shape.channels));
  for (int c = 0; c < f.shape.channels; ++c) {
    double acc = 0.0;
    for (int n = 0; n < N; ++n) acc += f.data[std::size_t(c) * N + n];
    h[std::size_t(c)] = acc / double(N);
  }
  std::vector<double> z(static_cast<std::size_t>(net.fc.out));
  for (int o = 0; o < net.fc.out; ++o) {
    double acc = net.fc.b[std::size_t(o)];
    for (int c = 0; c < net.fc.in; ++c)
      acc += net.fc.w[std::size_t(o) * net.fc.in + c] * h[std::size_t(c)];
    z[std::size_t(o)] = acc;
  }
  return z;
}

std::vector<double> logits(const CompressedNet& net, const double* image,
                           bool fused) {
  FeatureMap f(net.input_shape);
  std::copy_n(image, f.data.size(), f.data.data());
  const int L = int(net.layers.size());
  // In the fused path each scatter is composed with the next gather so the
  // intermediate maps stay in permuted order; the computed sums are the same.
  Permutation carried;  // scatter of the previous layer not yet applied
  for (int l = 0; l < L; ++l) {
    GroupedLayer layer = net.layers[std::size_t(l)];
    if (fused) {
      if (l > 0) {
        // effective gather: b -> carried_scatter^{-1}[gather[b]]
        const Permutation inv = carried.inverse();
        std::vector<int> fusedg(static_cast<std::size_t>(layer.c_in));
        for (int b = 0; b < layer.c_in; ++b) fusedg[std::size_t(b)] = inv[layer.gather_in[b]];
        layer.gather_in = Permutation(fusedg);
      }
      carried = layer.scatter_out;
      layer.scatter_out = Permutation::identity(layer.c_out);
    }
    f = groupconv_forward(layer, f);
    for (double& x : f.data) x = std::max(0.0, x);
  }
  const int N = f.shape.height * f.shape.width;
  const int C = f.shape.channels;
  std::vector<double> hperm(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    for (int n = 0; n < N; ++n) acc += f.data[std::size_t(c) * N + n];
    hperm[std::size_t(c)] = acc / double(N);
  }
  std::vector<double> h(static_cast<std::size_t>(C));
  if (fused && L > 0) {
    for (int a = 0; a < C; ++a) h[std::size_t(carried[a])] = hperm[std::size_t(a)];
  } else {
    h = hperm;
  }
  std::vector<double> z(static_cast<std::size_t>(net.fc.out));
  for (int o = 0; o < net.fc.out; ++o) {
    double acc = net.fc.b[std::size_t(o)];
    for (int c = 0; c < net.fc.in; ++c)
      acc += net.fc.w[std::size_t(o) * net.fc.in + c] * h[std::size_t(c)];
    z[std::size_t(o)] = acc;
  }
  return z;
}

namespace {

template <typename Net, typename Work, typename Fwd>
double evaluate_impl(const Net& net, const SynthDataset& data, Split split,
                     Work& work, Fwd fwd) {
  const int count = split == Split::Test ? data.test_count() : data.train_count();
  const int B = work.max_batch;
  int correct = 0;
  std::vector<const double*> imgs(static_cast<std::size_t>(B));
  std::vector<int> labels(static_cast<std::size_t>(B));
  for (int start = 0; start < count; start += B) {
    const int b = std::min(B, count - start);
    for (int s = 0; s < b; ++s) {
      imgs[std::size_t(s)] = split == Split::Test
                                 ? data.test_image(start + s)
                                 : data.train_image(start + s);
      labels[std::size_t(s)] = split == Split::Test
                                   ? data.test_labels[std::size_t(start + s)]
                                   : data.train_labels[std::size_t(start + s)];
    }
    correct += fwd(net, imgs.data(), labels.data(), b, work).correct;
  }
  return double(correct) / double(count);
}

}  // namespace

double evaluate(const MicroNet& net, const SynthDataset& data, Split split) {
  DenseWork work(net, 64);
  return evaluate_impl(net, data, split, work,
                       [](const MicroNet& n, const double* const* i,
                          const int* l, int b, DenseWork& w) {
                         return dense_forward(n, i, l, b, w);
                       });
}

double evaluate(const CompressedNet& net, const SynthDataset& data,
                Split split) {
  GroupedWork work(net, 64);
  return evaluate_impl(net, data, split, work,
                       [](const CompressedNet& n, const double* const* i,
                          const int* l, int b, GroupedWork& w) {
                         return grouped_forward(n, i, l, b, w);
                       });
}

namespace {

struct ParamRef {
  double* p;
  double* g;
  double* v;
  std::size_t n;
};

inline double* layer_weights(ConvLayer& c) { return c.w.data.data(); }
inline double* layer_weights(GroupedLayer& c) { return c.w.data(); }

template <typename Layers>
std::vector<ParamRef> param_refs(Layers& layers, LinearLayer& fc,
                                 Gradients& grads, Gradients& vel) {
  std::vector<ParamRef> refs;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    refs.push_back({layer_weights(layers[l]), grads.conv_w[l].data(),
                    vel.conv_w[l].data(), grads.conv_w[l].size()});
    refs.push_back({layers[l].bias.data(), grads.conv_b[l].data(),
                    vel.conv_b[l].data(), grads.conv_b[l].size()});
  }
  refs.push_back({fc.w.data(), grads.fc_w.data(), vel.fc_w.data(),
                  grads.fc_w.size()});
  refs.push_back({fc.b.data(), grads.fc_b.data(), vel.fc_b.data(),
                  grads.fc_b.size()});
  return refs;
}

void sgd_apply(std::vector<ParamRef>& refs, const SgdOptions& sgd) {
  for (ParamRef& r : refs) {
    for (std::size_t t = 0; t < r.n; ++t) {
      double g = r.g[t];
      if (sgd.weight_decay != 0.0) g += sgd.weight_decay * r.p[t];
      r.v[t] = sgd.momentum * r.v[t] + g;
      r.p[t] -= sgd.lr * r.v[t];
    }
  }
}

std::vector<int> shuffled_indices(int n, std::uint64_t seed) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

}  // namespace

EpochStats train_epoch(MicroNet& net, const SynthDataset& data,
                       const SgdOptions& sgd, const RegPenalty& reg,
                       std::uint64_t epoch_seed, Gradients& velocity,
                       DenseWork& work) {
  const bool use_reg = reg.lambda != 0.0 && !reg.reg.empty();
  if (use_reg &&
      (reg.reg.size() != net.convs.size() ||
       reg.p_out.size() != net.convs.size() ||
       reg.q_in.size() != net.convs.size()))
    throw std::invalid_argument("regularization inputs must cover every conv");

  Gradients grads = Gradients::like_dense(net);
  const std::vector<int> order = shuffled_indices(data.train_count(), epoch_seed);
  const int B = std::min(sgd.batch_size, work.max_batch);
  std::vector<const double*> imgs(static_cast<std::size_t>(B));
  std::vector<int> labels(static_cast<std::size_t>(B));

  double loss_sum = 0.0;
  int correct = 0;
  for (std::size_t start = 0; start < order.size(); start += std::size_t(B)) {
    const int b = int(std::min(std::size_t(B), order.size() - start));
    for (int s = 0; s < b; ++s) {
      const int i = order[start + std::size_t(s)];
      imgs[std::size_t(s)] = data.train_image(i);
      labels[std::size_t(s)] = data.train_labels[std::size_t(i)];
    }
    const BatchResult res =
        dense_backward(net, imgs.data(), labels.data(), b, work, grads);
    loss_sum += res.loss_sum;
    correct += res.correct;

    if (use_reg) {
      for (std::size_t l = 0; l < net.convs.size(); ++l) {
        const WeightTensor sub =
            reg_subgradient(net.convs[l].w, reg.p_out[l], reg.q_in[l],
                            reg.reg[l], reg.norm);
        double* g = grads.conv_w[l].data();
        for (std::size_t t = 0; t < sub.data.size(); ++t)
          g[t] += reg.lambda * sub.data[t];
      }
    }
    std::vector<ParamRef> refs = param_refs(net.convs, net.fc, grads, velocity);
    sgd_apply(refs, sgd);
  }
  return {loss_sum / double(data.train_count()),
          double(correct) / double(data.train_count())};
}

EpochStats train_epoch_grouped(CompressedNet& net, const SynthDataset& data,
                               const SgdOptions& sgd, std::uint64_t epoch_seed,
                               Gradients& velocity, GroupedWork& work) {
  Gradients grads = Gradients::like_grouped(net);
  const std::vector<int> order = shuffled_indices(data.train_count(), epoch_seed);
  const int B = std::min(sgd.batch_size, work.max_batch);
  std::vector<const double*> imgs(static_cast<std::size_t>(B));
  std::vector<int> labels(static_cast<std::size_t>(B));

  double loss_sum = 0.0;
  int correct = 0;
  for (std::size_t start = 0; start < order.size(); start += std::size_t(B)) {
    const int b = int(std::min(std::size_t(B), order.size() - start));
    for (int s = 0; s < b; ++s) {
      const int i = order[start + std::size_t(s)];
      imgs[std::size_t(s)] = data.train_image(i);
      labels[std::size_t(s)] = data.train_labels[std::size_t(i)];
    }
    const BatchResult res =
        grouped_backward(net, imgs.data(), labels.data(), b, work, grads);
    loss_sum += res.loss_sum;
    correct += res.correct;
    std::vector<ParamRef> refs = param_refs(net.layers, net.fc, grads, velocity);
    sgd_apply(refs, sgd);
  }
  return {loss_sum / double(data.train_count()),
          double(correct) / double(data.train_count())};
}

}  // namespace sparsegroup
