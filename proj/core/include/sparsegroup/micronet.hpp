#pragma once

#include <cstdint>
#include <vector>

#include "sparsegroup/group_structure.hpp"
#include "sparsegroup/regularizer.hpp"
#include "sparsegroup/tensor.hpp"

namespace sparsegroup {

struct FeatureMap {
  TensorShape shape;
  std::vector<double> data;  // [c][h][w] row-major

  FeatureMap() = default;
  FeatureMap(TensorShape s) : shape(s), data(s.numel(), 0.0) {}
  double& at(int c, int y, int x) {
    return data[(std::size_t(c) * shape.height + y) * shape.width + x];
  }
  double at(int c, int y, int x) const {
    return data[(std::size_t(c) * shape.height + y) * shape.width + x];
  }
};

struct ConvLayer {
  WeightTensor w;
  std::vector<double> bias;
  int stride = 1;
  int pad = 1;
};

struct LinearLayer {
  int in = 0, out = 0;
  std::vector<double> w;  // [out][in]
  std::vector<double> b;  // [out]
};

/// Minimal deterministic convnet: conv-ReLU stages, global average pool,
/// linear classifier. All randomness flows from rng_seed.
struct MicroNet {
  std::vector<ConvLayer> convs;
  LinearLayer fc;
  TensorShape input_shape;
  std::uint64_t rng_seed = 0;

  std::vector<LayerSpec> conv_specs() const;
};

/// The fixed desk-scale architecture:
/// conv3x3 3->16 s1, conv3x3 16->32 s2, conv3x3 32->64 s2, GAP, linear 64->10
/// on 3x16x16 inputs. The first layer has capacity 1 (gcd(3,16) has no even
/// factor) and is carried through the pipeline untouched.
MicroNet make_micronet(std::uint64_t seed);

/// Group convolution with learned channel shuffle. Runtime semantics:
/// gather input channels by gather_in, convolve each group independently,
/// scatter outputs by scatter_out.
struct GroupedLayer {
  int groups = 1;
  int c_out = 0, c_in = 0, k = 0;
  int stride = 1, pad = 1;
  std::vector<double> w;     // [G][c_out/G][c_in/G][k][k]
  std::vector<double> bias;  // [c_out], permuted (grouped) order
  Permutation gather_in;
  Permutation scatter_out;

  long long param_count(bool with_bias = true) const;
};

struct CompressedNet {
  std::vector<GroupedLayer> layers;
  LinearLayer fc;
  TensorShape input_shape;
};

/// Reinitializes grouped weights (He init with per-group fan-in) and biases;
/// the classifier is reinitialized as well. Used by the shuffle ablations.
void reinit_weights(CompressedNet& net, std::uint64_t seed);

/// Synthetic 10-class dataset: per-class 3x8x8 templates upsampled to
/// 3x16x16 plus Gaussian noise. Reproducible from the seed alone;
/// class-balanced splits of 5000 train / 1000 test samples.
struct SynthDataset {
  int n_classes = 10;
  TensorShape shape{3, 16, 16};
  std::vector<double> train_images;  // [n][c*h*w]
  std::vector<int> train_labels;
  std::vector<double> test_images;
  std::vector<int> test_labels;
  std::uint64_t seed = 0;

  int train_count() const { return int(train_labels.size()); }
  int test_count() const { return int(test_labels.size()); }
  const double* train_image(int i) const {
    return train_images.data() + std::size_t(i) * shape.numel();
  }
  const double* test_image(int i) const {
    return test_images.data() + std::size_t(i) * shape.numel();
  }
};

SynthDataset make_synth_dataset(std::uint64_t seed, int train_per_class = 500,
                                int test_per_class = 100,
                                double noise_sigma = 0.3);

/// Plain convolution (weighted local patch sums plus bias); no activation.
FeatureMap conv_forward(const ConvLayer& layer, const FeatureMap& f);

/// Grouped convolution semantics (gather, per-group convolution, scatter);
/// equals conv_forward with the masked dense equivalent weights.
FeatureMap groupconv_forward(const GroupedLayer& layer, const FeatureMap& f);

/// Dense layer computing exactly the same function as the grouped layer:
/// permutations folded into channel relabeling, off-block slices zero.
ConvLayer masked_dense_equivalent(const GroupedLayer& layer);

/// Gradient / momentum buffers, one entry per parameter tensor in the
/// order conv0.w, conv0.b, ..., fc.w, fc.b.
struct Gradients {
  std::vector<std::vector<double>> conv_w;
  std::vector<std::vector<double>> conv_b;
  std::vector<double> fc_w, fc_b;

  static Gradients like_dense(const MicroNet& net);
  static Gradients like_grouped(const CompressedNet& net);
  void zero();
};

struct BatchResult {
  double loss_sum = 0.0;  // summed over the batch
  int correct = 0;
};

/// Reusable buffers for batched forward/backward passes. Feature maps are
/// stored channel-major with sample-strided columns: buffer[c][s*N + n].
struct StageDims {
  std::vector<int> c, h, w, n;  // per stage 0..L (input first)
};

struct DenseWork {
  DenseWork(const MicroNet& net, int max_batch);
  int max_batch = 0;
  StageDims dims;
  std::vector<std::vector<double>> act;   // act[0] = input; act[l+1] = relu(conv_l)
  std::vector<std::vector<double>> col;   // im2col buffers per conv
  std::vector<std::vector<double>> colT;  // col transposed, for weight grads
  std::vector<std::vector<double>> dact;
  std::vector<std::vector<double>> dcol;
  std::vector<double> pooled, logits_buf, dpooled, dlogits;
};

struct GroupedWork {
  GroupedWork(const CompressedNet& net, int max_batch);
  int max_batch = 0;
  StageDims dims;
  std::vector<std::vector<double>> act;       // scattered (original order)
  std::vector<std::vector<double>> gathered;  // permuted input per layer
  std::vector<std::vector<double>> out_perm;  // permuted output per layer
  std::vector<std::vector<double>> col;
  std::vector<std::vector<double>> colT;
  std::vector<std::vector<double>> dact;
  std::vector<std::vector<double>> dgathered;
  std::vector<std::vector<double>> dout_perm;
  std::vector<std::vector<double>> dcol;
  std::vector<double> pooled, logits_buf, dpooled, dlogits;
};

BatchResult dense_forward(const MicroNet& net, const double* const* images,
                          const int* labels, int batch, DenseWork& work);
BatchResult dense_backward(const MicroNet& net, const double* const* images,
                           const int* labels, int batch, DenseWork& work,
                           Gradients& grads);
BatchResult grouped_forward(const CompressedNet& net,
                            const double* const* images, const int* labels,
                            int batch, GroupedWork& work);
BatchResult grouped_backward(const CompressedNet& net,
                             const double* const* images, const int* labels,
                             int batch, GroupedWork& work, Gradients& grads);

/// Exact mean cross-entropy gradients for all parameters of the net on one
/// batch. Convenience wrapper over dense_backward for tests and callers
/// that do not manage workspaces.
BatchResult backward(const MicroNet& net, const double* const* images,
                     const int* labels, int batch, Gradients& grads);

/// Single-image logits. For compressed nets, fused=true composes each
/// scatter with the next gather into one index op; the computed function
/// is identical.
std::vector<double> logits(const MicroNet& net, const double* image);
std::vector<double> logits(const CompressedNet& net, const double* image,
                           bool fused = false);

struct SgdOptions {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int batch_size = 32;
};

/// Per-layer structured regularization inputs for one epoch. Empty reg
/// (or lambda == 0) falls back to plain SGD with bit-identical updates.
struct RegPenalty {
  double lambda = 0.0;
  Norm norm = Norm::L1;
  std::vector<RegMatrix> reg;       // one per conv layer
  std::vector<Permutation> p_out;   // one per conv layer
  std::vector<Permutation> q_in;
};

struct EpochStats {
  double mean_loss = 0.0;
  double accuracy = 0.0;
};

/// One seeded pass over the shuffled training split. Parameter updates use
/// data gradients plus lambda * structured subgradient (plus weight decay
/// when configured). Deterministic given (net, dataset, options, seed).
EpochStats train_epoch(MicroNet& net, const SynthDataset& data,
                       const SgdOptions& sgd, const RegPenalty& reg,
                       std::uint64_t epoch_seed, Gradients& velocity,
                       DenseWork& work);

EpochStats train_epoch_grouped(CompressedNet& net, const SynthDataset& data,
                               const SgdOptions& sgd, std::uint64_t epoch_seed,
                               Gradients& velocity, GroupedWork& work);

enum class Split { Train, Test };

double evaluate(const MicroNet& net, const SynthDataset& data, Split split);
double evaluate(const CompressedNet& net, const SynthDataset& data, Split split);

}  // namespace sparsegroup
