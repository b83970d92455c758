#include <benchmark/benchmark.h>

#include <random>

#include "sparsegroup/micronet.hpp"

using namespace sparsegroup;

static void BM_DenseBatchForward(benchmark::State& state) {
  const int batch = int(state.range(0));
  const MicroNet net = make_micronet(0);
  const SynthDataset data = make_synth_dataset(0, 16, 2);
  DenseWork work(net, batch);
  std::vector<const double*> imgs(static_cast<std::size_t>(batch));
  std::vector<int> labels(static_cast<std::size_t>(batch));
  for (int s = 0; s < batch; ++s) {
    imgs[std::size_t(s)] = data.train_image(s % data.train_count());
    labels[std::size_t(s)] = data.train_labels[std::size_t(s % data.train_count())];
  }
  for (auto _ : state) {
    BatchResult r = dense_forward(net, imgs.data(), labels.data(), batch, work);
    benchmark::DoNotOptimize(r.loss_sum);
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_DenseBatchForward)->Arg(8)->Arg(32)->Arg(64);

static void BM_DenseBatchBackward(benchmark::State& state) {
  const int batch = int(state.range(0));
  const MicroNet net = make_micronet(0);
  const SynthDataset data = make_synth_dataset(0, 16, 2);
  DenseWork work(net, batch);
  Gradients grads = Gradients::like_dense(net);
  std::vector<const double*> imgs(static_cast<std::size_t>(batch));
  std::vector<int> labels(static_cast<std::size_t>(batch));
  for (int s = 0; s < batch; ++s) {
    imgs[std::size_t(s)] = data.train_image(s % data.train_count());
    labels[std::size_t(s)] = data.train_labels[std::size_t(s % data.train_count())];
  }
  for (auto _ : state) {
    BatchResult r =
        dense_backward(net, imgs.data(), labels.data(), batch, work, grads);
    benchmark::DoNotOptimize(r.loss_sum);
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_DenseBatchBackward)->Arg(8)->Arg(32)->Arg(64);

static void BM_MatmulNN(benchmark::State& state) {
  const int m = 32, k = 144, n = int(state.range(0));
  std::vector<double> a(std::size_t(m) * k), b(std::size_t(k) * n),
      c(std::size_t(m) * n);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& x : a) x = u(rng);
  for (double& x : b) x = u(rng);
  for (auto _ : state) {
    matmul_nn(a.data(), b.data(), c.data(), m, k, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2LL * m * k * n);
}
BENCHMARK(BM_MatmulNN)->Arg(512)->Arg(2048)->Arg(8192);

BENCHMARK_MAIN();
