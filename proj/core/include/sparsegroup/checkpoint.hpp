#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sparsegroup/compressor.hpp"
#include "sparsegroup/micronet.hpp"

namespace sparsegroup {

/// One tensor of the "SSZ1" container. dtype 0 (32-bit float) is the only
/// defined payload type.
struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t numel() const;
};

/// Bit-exact binary container: magic "SSZ1"; u32 LE tensor count; per
/// tensor u16 LE name length + UTF-8 name, u8 dtype (0 = f32), u8 ndim,
/// ndim x u32 LE dims, row-major little-endian payload.
struct Checkpoint {
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
  const NamedTensor& require(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Dense micronet <-> container. Tensor names: convK.weight (4-D),
/// convK.bias, fc.weight, fc.bias.
Checkpoint checkpoint_from_dense(const MicroNet& net);
MicroNet dense_from_checkpoint(const Checkpoint& ckpt);

/// Compressed net <-> container. Grouped weights are 5-D
/// (G, c_out/G, c_in/G, k, k); permutations live in the plan, not here.
Checkpoint checkpoint_from_compressed(const CompressedNet& net);
CompressedNet compressed_from_checkpoint(const Checkpoint& ckpt,
                                         const GroupingPlan& plan);

/// A checkpoint is compressed iff it holds 5-D conv weights.
bool checkpoint_is_compressed(const Checkpoint& ckpt);

/// Optional dataset dump for inspection (tensors data.train / data.test
/// plus label vectors).
Checkpoint checkpoint_from_dataset(const SynthDataset& data);

}  // namespace sparsegroup
