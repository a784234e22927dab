#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "repmlp/reparam.hpp"

namespace repmlp {

// Malformed, truncated or incomplete checkpoint data.
struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class CheckpointKind : uint8_t { train = 0, infer = 1 };

struct NamedTensor {
  std::string name;
  std::vector<int64_t> dims;
  std::vector<float> data;
};

/// Binary layout (all integers little-endian):
///   "REPMLPCK" | u8 version | u8 kind
///   config: i64 C O H W h w g gp_dim | u8 activation | f64 eps | u8 nK | i64 K...
///   u32 tensor count, then per tensor:
///   u16 name length | name bytes | u8 rank | u32 dims... | f32 payload
struct Checkpoint {
  static constexpr uint8_t version = 1;

  CheckpointKind kind = CheckpointKind::train;
  RepMLPConfig config;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

Checkpoint make_checkpoint(const RepMLPConfig& cfg, const RepMLPTrainWeights<float>& w);
Checkpoint make_checkpoint(const RepMLPConfig& cfg, const RepMLPInferWeights<float>& w);

// Rebuild weights; a missing or mis-shaped tensor raises CheckpointError naming it.
RepMLPTrainWeights<float> train_weights(const Checkpoint& ck);
RepMLPInferWeights<float> infer_weights(const Checkpoint& ck);

// Train checkpoint -> infer checkpoint. Converting an infer checkpoint is an error.
Checkpoint convert_checkpoint(const Checkpoint& ck);

std::vector<uint8_t> serialize(const Checkpoint& ck);
Checkpoint deserialize(const std::vector<uint8_t>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace repmlp
