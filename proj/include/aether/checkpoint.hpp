#pragma once

// AETH1 checkpoints (named float32 tensors) and the lossless float64
// training-state file used to resume pretraining.
//
// AETH1 layout, little-endian:
//   "AETH" | version u32 = 1 | tensor count u32
//   per tensor: name length u16 | UTF-8 name | rank u8 | dims u32 x rank | f32 payload

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "aether/nn.hpp"

namespace aether {

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

void write_checkpoint(const std::vector<NamedTensor>& tensors, const std::string& path);
std::vector<NamedTensor> read_checkpoint(const std::string& path);

struct CheckpointMeta {
  double r_b = 50.0;
  double r_a = 100.0;
};

/// Canonical tensors of `model` (float32) followed by a "meta_radii" tensor [r_b, r_a].
std::vector<NamedTensor> checkpoint_tensors(const nn::AlignmentModel& model, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  nn::AlignmentModel model;
  CheckpointMeta meta;
};

/// Rebuilds the model from canonical tensor names; throws FormatError when a
/// tensor is missing or shapes disagree.
LoadedCheckpoint model_from_checkpoint(const std::vector<NamedTensor>& tensors, const std::string& source);
LoadedCheckpoint load_model(const std::string& path);
void save_model(const nn::AlignmentModel& model, const CheckpointMeta& meta, const std::string& path);

}  // namespace aether
