#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "car/resampler.hpp"

namespace car {

/// Sizes and switches needed to rebuild the nets a checkpoint describes.
struct NetTopology {
  std::size_t base = 32;
  std::size_t cap = 64;
  std::size_t blocks = 3;
  std::size_t head_channels = 64;
  std::string upscaler = "bicubic";  // "bicubic" | "learned"
  std::size_t sr_features = 32;
  std::size_t sr_blocks = 3;
  double offset_cap = 3.0;
  bool enable_offsets = true;
  std::string kernel_norm = "softmax";  // "softmax" | "sum"
};

struct TrainerState {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  std::uint64_t adam_t = 0;  // accepted optimizer steps; lags `step` after rejected updates
  double lr = 1e-4;
  double best_val_psnr = -std::numeric_limits<double>::infinity();
  std::uint64_t epochs_since_improve = 0;
};

struct NamedTensor {
  std::string name;
  Tensor t;
};

/// On disk: magic "CARCKPT1", a little-endian u64 length prefix, a UTF-8 JSON
/// header (version, geometry, topology, rgb mean, config snapshot, trainer
/// state, tensor directory with name/shape/byte offset), then raw
/// little-endian float32 payloads in directory order.
struct Checkpoint {
  int version = 1;
  ResampleGeometry geom;
  NetTopology topology;
  std::array<double, 3> rgb_mean{};
  nlohmann::json config = nlohmann::json::object();
  TrainerState state;
  std::vector<NamedTensor> tensors;

  const Tensor* find(const std::string& name) const;
};

/// Writes to a temporary file and renames; a failed save leaves no partial file.
void save_checkpoint(const Checkpoint& c, const std::string& path);

/// Rejects bad magic, unsupported versions and truncated files with
/// descriptive errors.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace car
