#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "car/checkpoint.hpp"
#include "car/image.hpp"

namespace car {

/// Configuration mistakes (unknown/missing keys, out-of-range values). The CLI
/// maps these to its config-error exit code.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t scale = 2;
  std::size_t patch = 0;  // HR patch edge; 0 means 48 * scale
  std::size_t batch = 16;
  std::size_t epochs = 10;

  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  std::size_t patience = 10;   // epochs without val improvement before decaying lr
  double lr_factor = 0.5;

  double lambda = 1.0;  // offset travel penalty weight
  double gamma = 1.0;   // partial TV weight
  double eta = 1.0;
  std::string eta_mode = "additive";  // "additive" | "inside-sqrt"
  double alpha = 0.5;                 // quantizer surrogate strength
  bool quantize = true;

  std::string upscaler = "bicubic";  // "bicubic" | "learned"
  std::uint64_t seed = 0;

  bool enable_offsets = true;
  double offset_cap = 3.0;
  std::string kernel_norm = "softmax";  // "softmax" | "sum"
  std::size_t kernel_span = 0;          // m = n; 0 means 3 * scale

  std::size_t net_base = 32;
  std::size_t net_cap = 64;
  std::size_t net_blocks = 3;
  std::size_t net_head = 64;
  std::size_t sr_features = 32;
  std::size_t sr_blocks = 3;
  std::size_t val_interval = 1;  // epochs between validation passes

  std::size_t effective_patch() const { return patch != 0 ? patch : 48 * scale; }
  std::size_t effective_span() const { return kernel_span != 0 ? kernel_span : 3 * scale; }

  void validate() const;  // throws ConfigError
  ResampleGeometry geometry() const;
  NetTopology topology() const;
};

/// Strict parse: the three required keys (scale, lambda, gamma) must be
/// present and unknown keys are rejected by name.
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Effective values (patch and kernel_span materialized).
nlohmann::json train_config_to_json(const TrainConfig& cfg);

struct Dataset {
  std::vector<Image> images;
  std::vector<std::string> names;
};

/// Loads every *.png in a directory (sorted by name, alpha stripped). All
/// images must be RGB; an empty directory is an error.
Dataset load_dataset_dir(const std::string& dir);

/// `batch` square patches sampled with replacement, each randomly flipped
/// along either axis. An image smaller than the patch is an error naming it.
std::vector<Image> sample_minibatch(const Dataset& ds, std::size_t patch, std::size_t batch,
                                    std::mt19937_64& rng);

struct TrainResult {
  Checkpoint best;  // highest validation PSNR (final state if never validated)
  Checkpoint last;  // end-of-run state, resumable
  bool diverged = false;
  // whether `best` beat the starting best_val_psnr; false when a resumed run
  // never improved, in which case the caller's earlier best still stands
  bool improved_best = false;
};

/// Called once per emitted log record (step and validation events).
using RecordHook = std::function<void(const nlohmann::json&)>;

/// Trains the downscaler (and the learned upscaler when configured) end to
/// end. Each step draws its own RNG from (seed, step), so resuming from
/// `resume` at an epoch boundary replays exactly the run that produced it.
/// A non-finite objective aborts and returns the best state seen so far.
TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set,
                  const Checkpoint* resume = nullptr, const RecordHook& hook = {});

}  // namespace car
