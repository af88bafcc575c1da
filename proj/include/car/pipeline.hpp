#pragma once

#include <array>
#include <optional>
#include <string>

#include "car/checkpoint.hpp"
#include "car/net/resampler_net.hpp"
#include "car/net/srnet.hpp"

namespace car {

KernelNorm kernel_norm_from_string(const std::string& s);

/// Normalized kernels and offsets predicted for one image with a live net.
struct FieldPrediction {
  KernelField kernels;
  OffsetField offsets;
};
FieldPrediction predict_fields(ResamplerNet& net, const Image& hr,
                               const std::array<double, 3>& mean, const ResampleGeometry& geom,
                               KernelNorm norm);

/// The export downscale path shared by validation, evaluation and the CLI:
/// predict fields, resample, optionally byte-quantize.
Image net_downscale(ResamplerNet& net, const Image& hr, const std::array<double, 3>& mean,
                    const ResampleGeometry& geom, KernelNorm norm, bool quantize);

ResamplerNetConfig rnet_config_from(const Checkpoint& ckpt);
SRNetConfig srnet_config_from(const Checkpoint& ckpt);

/// Copies checkpoint tensors onto the given parameters by name; a missing or
/// mis-shaped tensor is an error.
void import_params(const std::vector<NamedParam>& params, const Checkpoint& ckpt);

/// Inference bundle rebuilt from a checkpoint. The upscaler override picks
/// "bicubic" or "learned" regardless of what the checkpoint trained with
/// (learned requires upscaler tensors in the checkpoint).
class Pipeline {
 public:
  explicit Pipeline(const Checkpoint& ckpt, const std::string& upscaler_override = "");

  Image downscale(const Image& hr, bool quantize = true);
  Image upscale(const Image& lr);
  FieldPrediction fields(const Image& hr);

  const ResampleGeometry& geom() const { return geom_; }
  std::size_t scale() const { return geom_.scale; }
  const std::string& upscaler() const { return upscaler_; }

 private:
  ResampleGeometry geom_;
  std::array<double, 3> mean_{};
  KernelNorm norm_;
  std::string upscaler_;
  ResamplerNet rnet_;
  std::optional<SRNet> srnet_;
};

/// Debug checkpoint: scale 1, 2x2 kernels whose softmax is (numerically) a
/// delta on the centered tap, zero offsets. Its whole pipeline is the
/// byte-level identity.
Checkpoint delta_checkpoint();

}  // namespace car
