#pragma once

#include <cstddef>
#include <string>

#include <json.hpp>

#include "car/checkpoint.hpp"
#include "car/image.hpp"

namespace car {

/// PSNR in dB over byte-quantized values ([0,1] doubles are clamped, scaled to
/// [0,255] and rounded first). `border` rows/cols are cropped on every side.
/// Identical inputs give +inf.
double psnr(const Image& a, const Image& b, std::size_t border = 0);

/// Mean SSIM on the byte-quantized luma plane: 11x11 Gaussian window
/// (sigma 1.5), K1 = 0.01, K2 = 0.03, L = 255, valid region only. Inputs must
/// be at least 11x11.
double ssim_y(const Image& a, const Image& b);

struct MetricReport {
  std::string name;
  double psnr_y = 0.0;
  double ssim_y = 0.0;
  double psnr_rgb = 0.0;
  std::size_t border = 0;
};

/// Full-loop evaluation of one HR image through a checkpoint: downscale with
/// quantization, upscale, then PSNR-Y/SSIM-Y with border = scale and PSNR-RGB
/// with no border. HR extents must be divisible by the scale.
MetricReport evaluate_pair(const Image& hr, const Checkpoint& ckpt,
                           const std::string& upscaler_override = "");

/// Infinities serialize as the strings "inf"/"-inf" so the output stays plain JSON.
nlohmann::json metric_report_to_json(const MetricReport& r);

}  // namespace car
