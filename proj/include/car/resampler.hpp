#pragma once

#include <array>
#include <cstddef>
#include <utility>
#include <vector>

#include "car/image.hpp"

namespace car {

/// Geometry of the content-adaptive downscaler: integer scale factor, kernel
/// extents (m rows, n cols) and the HR length of one LR offset unit.
struct ResampleGeometry {
  std::size_t scale = 2;
  std::size_t m = 6;
  std::size_t n = 6;
  double offset_unit = 2.0;

  /// Default geometry for a scale factor: m = n = 3*scale, offset_unit = scale.
  static ResampleGeometry defaults(std::size_t scale);

  void validate() const;
};

/// Per-LR-pixel resampling kernels, shape {H_lr, W_lr, m, n}. Each kernel's
/// elements sum to 1 after normalization.
struct KernelField {
  Tensor k;
};

/// Per-LR-pixel, per-tap offsets in LR-pixel units; dx moves along rows
/// (vertical), dy along columns (horizontal). Shapes {H_lr, W_lr, m, n}.
struct OffsetField {
  Tensor dx;
  Tensor dy;
};

/// Maps LR pixel center (x, y) = (row, col) to HR coordinates:
/// (u, v) = ((x + 0.5) * scale - 0.5, (y + 0.5) * scale - 0.5).
inline std::pair<double, double> project(std::size_t x, std::size_t y, double scale) {
  return {(static_cast<double>(x) + 0.5) * scale - 0.5,
          (static_cast<double>(y) + 0.5) * scale - 0.5};
}

/// One bilinear sample with its exact analytic partials. u is the row
/// coordinate, v the column coordinate; out-of-range corners clamp to the edge
/// pixel, which makes the partial along a fully clamped direction zero.
struct BilinearSample {
  std::array<double, 3> value{};
  std::array<double, 3> du{};
  std::array<double, 3> dv{};
  std::size_t channels = 0;
};

BilinearSample bilinear_sample(const Image& img, double u, double v);

/// Everything downscale_backward needs: sampled values and bilinear partials
/// per LR pixel, kernel tap and channel, plus the kernels that weighted them.
struct SampleTape {
  ResampleGeometry geom;
  std::size_t lr_h = 0;
  std::size_t lr_w = 0;
  std::size_t channels = 0;
  Tensor kernels;
  std::vector<double> value;
  std::vector<double> du;
  std::vector<double> dv;
  bool consumed = true;

  std::size_t tap_index(std::size_t x, std::size_t y, std::size_t i, std::size_t j) const {
    return (((x * lr_w + y) * geom.m + i) * geom.n + j) * channels;
  }
};

struct DownscaleResult {
  Image lr;
  SampleTape tape;
};

/// Content-adaptive downscale: for LR pixel (x, y) and tap (i, j), samples the
/// HR image at (u + i - m/2 + offset_unit * dx, v + j - n/2 + offset_unit * dy)
/// and accumulates kernel-weighted samples per channel. HR extents must be
/// divisible by the scale. With record_tape off the tape is unusable (export path).
DownscaleResult downscale_forward(const Image& hr, const KernelField& kernels,
                                  const OffsetField& offsets, const ResampleGeometry& geom,
                                  bool record_tape = true);

struct DownscaleGrads {
  Tensor k;
  Tensor dx;
  Tensor dy;
};

/// Pullback of downscale_forward. Consumes the tape; a second call on the same
/// tape or a mismatched gradient shape is an error.
DownscaleGrads downscale_backward(const Tensor& grad_lr, SampleTape& tape);

enum class KernelNorm { Softmax, SumEpsilon };

/// Normalized kernels plus the matching pullback.
class NormalizedKernels {
 public:
  const KernelField& field() const { return field_; }
  KernelField& field() { return field_; }

  /// Maps d(loss)/d(K) to d(loss)/d(raw logits).
  Tensor backward(const Tensor& grad_k) const;

 private:
  friend NormalizedKernels normalize_kernels(const Tensor& raw, KernelNorm mode);
  KernelField field_;
  KernelNorm mode_ = KernelNorm::Softmax;
  Tensor inv_denom_;  // SumEpsilon only: 1 / (sum + eps) per LR pixel
};

/// Normalizes raw per-pixel kernels to sum 1: softmax over the m*n taps
/// (default) or plain sum normalization guarded by a small epsilon.
NormalizedKernels normalize_kernels(const Tensor& raw, KernelNorm mode = KernelNorm::Softmax);

}  // namespace car
