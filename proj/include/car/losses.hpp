#pragma once

#include "car/image.hpp"
#include "car/resampler.hpp"

namespace car {

/// Mean absolute error over pixels * channels with its gradient w.r.t. the
/// reconstruction; sign(0) = 0.
struct L1Loss {
  double value = 0.0;
  Tensor grad;  // d(value)/d(sr), shape of sr
};
L1Loss l1_loss(const Image& sr, const Image& hr);

/// Placement of eta in the offset regularizer: added per tap (as printed) or
/// inside the square root as a smoothing constant.
enum class EtaMode { Additive, InsideSqrt };

struct OffsetRegConfig {
  double eta = 1.0;
  EtaMode mode = EtaMode::Additive;
};

/// Offset travel penalty, mean over LR pixels of
///   sum_ij [ eta + sqrt(dx^2 + dy^2) * w(i, j) ]       (Additive)
///   sum_ij [ sqrt(dx^2 + dy^2 + eta) * w(i, j) ]       (InsideSqrt)
/// with w(i, j) = sqrt((i - m/2)^2 + (j - n/2)^2) / sqrt((m/2)^2 + (n/2)^2).
/// Gradients smooth the norm with delta = 1e-8 so the origin is a true zero.
struct OffsetRegResult {
  double value = 0.0;
  Tensor grad_dx;
  Tensor grad_dy;
};
OffsetRegResult offset_reg(const OffsetField& offsets, const ResampleGeometry& geom,
                           const OffsetRegConfig& cfg = {});

/// Partial total variation of the offset fields, kernel-weighted by the
/// left/upper element of each forward-differenced pair: vertical offsets (dx)
/// are differenced horizontally and horizontal offsets (dy) vertically.
struct PartialTvResult {
  double value = 0.0;
  Tensor grad_dx;
  Tensor grad_dy;
  Tensor grad_k;
};
PartialTvResult partial_tv(const OffsetField& offsets, const KernelField& kernels);

struct LossWeights {
  double lambda = 1.0;
  double gamma = 1.0;
};

inline double total_objective(double l1, double reg, double tv, const LossWeights& w) {
  return l1 + w.lambda * reg + w.gamma * tv;
}

}  // namespace car
