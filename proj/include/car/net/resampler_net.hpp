#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <vector>

#include "car/net/layers.hpp"
#include "car/resampler.hpp"

namespace car {

struct ResamplerNetConfig {
  std::size_t scale = 2;       // power of two
  std::size_t base = 32;       // channels after the first conv
  std::size_t cap = 64;        // channel ceiling while doubling
  std::size_t blocks = 3;      // residual blocks
  std::size_t head_channels = 64;
  std::size_t m = 6;
  std::size_t n = 6;
  double offset_cap = 3.0;     // LR pixels, enforced by the tanh squash
  bool enable_offsets = true;
  double slope = 0.2;
};

/// Per-batch kernel logits and squashed offsets at LR resolution.
/// raw_kernels: {N, m*n, H/s, W/s}; dx, dy: {N, m*n, H/s, W/s}, LR units.
struct ResamplerNetOut {
  Tensor raw_kernels;
  Tensor dx;
  Tensor dy;
};

/// Predicts per-LR-pixel resampling kernels and sampling offsets from the
/// mean-subtracted HR image. Trunk: log2(scale) stride-2 conv + leaky-ReLU
/// stages (a single stride-1 stage at scale 1), then residual blocks, then a
/// kernel head and an offset head (3x3 conv + leaky-ReLU, 1x1 conv out).
class ResamplerNet {
 public:
  explicit ResamplerNet(const ResamplerNetConfig& cfg);

  /// Kaiming fan-in init; the offset head's final layer starts at zero so
  /// training begins in the no-offset regime.
  void init(std::mt19937_64& rng);

  ResamplerNetOut forward(const Tensor& x);

  /// Pullback through both heads and the trunk; returns d(loss)/d(input).
  Tensor backward(const Tensor& grad_raw_kernels, const Tensor& grad_dx, const Tensor& grad_dy);

  std::vector<NamedParam> params();
  void zero_grad();

  const ResamplerNetConfig& config() const { return cfg_; }

  /// Splits one batch item of net output into resampler fields
  /// ({H_lr, W_lr, m, n} tensors).
  static Tensor field_from_nchw(const Tensor& t, std::size_t batch_index, std::size_t m,
                                std::size_t n);
  /// Inverse layout move for gradients.
  static void field_grad_to_nchw(const Tensor& field_grad, std::size_t batch_index, Tensor& out);

 private:
  ResamplerNetConfig cfg_;
  std::vector<Conv2d> down_;
  std::vector<LeakyReLU> down_act_;
  std::vector<ResidualBlock> blocks_;
  Conv2d khead_conv_;
  LeakyReLU khead_act_;
  Conv2d khead_out_;
  Conv2d ohead_conv_;
  LeakyReLU ohead_act_;
  Conv2d ohead_out_;
  Tensor osquash_in_;  // cached raw offsets for the tanh pullback
  bool has_cache_ = false;
};

}  // namespace car
