#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "car/image.hpp"
#include "car/tensor.hpp"

namespace car {

/// Handle to one learnable tensor and its gradient accumulator.
struct NamedParam {
  std::string name;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;
};

/// 2D cross-correlation on NCHW tensors with symmetric zero padding
/// ksize/2, stride 1 (same extents) or 2 (ceil-halved extents). Backward is
/// the exact adjoint plus weight/bias gradient accumulation.
class Conv2d {
 public:
  Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t ksize, std::size_t stride,
         bool has_bias = true);

  /// Kaiming fan-in normal init for weights, zero biases.
  void init_kaiming(std::mt19937_64& rng);
  void init_zero();

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);

  void collect_params(const std::string& prefix, std::vector<NamedParam>& out);

  std::size_t in_channels() const { return in_ch_; }
  std::size_t out_channels() const { return out_ch_; }

  Tensor w;  // {out_ch, in_ch, k, k}
  Tensor b;  // {out_ch}
  Tensor gw;
  Tensor gb;

 private:
  std::size_t in_ch_, out_ch_, ksize_, stride_, pad_;
  bool has_bias_;
  Tensor x_;  // cached forward input
  bool has_cache_ = false;
  std::vector<double> cols_;  // im2col scratch
};

class LeakyReLU {
 public:
  explicit LeakyReLU(double slope = 0.2) : slope_(slope) {}

  Tensor forward(const Tensor& x);
  /// Multiplies by 1 for x >= 0 (subgradient 1 at zero) and slope otherwise.
  Tensor backward(const Tensor& gy);

  double slope() const { return slope_; }

 private:
  double slope_;
  Tensor x_;
  bool has_cache_ = false;
};

/// x + conv(act(conv(x))), both convs 3x3 stride 1 at constant width.
class ResidualBlock {
 public:
  ResidualBlock(std::size_t channels, double slope = 0.2);

  void init_kaiming(std::mt19937_64& rng);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void collect_params(const std::string& prefix, std::vector<NamedParam>& out);

  Conv2d conv1;
  Conv2d conv2;

 private:
  LeakyReLU act_;
};

/// Depth-to-space: {N, r*r*C, H, W} -> {N, C, r*H, r*W} with the r x r block
/// filled row-major from the channel index (c*r*r + dr*r + dc).
class PixelShuffle {
 public:
  explicit PixelShuffle(std::size_t r) : r_(r) {}

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);

  std::size_t factor() const { return r_; }

 private:
  std::size_t r_;
  std::vector<std::size_t> in_shape_;
  bool has_cache_ = false;
};

/// Layout conversions between images (H x W x C) and net activations (NCHW).
Tensor hwc_to_nchw(const Image& img);
Image nchw_to_hwc(const Tensor& t, std::size_t batch_index, ColorSpace space);

}  // namespace car
