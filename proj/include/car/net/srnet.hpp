#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "car/net/layers.hpp"

namespace car {

struct SRNetConfig {
  std::size_t scale = 2;
  std::size_t features = 32;
  std::size_t blocks = 3;
  double slope = 0.2;
};

/// Compact residual super-resolution head used as the learned upscaler:
/// conv -> residual blocks -> global skip -> bias-free conv to scale^2 * 3
/// channels -> pixel shuffle. All-zero weights map any input to zero.
class SRNet {
 public:
  explicit SRNet(const SRNetConfig& cfg);

  void init(std::mt19937_64& rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);

  std::vector<NamedParam> params();
  void zero_grad();

  const SRNetConfig& config() const { return cfg_; }

 private:
  SRNetConfig cfg_;
  Conv2d head_;
  std::vector<ResidualBlock> blocks_;
  Conv2d tail_;
  PixelShuffle shuffle_;
};

}  // namespace car
