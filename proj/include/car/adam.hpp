#pragma once

#include <cstdint>
#include <vector>

#include "car/net/layers.hpp"

namespace car {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
};

/// Bias-corrected Adam over a fixed parameter list. Arithmetic is 64-bit, but
/// parameters and moments are snapped to the nearest 32-bit float after every
/// update so checkpoints (which store 32-bit payloads) round-trip losslessly
/// and resumed training is bit-identical to uninterrupted training.
class Adam {
 public:
  Adam(std::vector<NamedParam> params, AdamConfig cfg);

  /// One update. If any gradient entry is non-finite the step is rejected:
  /// parameters, moments and the step counter are left untouched and false is
  /// returned.
  bool step();

  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::uint64_t t() const { return t_; }
  void set_t(std::uint64_t t) { t_ = t; }

  /// Moment tensors named "adam.m.<param>" / "adam.v.<param>" for checkpoints.
  std::vector<NamedParam> moments();

 private:
  std::vector<NamedParam> params_;
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace car
