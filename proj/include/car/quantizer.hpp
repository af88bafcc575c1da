#pragma once

#include "car/image.hpp"

namespace car {

/// Differentiable byte quantization. Forward is the hard export rounding;
/// backward uses the derivative of the soft rounding surrogate
/// round_soft(x) = x - alpha * sin(2*pi*x) / (2*pi) evaluated at the
/// pre-rounding byte-domain value.
struct QuantizerConfig {
  double alpha = 0.5;
  bool enabled = true;  // train-time disable switch; when off the op is the identity
};

/// v -> round(clamp(v, 0, 1) * 255) / 255, halves away from zero.
Image quantize_forward(const Image& lr, const QuantizerConfig& cfg = {});

/// Training-path variant that also emits the pre-rounding tensor in [0, 255].
struct QuantizeResult {
  Image out;
  Tensor pre;
};
QuantizeResult quantize_with_tape(const Image& lr, const QuantizerConfig& cfg = {});

/// grad_in = grad_out * (1 - alpha * cos(2*pi*x)) at x = pre-rounding value.
/// The [0,1] <-> [0,255] rescalings cancel exactly.
Tensor quantize_backward(const Tensor& grad_out, const Tensor& pre, const QuantizerConfig& cfg = {});

/// The soft rounding surrogate itself; exercised by tests and gradient checks.
double soft_round(double x, double alpha);

/// d(soft_round)/dx = 1 - alpha * cos(2*pi*x).
double soft_round_factor(double x, double alpha);

}  // namespace car
