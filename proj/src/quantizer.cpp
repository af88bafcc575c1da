#include "car/quantizer.hpp"

#include <cmath>
#include <numbers>

namespace car {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace

Image quantize_forward(const Image& lr, const QuantizerConfig& cfg) {
  if (!cfg.enabled) return lr;
  Image out = lr;
  Tensor& t = out.tensor();
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::round(clamp01(t[i]) * 255.0) / 255.0;
  return out;
}

QuantizeResult quantize_with_tape(const Image& lr, const QuantizerConfig& cfg) {
  QuantizeResult r{lr, Tensor::zeros(lr.tensor().shape())};
  Tensor& t = r.out.tensor();
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double pre = clamp01(t[i]) * 255.0;
    r.pre[i] = pre;
    if (cfg.enabled) t[i] = std::round(pre) / 255.0;
  }
  return r;
}

Tensor quantize_backward(const Tensor& grad_out, const Tensor& pre, const QuantizerConfig& cfg) {
  if (!cfg.enabled) return grad_out;
  check(grad_out.same_shape(pre), "quantize_backward: gradient and tape shapes differ");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= soft_round_factor(pre[i], cfg.alpha);
  return g;
}

double soft_round(double x, double alpha) { return x - alpha * std::sin(kTwoPi * x) / kTwoPi; }

double soft_round_factor(double x, double alpha) { return 1.0 - alpha * std::cos(kTwoPi * x); }

}  // namespace car
