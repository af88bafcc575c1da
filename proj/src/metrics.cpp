#include "car/metrics.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "car/color.hpp"
#include "car/common.hpp"
#include "car/pipeline.hpp"

namespace car {
namespace {

double to_byte(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0); }

// plane of byte-quantized luma values, {H, W}
Tensor byte_luma(const Image& img) {
  Image y = rgb_to_y(img);
  Tensor out({img.height(), img.width()});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = to_byte(y.tensor()[i]);
  return out;
}

// 1D Gaussian window, normalized to sum 1
std::vector<double> gaussian_window(std::size_t taps, double sigma) {
  std::vector<double> g(taps);
  const double c = (static_cast<double>(taps) - 1.0) / 2.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < taps; ++k) {
    const double d = static_cast<double>(k) - c;
    g[k] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += g[k];
  }
  for (double& w : g) w /= sum;
  return g;
}

// separable valid-region filtering: {H, W} -> {H - taps + 1, W - taps + 1}
Tensor filter_valid(const Tensor& plane, const std::vector<double>& g) {
  const std::size_t h = plane.extent(0), w = plane.extent(1), t = g.size();
  Tensor rows({h, w - t + 1});
  for (std::size_t x = 0; x < h; ++x)
    for (std::size_t y = 0; y + t <= w; ++y) {
      double acc = 0.0;
      for (std::size_t k = 0; k < t; ++k) acc += g[k] * plane.at(x, y + k);
      rows.at(x, y) = acc;
    }
  Tensor out({h - t + 1, w - t + 1});
  for (std::size_t x = 0; x + t <= h; ++x)
    for (std::size_t y = 0; y < rows.extent(1); ++y) {
      double acc = 0.0;
      for (std::size_t k = 0; k < t; ++k) acc += g[k] * rows.at(x + k, y);
      out.at(x, y) = acc;
    }
  return out;
}

}  // namespace

double psnr(const Image& a, const Image& b, std::size_t border) {
  check(a.tensor().same_shape(b.tensor()), "psnr inputs must have equal shapes");
  const std::size_t h = a.height(), w = a.width(), c = a.channels();
  check(h > 2 * border && w > 2 * border, "psnr border leaves no pixels");
  double se = 0.0;
  std::size_t count = 0;
  for (std::size_t x = border; x < h - border; ++x)
    for (std::size_t y = border; y < w - border; ++y)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double d = to_byte(a.at(x, y, ch)) - to_byte(b.at(x, y, ch));
        se += d * d;
        ++count;
      }
  const double mse = se / static_cast<double>(count);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double ssim_y(const Image& a, const Image& b) {
  check(a.tensor().same_shape(b.tensor()), "ssim inputs must have equal shapes");
  check(a.height() >= 11 && a.width() >= 11, "ssim inputs must be at least 11x11");
  const Tensor x = byte_luma(a), y = byte_luma(b);
  const std::vector<double> g = gaussian_window(11, 1.5);

  Tensor xx({x.extent(0), x.extent(1)}), yy(xx.shape()), xy(xx.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const Tensor mx = filter_valid(x, g), my = filter_valid(y, g);
  const Tensor mxx = filter_valid(xx, g), myy = filter_valid(yy, g), mxy = filter_valid(xy, g);

  const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  const double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = mxx[i] - mx[i] * mx[i];
    const double vy = myy[i] - my[i] * my[i];
    const double cov = mxy[i] - mx[i] * my[i];
    const double num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2);
    const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
    acc += num / den;
  }
  return acc / static_cast<double>(mx.size());
}

MetricReport evaluate_pair(const Image& hr, const Checkpoint& ckpt,
                           const std::string& upscaler_override) {
  Pipeline pipe(ckpt, upscaler_override);
  const std::size_t s = pipe.scale();
  check(hr.height() % s == 0 && hr.width() % s == 0,
        "HR extents must be divisible by the scale for evaluation");
  Image lr = pipe.downscale(hr, /*quantize=*/true);
  Image sr = pipe.upscale(lr);

  MetricReport r;
  r.border = s;
  r.psnr_rgb = psnr(sr, hr, s);
  const Image sr_y = rgb_to_y(sr), hr_y = rgb_to_y(hr);
  r.psnr_y = psnr(sr_y, hr_y, s);
  r.ssim_y = ssim_y(sr, hr);
  return r;
}

nlohmann::json metric_report_to_json(const MetricReport& r) {
  auto enc = [](double v) -> nlohmann::json {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    return v;
  };
  return {{"name", r.name},
          {"psnr_y", enc(r.psnr_y)},
          {"ssim_y", enc(r.ssim_y)},
          {"psnr_rgb", enc(r.psnr_rgb)},
          {"border", r.border}};
}

}  // namespace car
