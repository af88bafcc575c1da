#include "car/net/bicubic.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace car {

namespace {

struct Tap4 {
  std::size_t idx[4];
  double w[4];
};

std::vector<Tap4> upscale_taps(std::size_t in, std::size_t scale) {
  const std::size_t out = in * scale;
  std::vector<Tap4> taps(out);
  const long last = static_cast<long>(in) - 1;
  for (std::size_t x = 0; x < out; ++x) {
    const double src = (static_cast<double>(x) + 0.5) / static_cast<double>(scale) - 0.5;
    const double base = std::floor(src);
    const double t = src - base;
    for (int k = 0; k < 4; ++k) {
      const long p = static_cast<long>(base) - 1 + k;
      taps[x].idx[k] = static_cast<std::size_t>(std::clamp(p, 0L, last));
      taps[x].w[k] = cubic_kernel(t + 1.0 - static_cast<double>(k));
    }
  }
  return taps;
}

using SparseTaps = std::vector<std::vector<std::pair<std::size_t, double>>>;

SparseTaps downscale_taps(std::size_t in, std::size_t scale) {
  const std::size_t out = in / scale;
  const double s = static_cast<double>(scale);
  const long last = static_cast<long>(in) - 1;
  SparseTaps taps(out);
  for (std::size_t x = 0; x < out; ++x) {
    const double center = (static_cast<double>(x) + 0.5) * s - 0.5;
    const long lo = static_cast<long>(std::ceil(center - 2.0 * s));
    const long hi = static_cast<long>(std::floor(center + 2.0 * s));
    double sum = 0.0;
    for (long r = lo; r <= hi; ++r) {
      const double w = cubic_kernel((static_cast<double>(r) - center) / s);
      if (w == 0.0) continue;
      taps[x].push_back({static_cast<std::size_t>(std::clamp(r, 0L, last)), w});
      sum += w;
    }
    for (auto& [idx, w] : taps[x]) w /= sum;
  }
  return taps;
}

}  // namespace

double cubic_kernel(double x) {
  const double ax = std::abs(x);
  if (ax <= 1.0) return (1.5 * ax - 2.5) * ax * ax + 1.0;
  if (ax < 2.0) return ((-0.5 * ax + 2.5) * ax - 4.0) * ax + 2.0;
  return 0.0;
}

Image bicubic_upscale(const Image& lr, std::size_t scale) {
  check(scale >= 1, "bicubic_upscale: scale must be >= 1");
  const std::size_t h = lr.height(), w = lr.width(), cc = lr.channels();
  const auto row_taps = upscale_taps(h, scale);
  const auto col_taps = upscale_taps(w, scale);
  const std::size_t hh = h * scale, ww = w * scale;

  Tensor tmp({hh, w, cc});
  for (std::size_t r = 0; r < hh; ++r) {
    const Tap4& tp = row_taps[r];
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t ch = 0; ch < cc; ++ch) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += tp.w[k] * lr.at(tp.idx[k], c, ch);
        tmp.at(r, c, ch) = acc;
      }
  }

  Image out(Tensor::zeros({hh, ww, cc}), lr.space(), lr.range());
  for (std::size_t c = 0; c < ww; ++c) {
    const Tap4& tp = col_taps[c];
    for (std::size_t r = 0; r < hh; ++r)
      for (std::size_t ch = 0; ch < cc; ++ch) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += tp.w[k] * tmp.at(r, tp.idx[k], ch);
        out.at(r, c, ch) = acc;
      }
  }
  return out;
}

Tensor bicubic_upscale_backward(const Tensor& grad_hr, std::size_t lr_h, std::size_t lr_w,
                                std::size_t scale) {
  check(grad_hr.rank() == 3 && grad_hr.extent(0) == lr_h * scale &&
            grad_hr.extent(1) == lr_w * scale,
        "bicubic_upscale_backward: gradient extents do not match");
  const std::size_t cc = grad_hr.extent(2);
  const auto row_taps = upscale_taps(lr_h, scale);
  const auto col_taps = upscale_taps(lr_w, scale);
  const std::size_t hh = lr_h * scale, ww = lr_w * scale;

  // Adjoint of the column pass, then of the row pass.
  Tensor gtmp({hh, lr_w, cc});
  for (std::size_t c = 0; c < ww; ++c) {
    const Tap4& tp = col_taps[c];
    for (std::size_t r = 0; r < hh; ++r)
      for (std::size_t ch = 0; ch < cc; ++ch) {
        const double g = grad_hr.at(r, c, ch);
        for (int k = 0; k < 4; ++k) gtmp.at(r, tp.idx[k], ch) += tp.w[k] * g;
      }
  }

  Tensor glr({lr_h, lr_w, cc});
  for (std::size_t r = 0; r < hh; ++r) {
    const Tap4& tp = row_taps[r];
    for (std::size_t c = 0; c < lr_w; ++c)
      for (std::size_t ch = 0; ch < cc; ++ch) {
        const double g = gtmp.at(r, c, ch);
        for (int k = 0; k < 4; ++k) glr.at(tp.idx[k], c, ch) += tp.w[k] * g;
      }
  }
  return glr;
}

Image bicubic_downscale(const Image& hr, std::size_t scale) {
  check(scale >= 1, "bicubic_downscale: scale must be >= 1");
  check(hr.height() % scale == 0 && hr.width() % scale == 0,
        "bicubic_downscale: extents must be divisible by the scale");
  const std::size_t h = hr.height(), w = hr.width(), cc = hr.channels();
  const std::size_t oh = h / scale, ow = w / scale;
  const auto row_taps = downscale_taps(h, scale);
  const auto col_taps = downscale_taps(w, scale);

  Tensor tmp({oh, w, cc});
  for (std::size_t r = 0; r < oh; ++r)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t ch = 0; ch < cc; ++ch) {
        double acc = 0.0;
        for (const auto& [idx, wt] : row_taps[r]) acc += wt * hr.at(idx, c, ch);
        tmp.at(r, c, ch) = acc;
      }

  Image out(Tensor::zeros({oh, ow, cc}), hr.space(), hr.range());
  for (std::size_t r = 0; r < oh; ++r)
    for (std::size_t c = 0; c < ow; ++c)
      for (std::size_t ch = 0; ch < cc; ++ch) {
        double acc = 0.0;
        for (const auto& [idx, wt] : col_taps[c]) acc += wt * tmp.at(r, idx, ch);
        out.at(r, c, ch) = acc;
      }
  return out;
}

}  // namespace car
