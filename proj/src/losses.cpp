#include "car/losses.hpp"

#include <cmath>

namespace car {

namespace {

double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

constexpr double kNormDelta = 1e-8;  // smoothing of the norm gradient at the origin

}  // namespace

L1Loss l1_loss(const Image& sr, const Image& hr) {
  check(sr.tensor().same_shape(hr.tensor()), "l1_loss: image shapes differ");
  const Tensor& a = sr.tensor();
  const Tensor& b = hr.tensor();
  const std::size_t n = a.size();
  check(n > 0, "l1_loss: empty images");

  L1Loss out;
  out.grad = Tensor::zeros(a.shape());
  double sum = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    sum += std::abs(d);
    out.grad[i] = sgn(d) * inv_n;
  }
  out.value = sum * inv_n;
  return out;
}

OffsetRegResult offset_reg(const OffsetField& offsets, const ResampleGeometry& geom,
                           const OffsetRegConfig& cfg) {
  const Tensor& dx = offsets.dx;
  const Tensor& dy = offsets.dy;
  check(dx.rank() == 4 && dx.same_shape(dy), "offset_reg: offset field shapes differ");
  check(dx.extent(2) == geom.m && dx.extent(3) == geom.n,
        "offset_reg: field does not match geometry");
  const std::size_t pixels = dx.extent(0) * dx.extent(1);
  const std::size_t m = geom.m, n = geom.n;
  check(pixels > 0, "offset_reg: empty field");

  const double half_m = static_cast<double>(m) / 2.0;
  const double half_n = static_cast<double>(n) / 2.0;
  const double w_denom = std::sqrt(half_m * half_m + half_n * half_n);
  std::vector<double> w(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double di = static_cast<double>(i) - half_m;
      const double dj = static_cast<double>(j) - half_n;
      w[i * n + j] = std::sqrt(di * di + dj * dj) / w_denom;
    }

  const double smooth = cfg.mode == EtaMode::InsideSqrt ? cfg.eta : 0.0;
  const double inv_p = 1.0 / static_cast<double>(pixels);

  OffsetRegResult out;
  out.grad_dx = Tensor::zeros(dx.shape());
  out.grad_dy = Tensor::zeros(dy.shape());
  double total = 0.0;
  const std::size_t taps = m * n;
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t t = 0; t < taps; ++t) {
      const std::size_t idx = p * taps + t;
      const double ox = dx[idx];
      const double oy = dy[idx];
      const double r2 = ox * ox + oy * oy;
      if (cfg.mode == EtaMode::Additive) {
        total += cfg.eta + std::sqrt(r2) * w[t];
      } else {
        total += std::sqrt(r2 + smooth) * w[t];
      }
      const double root = std::sqrt(r2 + smooth + kNormDelta * kNormDelta);
      const double scale = w[t] * inv_p / root;
      out.grad_dx[idx] = ox * scale;
      out.grad_dy[idx] = oy * scale;
    }
  }
  out.value = total * inv_p;
  return out;
}

PartialTvResult partial_tv(const OffsetField& offsets, const KernelField& kernels) {
  const Tensor& dx = offsets.dx;
  const Tensor& dy = offsets.dy;
  const Tensor& k = kernels.k;
  check(dx.rank() == 4 && dx.same_shape(dy) && dx.same_shape(k),
        "partial_tv: field shapes differ");
  const std::size_t h = dx.extent(0), w = dx.extent(1);
  const std::size_t m = dx.extent(2), n = dx.extent(3);

  PartialTvResult out;
  out.grad_dx = Tensor::zeros(dx.shape());
  out.grad_dy = Tensor::zeros(dy.shape());
  out.grad_k = Tensor::zeros(k.shape());

  for (std::size_t x = 0; x < h; ++x) {
    for (std::size_t y = 0; y < w; ++y) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double kw = k.at(x, y, i, j);
          if (y + 1 < w) {
            const double d = dx.at(x, y + 1, i, j) - dx.at(x, y, i, j);
            out.value += std::abs(d) * kw;
            const double s = sgn(d) * kw;
            out.grad_dx.at(x, y + 1, i, j) += s;
            out.grad_dx.at(x, y, i, j) -= s;
            out.grad_k.at(x, y, i, j) += std::abs(d);
          }
          if (x + 1 < h) {
            const double d = dy.at(x + 1, y, i, j) - dy.at(x, y, i, j);
            out.value += std::abs(d) * kw;
            const double s = sgn(d) * kw;
            out.grad_dy.at(x + 1, y, i, j) += s;
            out.grad_dy.at(x, y, i, j) -= s;
            out.grad_k.at(x, y, i, j) += std::abs(d);
          }
        }
      }
    }
  }
  return out;
}

}  // namespace car
