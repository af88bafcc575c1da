#include "car/resampler.hpp"

#include <algorithm>
#include <cmath>

namespace car {

namespace {

long clamp_index(long i, long extent) { return std::clamp(i, 0L, extent - 1); }

void check_field_shape(const Tensor& t, std::size_t h, std::size_t w,
                       const ResampleGeometry& geom, const char* what) {
  check(t.rank() == 4 && t.extent(0) == h && t.extent(1) == w && t.extent(2) == geom.m &&
            t.extent(3) == geom.n,
        std::string(what) + ": field shape does not match LR extents and geometry");
}

}  // namespace

ResampleGeometry ResampleGeometry::defaults(std::size_t scale) {
  ResampleGeometry g;
  g.scale = scale;
  g.m = 3 * scale;
  g.n = 3 * scale;
  g.offset_unit = static_cast<double>(scale);
  g.validate();
  return g;
}

void ResampleGeometry::validate() const {
  check(scale >= 1, "ResampleGeometry: scale must be >= 1");
  check(m >= 1 && n >= 1, "ResampleGeometry: kernel extents must be >= 1");
  check(offset_unit > 0.0 && std::isfinite(offset_unit),
        "ResampleGeometry: offset_unit must be positive and finite");
}

BilinearSample bilinear_sample(const Image& img, double u, double v) {
  const long h = static_cast<long>(img.height());
  const long w = static_cast<long>(img.width());
  BilinearSample s;
  s.channels = img.channels();

  const double fu = std::floor(u);
  const double fv = std::floor(v);
  const double a = u - fu;  // row fraction
  const double b = v - fv;  // column fraction
  const long r0 = clamp_index(static_cast<long>(fu), h);
  const long r1 = clamp_index(static_cast<long>(fu) + 1, h);
  const long c0 = clamp_index(static_cast<long>(fv), w);
  const long c1 = clamp_index(static_cast<long>(fv) + 1, w);

  const double w00 = (1.0 - a) * (1.0 - b);
  const double w01 = (1.0 - a) * b;
  const double w10 = a * (1.0 - b);
  const double w11 = a * b;

  for (std::size_t ch = 0; ch < s.channels; ++ch) {
    const double p00 = img.at(r0, c0, ch);
    const double p01 = img.at(r0, c1, ch);
    const double p10 = img.at(r1, c0, ch);
    const double p11 = img.at(r1, c1, ch);
    s.value[ch] = w00 * p00 + w01 * p01 + w10 * p10 + w11 * p11;
    // Exact partials of the clamped interpolant; both vanish when the clamped
    // corner rows (or columns) coincide.
    s.du[ch] = (1.0 - b) * (p10 - p00) + b * (p11 - p01);
    s.dv[ch] = (1.0 - a) * (p01 - p00) + a * (p11 - p10);
  }
  return s;
}

DownscaleResult downscale_forward(const Image& hr, const KernelField& kernels,
                                  const OffsetField& offsets, const ResampleGeometry& geom,
                                  bool record_tape) {
  geom.validate();
  const std::size_t s = geom.scale;
  check(hr.height() % s == 0 && hr.width() % s == 0,
        "downscale_forward: HR extents must be divisible by the scale");
  const std::size_t lr_h = hr.height() / s;
  const std::size_t lr_w = hr.width() / s;
  const std::size_t channels = hr.channels();
  check_field_shape(kernels.k, lr_h, lr_w, geom, "downscale_forward");
  check_field_shape(offsets.dx, lr_h, lr_w, geom, "downscale_forward");
  check_field_shape(offsets.dy, lr_h, lr_w, geom, "downscale_forward");

  DownscaleResult out{Image(Tensor::zeros({lr_h, lr_w, channels}), hr.space(), hr.range()), {}};
  SampleTape& tape = out.tape;
  tape.geom = geom;
  tape.lr_h = lr_h;
  tape.lr_w = lr_w;
  tape.channels = channels;
  if (record_tape) {
    tape.kernels = kernels.k;
    const std::size_t taps = lr_h * lr_w * geom.m * geom.n * channels;
    tape.value.assign(taps, 0.0);
    tape.du.assign(taps, 0.0);
    tape.dv.assign(taps, 0.0);
    tape.consumed = false;
  }

  const double half_m = static_cast<double>(geom.m) / 2.0;
  const double half_n = static_cast<double>(geom.n) / 2.0;

  for (std::size_t x = 0; x < lr_h; ++x) {
    for (std::size_t y = 0; y < lr_w; ++y) {
      const auto [u, v] = project(x, y, static_cast<double>(s));
      std::array<double, 3> acc{};
      for (std::size_t i = 0; i < geom.m; ++i) {
        for (std::size_t j = 0; j < geom.n; ++j) {
          const double kw = kernels.k.at(x, y, i, j);
          const double su =
              u + (static_cast<double>(i) - half_m) + geom.offset_unit * offsets.dx.at(x, y, i, j);
          const double sv =
              v + (static_cast<double>(j) - half_n) + geom.offset_unit * offsets.dy.at(x, y, i, j);
          const BilinearSample smp = bilinear_sample(hr, su, sv);
          for (std::size_t c = 0; c < channels; ++c) acc[c] += kw * smp.value[c];
          if (record_tape) {
            const std::size_t base = tape.tap_index(x, y, i, j);
            for (std::size_t c = 0; c < channels; ++c) {
              tape.value[base + c] = smp.value[c];
              tape.du[base + c] = smp.du[c];
              tape.dv[base + c] = smp.dv[c];
            }
          }
        }
      }
      for (std::size_t c = 0; c < channels; ++c) out.lr.at(x, y, c) = acc[c];
    }
  }
  return out;
}

DownscaleGrads downscale_backward(const Tensor& grad_lr, SampleTape& tape) {
  check(!tape.consumed, "downscale_backward: tape already consumed or never recorded");
  check(grad_lr.rank() == 3 && grad_lr.extent(0) == tape.lr_h && grad_lr.extent(1) == tape.lr_w &&
            grad_lr.extent(2) == tape.channels,
        "downscale_backward: gradient shape does not match the tape");

  const std::size_t m = tape.geom.m, n = tape.geom.n;
  DownscaleGrads g{Tensor::zeros({tape.lr_h, tape.lr_w, m, n}),
                   Tensor::zeros({tape.lr_h, tape.lr_w, m, n}),
                   Tensor::zeros({tape.lr_h, tape.lr_w, m, n})};

  for (std::size_t x = 0; x < tape.lr_h; ++x) {
    for (std::size_t y = 0; y < tape.lr_w; ++y) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t base = tape.tap_index(x, y, i, j);
          const double kw = tape.kernels.at(x, y, i, j);
          double gk = 0.0, gu = 0.0, gv = 0.0;
          for (std::size_t c = 0; c < tape.channels; ++c) {
            const double up = grad_lr.at(x, y, c);
            gk += up * tape.value[base + c];
            gu += up * tape.du[base + c];
            gv += up * tape.dv[base + c];
          }
          g.k.at(x, y, i, j) = gk;
          g.dx.at(x, y, i, j) = kw * gu * tape.geom.offset_unit;
          g.dy.at(x, y, i, j) = kw * gv * tape.geom.offset_unit;
        }
      }
    }
  }
  tape.consumed = true;
  return g;
}

NormalizedKernels normalize_kernels(const Tensor& raw, KernelNorm mode) {
  check(raw.rank() == 4, "normalize_kernels: expected a {H, W, m, n} tensor");
  const std::size_t h = raw.extent(0), w = raw.extent(1);
  const std::size_t taps = raw.extent(2) * raw.extent(3);
  check(taps > 0, "normalize_kernels: empty kernels");

  NormalizedKernels out;
  out.mode_ = mode;
  out.field_.k = raw;
  Tensor& k = out.field_.k;

  if (mode == KernelNorm::Softmax) {
    for (std::size_t p = 0; p < h * w; ++p) {
      double* kp = k.data() + p * taps;
      double mx = kp[0];
      for (std::size_t t = 1; t < taps; ++t) mx = std::max(mx, kp[t]);
      double sum = 0.0;
      for (std::size_t t = 0; t < taps; ++t) {
        kp[t] = std::exp(kp[t] - mx);
        sum += kp[t];
      }
      for (std::size_t t = 0; t < taps; ++t) kp[t] /= sum;
    }
  } else {
    constexpr double kEps = 1e-8;
    out.inv_denom_ = Tensor::zeros({h, w});
    for (std::size_t p = 0; p < h * w; ++p) {
      double* kp = k.data() + p * taps;
      double sum = 0.0;
      for (std::size_t t = 0; t < taps; ++t) sum += kp[t];
      const double denom = sum + (sum >= 0.0 ? kEps : -kEps);
      const double inv = 1.0 / denom;
      out.inv_denom_[p] = inv;
      for (std::size_t t = 0; t < taps; ++t) kp[t] *= inv;
    }
  }
  return out;
}

Tensor NormalizedKernels::backward(const Tensor& grad_k) const {
  const Tensor& k = field_.k;
  check(grad_k.same_shape(k), "NormalizedKernels::backward: gradient shape mismatch");
  const std::size_t pixels = k.extent(0) * k.extent(1);
  const std::size_t taps = k.extent(2) * k.extent(3);

  Tensor grad_raw = Tensor::zeros(k.shape());
  for (std::size_t p = 0; p < pixels; ++p) {
    const double* kp = k.data() + p * taps;
    const double* gp = grad_k.data() + p * taps;
    double* rp = grad_raw.data() + p * taps;
    double dot = 0.0;
    for (std::size_t t = 0; t < taps; ++t) dot += gp[t] * kp[t];
    if (mode_ == KernelNorm::Softmax) {
      for (std::size_t t = 0; t < taps; ++t) rp[t] = kp[t] * (gp[t] - dot);
    } else {
      const double inv = inv_denom_[p];
      for (std::size_t t = 0; t < taps; ++t) rp[t] = (gp[t] - dot) * inv;
    }
  }
  return grad_raw;
}

}  // namespace car
