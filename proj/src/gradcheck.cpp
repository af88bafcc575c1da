#include "car/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "car/losses.hpp"
#include "car/net/bicubic.hpp"
#include "car/net/layers.hpp"
#include "car/net/resampler_net.hpp"
#include "car/net/srnet.hpp"
#include "car/quantizer.hpp"
#include "car/resampler.hpp"

namespace car {
namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

struct Rng {
  std::mt19937_64 g;
  explicit Rng(std::uint64_t seed) : g(seed) {}
  double unif(double a, double b) { return std::uniform_real_distribution<double>(a, b)(g); }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(g);
  }
};

void fill_unif(Tensor& t, Rng& rng, double a, double b) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.unif(a, b);
}

Image random_image(Rng& rng, std::size_t h, std::size_t w, std::size_t c) {
  Image im = Image::zeros(h, w, c, c == 3 ? ColorSpace::RGB : ColorSpace::Y);
  fill_unif(im.tensor(), rng, 0.0, 1.0);
  return im;
}

double dot(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// Central difference against the analytic value. On disagreement the step
// shrinks before the error counts: a kink inside the stencil (leaky-ReLU
// origin, an |.| fold, a bilinear lattice line) resolves under a smaller step,
// while a wrong analytic gradient keeps failing at every step size. Five
// rounds reach h0/256, small enough to clear pre-activations that sit within
// a few 1e-6 of a fold while staying far above roundoff.
void check_coord(GradCheckResult& r, double tol, double h0, const std::function<double()>& loss,
                 double& slot, double analytic) {
  double err = 0.0;
  double h = h0;
  for (int round = 0; round < 5; ++round, h *= 0.25) {
    const double save = slot;
    slot = save + h;
    const double lp = loss();
    slot = save - h;
    const double lm = loss();
    slot = save;
    err = rel_err(analytic, (lp - lm) / (2.0 * h));
    if (err <= tol) break;
  }
  r.max_rel_err = std::max(r.max_rel_err, err);
  ++r.checks;
}

void finish(GradCheckResult& r, double tol) { r.pass = r.checks > 0 && r.max_rel_err <= tol; }

double lattice_margin(double pos) { return std::abs(pos - std::round(pos)); }

// redraws per-tap offsets until every sample position stays clear of the
// integer lattice, where the bilinear partials jump
void draw_safe_offsets(OffsetField& off, const ResampleGeometry& geom, Rng& rng, double margin) {
  const std::size_t lh = off.dx.extent(0), lw = off.dx.extent(1);
  for (std::size_t x = 0; x < lh; ++x)
    for (std::size_t y = 0; y < lw; ++y)
      for (std::size_t i = 0; i < geom.m; ++i)
        for (std::size_t j = 0; j < geom.n; ++j) {
          const auto [u, v] = project(x, y, static_cast<double>(geom.scale));
          const double iu = u + (static_cast<double>(i) - static_cast<double>(geom.m) / 2.0);
          const double jv = v + (static_cast<double>(j) - static_cast<double>(geom.n) / 2.0);
          double dx = 0.0, dy = 0.0;
          for (int tries = 0; tries < 200; ++tries) {
            dx = rng.unif(-1.3, 1.3);
            dy = rng.unif(-1.3, 1.3);
            if (lattice_margin(iu + geom.offset_unit * dx) >= margin &&
                lattice_margin(jv + geom.offset_unit * dy) >= margin)
              break;
          }
          off.dx.at(x, y, i, j) = dx;
          off.dy.at(x, y, i, j) = dy;
        }
}

// target with |sr - target| >= 0.05 everywhere, stepping toward the interior
Image margin_target(const Image& sr, Rng& rng) {
  Image hr = sr;
  for (std::size_t i = 0; i < hr.tensor().size(); ++i) {
    const double d = rng.unif(0.05, 0.3);
    hr.tensor()[i] += sr.tensor()[i] > 0.5 ? -d : d;
  }
  return hr;
}

GradCheckResult suite_downscale(const GradCheckOptions& opt) {
  GradCheckResult r{"downscale", 0.0, 0, false};
  for (std::size_t inst = 0; inst < opt.instances; ++inst) {
    Rng rng(mix(opt.seed, 100 + inst));
    ResampleGeometry geom;
    geom.scale = std::array<std::size_t, 3>{1, 2, 4}[inst % 3];
    geom.m = geom.n = (inst % 2 == 0) ? 2 : 3 * geom.scale;
    geom.offset_unit = static_cast<double>(geom.scale);
    const std::size_t lr_max = std::max<std::size_t>(1, opt.max_size / geom.scale);
    const std::size_t lh = 1 + rng.index(lr_max), lw = 1 + rng.index(lr_max);
    const std::size_t c = (inst % 5 == 0) ? 1 : 3;
    Image hr = random_image(rng, lh * geom.scale, lw * geom.scale, c);

    KernelField k{Tensor({lh, lw, geom.m, geom.n})};
    fill_unif(k.k, rng, 0.1, 1.0);
    OffsetField off{Tensor({lh, lw, geom.m, geom.n}), Tensor({lh, lw, geom.m, geom.n})};
    draw_safe_offsets(off, geom, rng, 1e-3);
    Tensor cot({lh, lw, c});
    fill_unif(cot, rng, -1.0, 1.0);

    DownscaleResult fwd = downscale_forward(hr, k, off, geom, /*record_tape=*/true);
    DownscaleGrads g = downscale_backward(cot, fwd.tape);
    if (opt.corrupt)
      for (std::size_t i = 0; i < g.k.size(); ++i) g.k[i] = g.k[i] * 1.02 + 1e-3;

    auto loss = [&]() {
      return dot(downscale_forward(hr, k, off, geom, /*record_tape=*/false).lr.tensor(), cot);
    };
    const std::size_t coords = std::min<std::size_t>(8, k.k.size());
    for (std::size_t q = 0; q < coords; ++q) {
      const std::size_t i = rng.index(k.k.size());
      check_coord(r, opt.tol, opt.fd_step, loss, k.k[i], g.k[i]);
      const std::size_t j = rng.index(off.dx.size());
      check_coord(r, opt.tol, opt.fd_step, loss, off.dx[j], g.dx[j]);
      const std::size_t l = rng.index(off.dy.size());
      check_coord(r, opt.tol, opt.fd_step, loss, off.dy[l], g.dy[l]);
    }
  }
  finish(r, opt.tol);
  return r;
}

GradCheckResult suite_normalize(const GradCheckOptions& opt, KernelNorm mode) {
  GradCheckResult r{mode == KernelNorm::Softmax ? "normalize-softmax" : "normalize-sum", 0.0, 0,
                    false};
  for (std::size_t inst = 0; inst < opt.instances; ++inst) {
    Rng rng(mix(opt.seed, 200 + inst));
    const std::size_t lh = 1 + rng.index(3), lw = 1 + rng.index(3);
    const std::size_t m = 2 + rng.index(2), n = 2 + rng.index(2);
    Tensor raw({lh, lw, m, n});
    if (mode == KernelNorm::Softmax)
      fill_unif(raw, rng, -2.0, 2.0);
    else
      fill_unif(raw, rng, 0.2, 1.5);
    Tensor cot(raw.shape());
    fill_unif(cot, rng, -1.0, 1.0);

    NormalizedKernels nk = normalize_kernels(raw, mode);
    Tensor g = nk.backward(cot);

    auto loss = [&]() { return dot(normalize_kernels(raw, mode).field().k, cot); };
    const std::size_t coords = std::min<std::size_t>(12, raw.size());
    for (std::size_t q = 0; q < coords; ++q) {
      const std::size_t i = rng.index(raw.size());
      check_coord(r, opt.tol, opt.fd_step, loss, raw[i], g[i]);
    }
  }
  finish(r, opt.tol);
  return r;
}

GradCheckResult suite_quantizer(const GradCheckOptions& opt) {
  GradCheckResult r{"quantizer", 0.0, 0, false};
  for (std::size_t inst = 0; inst < opt.instances; ++inst) {
    Rng rng(mix(opt.seed, 300 + inst));
    const double alpha = std::array<double, 4>{0.0, 0.25, 0.5, 1.0}[inst % 4];
    double x = rng.unif(0.0, 255.0);
    auto loss = [&]() { return soft_round(x, alpha); };
    check_coord(r, opt.tol, opt.fd_step, loss, x, soft_round_factor(x, alpha));
  }
  finish(r, opt.tol);
  return r;
}

GradCheckResult suite_l1(const GradCheckOptions& opt) {
  GradCheckResult r{"l1", 0.0, 0, false};
  for (std::size_t inst = 0; inst < opt.instances; ++inst) {
    Rng rng(mix(opt.seed, 400 + inst));
    const std::size_t h = 1 + rng.index(6), w = 1 + rng.index(6);
    const std::size_t c = (inst % 2 == 0) ? 3 : 1;
    Image sr = random_image(rng, h, w, c);
    Image hr = margin_target(sr, rng);
    L1Loss l1 = l1_loss(sr, hr);
    auto loss = [&]() { return l1_loss(sr, hr).value; };
    const std::size_t coords = std::min<std::size_t>(8, sr.tensor().size());
    for (std::size_t q = 0; q < coords; ++q) {
      const std::size_t i = rng.index(sr.tensor().size());
      check_coord(r, opt.tol, opt.fd_step, loss, sr.tensor()[i], l1.grad[i]);
    }
  }
  finish(r, opt.tol);
  return r;
}

GradCheckResult suite_offset_reg(const GradCheckOptions& opt, EtaMode mode) {
  GradCheckResult r{mode == EtaMode::Additive ? "offset-reg-additive" : "offset-reg-inside-sqrt",
                    0.0, 0, false};
  for (std::size_t inst = 0; inst < opt.instances; ++inst) {
    Rng rng(mix(opt.seed, 500 + inst));
    ResampleGeometry geom;
    geom.scale = 2;
    geom.m = 2 + rng.index(3);
    geom.n = 2 + rng.index(3);
    const std::size_t lh = 1 + rng.index(3), lw = 1 + rng.index(3);
    OffsetField off{Tensor({lh, lw, geom.m, geom.n}), Tensor({lh, lw, geom.m, geom.n})};
    for (std::size_t i = 0; i < off.dx.size(); ++i) {
      double dx = 0.0, dy = 0.0;
      // the additive form's true gradient has a kink at the origin; stay away
      while (std::hypot(dx, dy) < 0.1) {
        dx = rng.unif(-1.0, 1.0);
        dy = rng.unif(-1.0, 1.0);
      }
      off.dx[i] = dx;
      off.dy[i] = dy;
    }
    OffsetRegConfig cfg{mode == EtaMode::Additive ? 0.7 : 0.5, mode};
    OffsetRegResult res = offset_reg(off, geom, cfg);
    auto loss = [&]() { return offset_reg(off, geom, cfg).value; };
    const std::size_t coords = std::min<std::size_t>(8, off.dx.size());
    for (std::size_t q = 0; q < coords; ++q) {
      const std::size_t i = rng.index(off.dx.size());
      check_coord(r, opt.tol, opt.fd_step, loss, off.dx[i], res.grad_dx[i]);
      const std::size_t j = rng.index(off.dy.size());
      check_coord(r, opt.tol, opt.fd_step, loss, off.dy[j], res.grad_dy[j]);
    }
  }
  finish(r, opt.tol);
  return r;
}

GradCheckResult suite_partial_tv(const GradCheckOptions& opt) {
  GradCheckResult r{"partial-tv", 0.0, 0, false};
  for (std::size_t inst = 0; inst < opt.instances; ++inst) {
    Rng rng(mix(opt.seed, 600 + inst));
    const std::size_t lh = 2 + rng.index(2), lw = 2 + rng.index(2);
    const std::size_t m = 2 + rng.index(2), n = 2 + rng.index(2);
    OffsetField off{Tensor({lh, lw, m, n}), Tensor({lh, lw, m, n})};
    // keep every forward difference clear of the |.| fold
    for (int tries = 0; tries < 500; ++tries) {
      fill_unif(off.dx, rng, -1.0, 1.0);
      fill_unif(off.dy, rng, -1.0, 1.0);
      double worst = 1.0;
      for (std::size_t x = 0; x < lh; ++x)
        for (std::size_t y = 0; y < lw; ++y)
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              if (y + 1 < lw)
                worst = std::min(
                    worst, std::abs(off.dx.at(x, y + 1, i, j) - off.dx.at(x, y, i, j)));
              if (x + 1 < lh)
                worst = std::min(
                    worst, std::abs(off.dy.at(x + 1, y, i, j) - off.dy.at(x, y, i, j)));
            }
      if (worst >= 2e-3) break;
    }
    KernelField k{Tensor({lh, lw, m, n})};
    fill_unif(k.k, rng, 0.1, 1.0);

    PartialTvResult res = partial_tv(off, k);
    auto loss = [&]() { return partial_tv(off, k).value; };
    const std::size_t coords = std::min<std::size_t>(8, off.dx.size());
    for (std::size_t q = 0; q < coords; ++q) {
      const std::size_t i = rng.index(off.dx.size());
      check_coord(r, opt.tol, opt.fd_step, loss, off.dx[i], res.grad_dx[i]);
      const std::size_t j = rng.index(off.dy.size());
      check_coord(r, opt.tol, opt.fd_step, loss, off.dy[j], res.grad_dy[j]);
      const std::size_t l = rng.index(k.k.size());
      check_coord(r, opt.tol, opt.fd_step, loss, k.k[l], res.grad_k[l]);
    }
  }
  finish(r, opt.tol);
  return r;
}

GradCheckResult suite_conv(const GradCheckOptions& opt) {
  GradCheckResult r{"conv", 0.0, 0, false};
  for (std::size_t inst = 0; inst < opt.instances; ++inst) {
    Rng rng(mix(opt.seed, 700 + inst));
    const std::size_t cin = 1 + rng.index(3), cout = 1 + rng.index(3);
    const std::size_t k = (inst % 2 == 0) ? 3 : 1;
    const std::size_t stride = (inst % 3 == 0) ? 2 : 1;
    const std::size_t h = 2 + rng.index(5), w = 2 + rng.index(5);
    Conv2d conv(cin, cout, k, stride, /*has_bias=*/true);
    conv.init_kaiming(rng.g);
    fill_unif(conv.b, rng, -0.5, 0.5);
    Tensor x({1, cin, h, w});
    fill_unif(x, rng, -1.0, 1.0);

    Tensor y = conv.forward(x);
    Tensor cot(y.shape());
    fill_unif(cot, rng, -1.0, 1.0);
    conv.gw.fill(0.0);
    conv.gb.fill(0.0);
    Tensor gx = conv.backward(cot);

    auto loss = [&]() { return dot(conv.forward(x), cot); };
    for (std::size_t q = 0; q < 6; ++q) {
      const std::size_t i = rng.index(x.size());
      check_coord(r, opt.tol, opt.fd_step, loss, x[i], gx[i]);
      const std::size_t j = rng.index(conv.w.size());
      check_coord(r, opt.tol, opt.fd_step, loss, conv.w[j], conv.gw[j]);
      const std::size_t l = rng.index(conv.b.size());
      check_coord(r, opt.tol, opt.fd_step, loss, conv.b[l], conv.gb[l]);
    }
  }
  finish(r, opt.tol);
  return r;
}

GradCheckResult suite_leaky_relu(const GradCheckOptions& opt) {
  GradCheckResult r{"leaky-relu", 0.0, 0, false};
  for (std::size_t inst = 0; inst < opt.instances; ++inst) {
    Rng rng(mix(opt.seed, 800 + inst));
    LeakyReLU act(0.2);
    Tensor x({1, 2, 3, 3});
    for (std::size_t i = 0; i < x.size(); ++i) {
      double v = 0.0;
      while (std::abs(v) < 1e-3) v = rng.unif(-1.0, 1.0);
      x[i] = v;
    }
    Tensor y = act.forward(x);
    Tensor cot(y.shape());
    fill_unif(cot, rng, -1.0, 1.0);
    Tensor gx = act.backward(cot);
    auto loss = [&]() { return dot(act.forward(x), cot); };
    for (std::size_t q = 0; q < 6; ++q) {
      const std::size_t i = rng.index(x.size());
      check_coord(r, opt.tol, opt.fd_step, loss, x[i], gx[i]);
    }
  }
  finish(r, opt.tol);
  return r;
}

GradCheckResult suite_residual(const GradCheckOptions& opt) {
  GradCheckResult r{"residual-block", 0.0, 0, false};
  for (std::size_t inst = 0; inst < opt.instances; ++inst) {
    Rng rng(mix(opt.seed, 900 + inst));
    const std::size_t c = 1 + rng.index(3);
    const std::size_t h = 2 + rng.index(4), w = 2 + rng.index(4);
    ResidualBlock block(c, 0.2);
    block.init_kaiming(rng.g);
    fill_unif(block.conv1.b, rng, -0.3, 0.3);
    Tensor x({1, c, h, w});
    fill_unif(x, rng, -1.0, 1.0);

    Tensor y = block.forward(x);
    Tensor cot(y.shape());
    fill_unif(cot, rng, -1.0, 1.0);
    block.conv1.gw.fill(0.0);
    block.conv1.gb.fill(0.0);
    block.conv2.gw.fill(0.0);
    block.conv2.gb.fill(0.0);
    Tensor gx = block.backward(cot);

    auto loss = [&]() { return dot(block.forward(x), cot); };
    for (std::size_t q = 0; q < 6; ++q) {
      const std::size_t i = rng.index(x.size());
      check_coord(r, opt.tol, opt.fd_step, loss, x[i], gx[i]);
      const std::size_t j = rng.index(block.conv1.w.size());
      check_coord(r, opt.tol, opt.fd_step, loss, block.conv1.w[j], block.conv1.gw[j]);
      const std::size_t l = rng.index(block.conv2.w.size());
      check_coord(r, opt.tol, opt.fd_step, loss, block.conv2.w[l], block.conv2.gw[l]);
    }
  }
  finish(r, opt.tol);
  return r;
}

GradCheckResult suite_pixel_shuffle(const GradCheckOptions& opt) {
  GradCheckResult r{"pixel-shuffle", 0.0, 0, false};
  for (std::size_t inst = 0; inst < opt.instances; ++inst) {
    Rng rng(mix(opt.seed, 1000 + inst));
    const std::size_t f = (inst % 2 == 0) ? 2 : 3;
    const std::size_t c = 1 + rng.index(2);
    const std::size_t h = 1 + rng.index(3), w = 1 + rng.index(3);
    PixelShuffle shuffle(f);
    Tensor x({1, c * f * f, h, w});
    fill_unif(x, rng, -1.0, 1.0);
    Tensor y = shuffle.forward(x);
    Tensor cot(y.shape());
    fill_unif(cot, rng, -1.0, 1.0);
    Tensor gx = shuffle.backward(cot);
    auto loss = [&]() { return dot(shuffle.forward(x), cot); };
    for (std::size_t q = 0; q < 6; ++q) {
      const std::size_t i = rng.index(x.size());
      check_coord(r, opt.tol, opt.fd_step, loss, x[i], gx[i]);
    }
  }
  finish(r, opt.tol);
  return r;
}

GradCheckResult suite_bicubic(const GradCheckOptions& opt) {
  GradCheckResult r{"bicubic-upscale", 0.0, 0, false};
  for (std::size_t inst = 0; inst < opt.instances; ++inst) {
    Rng rng(mix(opt.seed, 1100 + inst));
    const std::size_t s = (inst % 2 == 0) ? 2 : 4;
    const std::size_t h = 2 + rng.index(5), w = 2 + rng.index(5);
    Image lr = random_image(rng, h, w, 3);
    Tensor cot({h * s, w * s, 3});
    fill_unif(cot, rng, -1.0, 1.0);
    Tensor g = bicubic_upscale_backward(cot, h, w, s);
    auto loss = [&]() { return dot(bicubic_upscale(lr, s).tensor(), cot); };
    for (std::size_t q = 0; q < 8; ++q) {
      const std::size_t i = rng.index(lr.tensor().size());
      check_coord(r, opt.tol, opt.fd_step, loss, lr.tensor()[i], g[i]);
    }
  }
  finish(r, opt.tol);
  return r;
}

GradCheckResult suite_kernel_net(const GradCheckOptions& opt) {
  GradCheckResult r{"kernel-net", 0.0, 0, false};
  for (std::size_t inst = 0; inst < opt.instances; ++inst) {
    Rng rng(mix(opt.seed, 1200 + inst));
    ResamplerNetConfig cfg;
    cfg.scale = (inst % 2 == 0) ? 2 : 1;
    cfg.base = 4;
    cfg.cap = 8;
    cfg.blocks = 1;
    cfg.head_channels = 4;
    cfg.m = cfg.n = 2 + rng.index(2);
    cfg.enable_offsets = true;
    ResamplerNet net(cfg);
    net.init(rng.g);
    std::vector<NamedParam> params = net.params();
    for (const NamedParam& p : params)
      if (p.name.find("ohead.out") != std::string::npos) fill_unif(*p.value, rng, -0.3, 0.3);

    const std::size_t lh = 3, lw = 3;
    Tensor x({1, 3, lh * cfg.scale, lw * cfg.scale});
    fill_unif(x, rng, -0.5, 0.5);

    net.zero_grad();
    ResamplerNetOut out = net.forward(x);
    Tensor cotk(out.raw_kernels.shape()), cotx(out.dx.shape()), coty(out.dy.shape());
    fill_unif(cotk, rng, -1.0, 1.0);
    fill_unif(cotx, rng, -1.0, 1.0);
    fill_unif(coty, rng, -1.0, 1.0);
    Tensor gx = net.backward(cotk, cotx, coty);

    auto loss = [&]() {
      ResamplerNetOut o = net.forward(x);
      return dot(o.raw_kernels, cotk) + dot(o.dx, cotx) + dot(o.dy, coty);
    };
    for (std::size_t q = 0; q < 10; ++q) {
      const NamedParam& p = params[rng.index(params.size())];
      const std::size_t i = rng.index(p.value->size());
      check_coord(r, opt.tol, opt.fd_step, loss, (*p.value)[i], (*p.grad)[i]);
    }
    for (std::size_t q = 0; q < 4; ++q) {
      const std::size_t i = rng.index(x.size());
      check_coord(r, opt.tol, opt.fd_step, loss, x[i], gx[i]);
    }
  }
  finish(r, opt.tol);
  return r;
}

GradCheckResult suite_upscale_net(const GradCheckOptions& opt) {
  GradCheckResult r{"upscale-net", 0.0, 0, false};
  for (std::size_t inst = 0; inst < opt.instances; ++inst) {
    Rng rng(mix(opt.seed, 1300 + inst));
    SRNetConfig cfg;
    cfg.scale = 2;
    cfg.features = 4;
    cfg.blocks = 1;
    SRNet net(cfg);
    net.init(rng.g);
    std::vector<NamedParam> params = net.params();
    Tensor x({1, 3, 4, 4});
    fill_unif(x, rng, -0.5, 0.5);

    net.zero_grad();
    Tensor y = net.forward(x);
    Tensor cot(y.shape());
    fill_unif(cot, rng, -1.0, 1.0);
    Tensor gx = net.backward(cot);

    auto loss = [&]() { return dot(net.forward(x), cot); };
    for (std::size_t q = 0; q < 10; ++q) {
      const NamedParam& p = params[rng.index(params.size())];
      const std::size_t i = rng.index(p.value->size());
      check_coord(r, opt.tol, opt.fd_step, loss, (*p.value)[i], (*p.grad)[i]);
    }
    for (std::size_t q = 0; q < 4; ++q) {
      const std::size_t i = rng.index(x.size());
      check_coord(r, opt.tol, opt.fd_step, loss, x[i], gx[i]);
    }
  }
  finish(r, opt.tol);
  return r;
}

// net -> normalize -> resample -> bicubic upscale -> L1, plus the offset
// travel penalty, differentiated end to end w.r.t. the net parameters
GradCheckResult suite_end_to_end(const GradCheckOptions& opt) {
  GradCheckResult r{"end-to-end", 0.0, 0, false};
  const double lambda = 0.3;
  const OffsetRegConfig reg_cfg{0.5, EtaMode::InsideSqrt};

  for (std::size_t inst = 0; inst < opt.instances; ++inst) {
    ResampleGeometry geom;
    geom.scale = 2;
    geom.m = geom.n = (inst % 2 == 0) ? 2 : 3;
    geom.offset_unit = 2.0;
    ResamplerNetConfig cfg;
    cfg.scale = geom.scale;
    cfg.base = 4;
    cfg.cap = 8;
    cfg.blocks = 1;
    cfg.head_channels = 4;
    cfg.m = geom.m;
    cfg.n = geom.n;
    cfg.enable_offsets = true;

    ResamplerNet net(cfg);
    Image hr;
    bool ok = false;
    for (std::uint64_t attempt = 0; attempt < 30 && !ok; ++attempt) {
      Rng rng(mix(opt.seed, 1400 + inst * 64 + attempt));
      hr = random_image(rng, 8, 8, 3);
      net.init(rng.g);
      for (const NamedParam& p : net.params())
        if (p.name.find("ohead.out") != std::string::npos) fill_unif(*p.value, rng, -0.2, 0.2);

      // reject draws whose sample positions sit near the bilinear lattice
      ResamplerNetOut out = net.forward(hwc_to_nchw(hr));
      Tensor dx = ResamplerNet::field_from_nchw(out.dx, 0, geom.m, geom.n);
      Tensor dy = ResamplerNet::field_from_nchw(out.dy, 0, geom.m, geom.n);
      ok = true;
      const std::size_t lh = dx.extent(0), lw = dx.extent(1);
      for (std::size_t x = 0; x < lh && ok; ++x)
        for (std::size_t y = 0; y < lw && ok; ++y)
          for (std::size_t i = 0; i < geom.m && ok; ++i)
            for (std::size_t j = 0; j < geom.n && ok; ++j) {
              const auto [u, v] = project(x, y, static_cast<double>(geom.scale));
              const double pu = u + (static_cast<double>(i) - static_cast<double>(geom.m) / 2.0) +
                                geom.offset_unit * dx.at(x, y, i, j);
              const double pv = v + (static_cast<double>(j) - static_cast<double>(geom.n) / 2.0) +
                                geom.offset_unit * dy.at(x, y, i, j);
              if (lattice_margin(pu) < 1e-3 || lattice_margin(pv) < 1e-3) ok = false;
            }
    }
    if (!ok) continue;

    auto forward_parts = [&](bool tape, DownscaleResult* down_out, NormalizedKernels* nk_out,
                             OffsetField* off_out) {
      ResamplerNetOut out = net.forward(hwc_to_nchw(hr));
      Tensor raw = ResamplerNet::field_from_nchw(out.raw_kernels, 0, geom.m, geom.n);
      NormalizedKernels nk = normalize_kernels(raw, KernelNorm::Softmax);
      OffsetField off{ResamplerNet::field_from_nchw(out.dx, 0, geom.m, geom.n),
                      ResamplerNet::field_from_nchw(out.dy, 0, geom.m, geom.n)};
      DownscaleResult down = downscale_forward(hr, nk.field(), off, geom, tape);
      if (down_out) *down_out = std::move(down);
      if (nk_out) *nk_out = std::move(nk);
      if (off_out) *off_out = std::move(off);
    };

    DownscaleResult down;
    NormalizedKernels nk;
    OffsetField off;
    forward_parts(true, &down, &nk, &off);
    Rng trng(mix(opt.seed, 1500 + inst));
    const Image target = margin_target(bicubic_upscale(down.lr, geom.scale), trng);

    auto objective = [&]() {
      DownscaleResult d;
      NormalizedKernels k;
      OffsetField o;
      forward_parts(false, &d, &k, &o);
      const double l1 = l1_loss(bicubic_upscale(d.lr, geom.scale), target).value;
      return l1 + lambda * offset_reg(o, geom, reg_cfg).value;
    };

    // analytic pass
    net.zero_grad();
    L1Loss l1 = l1_loss(bicubic_upscale(down.lr, geom.scale), target);
    Tensor grad_lr = bicubic_upscale_backward(l1.grad, down.lr.height(), down.lr.width(),
                                              geom.scale);
    DownscaleGrads dg = downscale_backward(grad_lr, down.tape);
    OffsetRegResult reg = offset_reg(off, geom, reg_cfg);
    for (std::size_t i = 0; i < dg.dx.size(); ++i) {
      dg.dx[i] += lambda * reg.grad_dx[i];
      dg.dy[i] += lambda * reg.grad_dy[i];
    }
    Tensor graw = nk.backward(dg.k);
    const std::size_t mn = geom.m * geom.n;
    const std::size_t lh = down.lr.height(), lw = down.lr.width();
    Tensor gk({1, mn, lh, lw}), gdx({1, mn, lh, lw}), gdy({1, mn, lh, lw});
    ResamplerNet::field_grad_to_nchw(graw, 0, gk);
    ResamplerNet::field_grad_to_nchw(dg.dx, 0, gdx);
    ResamplerNet::field_grad_to_nchw(dg.dy, 0, gdy);
    net.backward(gk, gdx, gdy);

    std::vector<NamedParam> params = net.params();
    Rng crng(mix(opt.seed, 1600 + inst));
    for (std::size_t q = 0; q < 12; ++q) {
      const NamedParam& p = params[crng.index(params.size())];
      const std::size_t i = crng.index(p.value->size());
      check_coord(r, opt.end_to_end_tol, opt.fd_step, objective, (*p.value)[i], (*p.grad)[i]);
    }
  }
  finish(r, opt.end_to_end_tol);
  return r;
}

}  // namespace

std::vector<GradCheckResult> run_gradient_checks(const GradCheckOptions& opt) {
  std::vector<GradCheckResult> out;
  out.push_back(suite_downscale(opt));
  out.push_back(suite_normalize(opt, KernelNorm::Softmax));
  out.push_back(suite_normalize(opt, KernelNorm::SumEpsilon));
  out.push_back(suite_quantizer(opt));
  out.push_back(suite_l1(opt));
  out.push_back(suite_offset_reg(opt, EtaMode::Additive));
  out.push_back(suite_offset_reg(opt, EtaMode::InsideSqrt));
  out.push_back(suite_partial_tv(opt));
  out.push_back(suite_conv(opt));
  out.push_back(suite_leaky_relu(opt));
  out.push_back(suite_residual(opt));
  out.push_back(suite_pixel_shuffle(opt));
  out.push_back(suite_bicubic(opt));
  out.push_back(suite_kernel_net(opt));
  out.push_back(suite_upscale_net(opt));
  out.push_back(suite_end_to_end(opt));
  return out;
}

bool all_passed(const std::vector<GradCheckResult>& results) {
  for (const GradCheckResult& r : results)
    if (!r.pass) return false;
  return !results.empty();
}

}  // namespace car
