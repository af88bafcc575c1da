#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "car/resampler.hpp"
#include "reference.hpp"

using namespace car;
namespace ts = car::testsupport;

namespace {

OffsetField zero_offsets(std::size_t lh, std::size_t lw, std::size_t m, std::size_t n) {
  return {Tensor({lh, lw, m, n}), Tensor({lh, lw, m, n})};
}

// offsets drawn uniformly, redrawn until every sample position keeps a margin
// from the integer lattice (where bilinear partials jump)
OffsetField safe_offsets(ts::TestRng& rng, const Image& hr, const ResampleGeometry& g,
                         double margin) {
  const std::size_t lh = hr.height() / g.scale, lw = hr.width() / g.scale;
  OffsetField off = zero_offsets(lh, lw, g.m, g.n);
  auto frac_margin = [](double p) { return std::abs(p - std::round(p)); };
  for (std::size_t x = 0; x < lh; ++x)
    for (std::size_t y = 0; y < lw; ++y) {
      const auto [u0, v0] = project(x, y, static_cast<double>(g.scale));
      for (std::size_t i = 0; i < g.m; ++i)
        for (std::size_t j = 0; j < g.n; ++j)
          for (int attempt = 0; attempt < 200; ++attempt) {
            const double dx = rng.unif(-1.5, 1.5), dy = rng.unif(-1.5, 1.5);
            const double u = u0 + static_cast<double>(i) - static_cast<double>(g.m) / 2.0 +
                             g.offset_unit * dx;
            const double v = v0 + static_cast<double>(j) - static_cast<double>(g.n) / 2.0 +
                             g.offset_unit * dy;
            if (frac_margin(u) > margin && frac_margin(v) > margin) {
              off.dx.at(x, y, i, j) = dx;
              off.dy.at(x, y, i, j) = dy;
              break;
            }
          }
    }
  return off;
}

}  // namespace

TEST_CASE("project: LR centers land on the HR grid per the pixel-center convention") {
  auto [u, v] = project(0, 0, 4.0);
  CHECK(u == 1.5);
  CHECK(v == 1.5);

  auto [u2, v2] = project(1, 2, 2.0);
  CHECK(u2 == 2.5);
  CHECK(v2 == 4.5);

  for (std::size_t x : {0u, 3u, 17u}) {
    auto [ux, vx] = project(x, x, 1.0);
    CHECK(ux == static_cast<double>(x));
    CHECK(vx == static_cast<double>(x));
  }
}

TEST_CASE("bilinear_sample: integer coordinates give the pixel and neighbor-difference partials") {
  Image img = Image::zeros(3, 3, 1, ColorSpace::Y);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) img.at(r, c, 0) = static_cast<double>(3 * r + c) * 0.1;

  BilinearSample s = bilinear_sample(img, 1.0, 1.0);
  CHECK(s.value[0] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(s.du[0] == doctest::Approx(img.at(2, 1, 0) - img.at(1, 1, 0)).epsilon(1e-15));
  CHECK(s.dv[0] == doctest::Approx(img.at(1, 2, 0) - img.at(1, 1, 0)).epsilon(1e-15));
}

TEST_CASE("bilinear_sample: worked fractional example") {
  // rows indexed by u: fractions 0.25 along rows, 0.5 along columns
  Image img = Image::zeros(2, 2, 1, ColorSpace::Y);
  img.at(0, 0, 0) = 0.0;
  img.at(0, 1, 0) = 8.0;
  img.at(1, 0, 0) = 4.0;
  img.at(1, 1, 0) = 12.0;

  BilinearSample s = bilinear_sample(img, 0.25, 0.5);
  CHECK(s.value[0] == doctest::Approx(5.0).epsilon(1e-15));
  // d/du = -(1-b)*0 - b*8 + (1-b)*4 + b*12 with b = 0.5
  CHECK(s.du[0] == doctest::Approx(4.0).epsilon(1e-15));
  // d/dv = -(1-a)*0 + (1-a)*8 - a*4 + a*12 with a = 0.25
  CHECK(s.dv[0] == doctest::Approx(8.0).epsilon(1e-15));
}

TEST_CASE("bilinear_sample: constant image is constant with zero partials everywhere") {
  Image img = Image::zeros(4, 4, 3, ColorSpace::RGB);
  img.tensor().fill(0.625);
  for (double u : {-3.7, 0.2, 1.5, 9.9})
    for (double v : {-0.5, 2.25, 7.0}) {
      BilinearSample s = bilinear_sample(img, u, v);
      for (std::size_t c = 0; c < 3; ++c) {
        CHECK(s.value[c] == doctest::Approx(0.625).epsilon(1e-15));
        CHECK(s.du[c] == 0.0);
        CHECK(s.dv[c] == 0.0);
      }
    }
}

TEST_CASE("bilinear_sample: clamped coordinates pin the edge pixel with zero partials") {
  ts::TestRng rng(17);
  Image img = ts::random_image(rng, 3, 3, 1);
  BilinearSample s = bilinear_sample(img, -6.0, -4.5);
  CHECK(s.value[0] == doctest::Approx(img.at(0, 0, 0)).epsilon(1e-15));
  CHECK(s.du[0] == 0.0);
  CHECK(s.dv[0] == 0.0);

  BilinearSample t = bilinear_sample(img, 11.0, 1.0);
  CHECK(t.value[0] == doctest::Approx(img.at(2, 1, 0)).epsilon(1e-15));
  CHECK(t.du[0] == 0.0);
}

TEST_CASE("downscale_forward: scale-1 delta kernel with zero offsets is the identity") {
  ts::TestRng rng(23);
  Image hr = ts::random_image(rng, 5, 6);
  ResampleGeometry g{1, 2, 2, 1.0};

  Tensor k({5, 6, 2, 2});
  for (std::size_t x = 0; x < 5; ++x)
    for (std::size_t y = 0; y < 6; ++y) k.at(x, y, 1, 1) = 1.0;  // tap (1,1) sits exactly on (u, v)

  DownscaleResult r = downscale_forward(hr, {k}, zero_offsets(5, 6, 2, 2), g);
  REQUIRE(r.lr.tensor().same_shape(hr.tensor()));
  for (std::size_t i = 0; i < hr.tensor().size(); ++i) CHECK(r.lr.tensor()[i] == hr.tensor()[i]);
}

TEST_CASE("downscale_forward: constant images are fixed points for any kernels and offsets") {
  ts::TestRng rng(29);
  Image hr = Image::zeros(8, 8, 3, ColorSpace::RGB);
  hr.tensor().fill(0.3125);
  ResampleGeometry g{2, 6, 6, 2.0};
  Tensor k = ts::random_normalized_kernels(rng, 4, 4, 6, 6);
  OffsetField off = zero_offsets(4, 4, 6, 6);
  ts::fill_uniform(off.dx, rng, -2.0, 2.0);
  ts::fill_uniform(off.dy, rng, -2.0, 2.0);

  DownscaleResult r = downscale_forward(hr, {k}, off, g);
  for (std::size_t i = 0; i < r.lr.tensor().size(); ++i)
    CHECK(r.lr.tensor()[i] == doctest::Approx(0.3125).epsilon(1e-12));
}

TEST_CASE("downscale_forward: matches the scalar nested-loop oracle on 100 random instances") {
  ts::TestRng rng(31);
  const std::size_t scales[] = {1, 2, 4};
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t s = scales[rng.index(3)];
    const std::size_t span = rng.index(2) == 0 ? 2 : 3 * s;
    const std::size_t lh = 1 + rng.index(3), lw = 1 + rng.index(3);
    ResampleGeometry g{s, span, span, static_cast<double>(s)};
    Image hr = ts::random_image(rng, lh * s, lw * s, rng.index(2) == 0 ? 1 : 3);
    Tensor k = ts::random_normalized_kernels(rng, lh, lw, span, span);
    OffsetField off = zero_offsets(lh, lw, span, span);
    ts::fill_uniform(off.dx, rng, -2.0, 2.0);
    ts::fill_uniform(off.dy, rng, -2.0, 2.0);

    DownscaleResult r = downscale_forward(hr, {k}, off, g, /*record_tape=*/false);
    Image want = ts::oracle_downscale(hr, k, off.dx, off.dy, g);
    REQUIRE(r.lr.tensor().same_shape(want.tensor()));
    for (std::size_t i = 0; i < want.tensor().size(); ++i)
      worst = std::max(worst, std::abs(r.lr.tensor()[i] - want.tensor()[i]));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("downscale_forward: rejects bad geometry and mismatched fields") {
  ts::TestRng rng(37);
  Image hr = ts::random_image(rng, 6, 6);
  ResampleGeometry g{2, 3, 3, 2.0};
  Tensor k = ts::random_normalized_kernels(rng, 3, 3, 3, 3);

  Image odd = ts::random_image(rng, 5, 6);
  CHECK_THROWS(downscale_forward(odd, {k}, zero_offsets(3, 3, 3, 3), g));

  CHECK_THROWS(downscale_forward(hr, {k}, zero_offsets(3, 3, 2, 3), g));
  Tensor wrong = ts::random_normalized_kernels(rng, 2, 3, 3, 3);
  CHECK_THROWS(downscale_forward(hr, {wrong}, zero_offsets(3, 3, 3, 3), g));
}

TEST_CASE("downscale_backward: zero upstream gradient gives zero everywhere") {
  ts::TestRng rng(41);
  Image hr = ts::random_image(rng, 4, 4);
  ResampleGeometry g{2, 3, 3, 2.0};
  Tensor k = ts::random_normalized_kernels(rng, 2, 2, 3, 3);
  OffsetField off = zero_offsets(2, 2, 3, 3);
  ts::fill_uniform(off.dx, rng, -1.0, 1.0);
  ts::fill_uniform(off.dy, rng, -1.0, 1.0);

  DownscaleResult r = downscale_forward(hr, {k}, off, g);
  DownscaleGrads grads = downscale_backward(Tensor({2, 2, 3}), r.tape);
  for (std::size_t i = 0; i < grads.k.size(); ++i) CHECK(grads.k[i] == 0.0);
  for (std::size_t i = 0; i < grads.dx.size(); ++i) CHECK(grads.dx[i] == 0.0);
  for (std::size_t i = 0; i < grads.dy.size(); ++i) CHECK(grads.dy[i] == 0.0);
}

TEST_CASE("downscale_backward: single-tap kernel gradient is the sampled value times upstream") {
  ts::TestRng rng(43);
  Image hr = ts::random_image(rng, 2, 2, 3);
  ResampleGeometry g{2, 1, 1, 1.0};  // one LR pixel, one tap
  Tensor k = Tensor::full({1, 1, 1, 1}, 1.0);
  OffsetField off = zero_offsets(1, 1, 1, 1);
  off.dx.at(0, 0, 0, 0) = 0.37;
  off.dy.at(0, 0, 0, 0) = -0.21;

  DownscaleResult r = downscale_forward(hr, {k}, off, g);
  // the tap samples (0.5 - 0.5 + 0.37, 0.5 - 0.5 - 0.21)
  BilinearSample s = bilinear_sample(hr, 0.37, -0.21);

  Tensor grad_lr({1, 1, 3});
  grad_lr[0] = 2.0;
  grad_lr[1] = -1.0;
  grad_lr[2] = 0.5;
  DownscaleGrads grads = downscale_backward(grad_lr, r.tape);

  const double want = 2.0 * s.value[0] - 1.0 * s.value[1] + 0.5 * s.value[2];
  CHECK(grads.k.at(0, 0, 0, 0) == doctest::Approx(want).epsilon(1e-14));
  // and the LR value itself is the sample
  for (std::size_t c = 0; c < 3; ++c)
    CHECK(r.lr.at(0, 0, c) == doctest::Approx(s.value[c]).epsilon(1e-14));
}

TEST_CASE("downscale_backward: matches central finite differences away from the lattice") {
  ts::TestRng rng(47);
  Image hr = ts::random_image(rng, 6, 6);
  ResampleGeometry g{2, 3, 3, 2.0};
  Tensor k = ts::random_normalized_kernels(rng, 3, 3, 3, 3);
  OffsetField off = safe_offsets(rng, hr, g, 1e-3);

  Tensor grad_lr({3, 3, 3});
  ts::fill_uniform(grad_lr, rng, -1.0, 1.0);

  DownscaleResult r = downscale_forward(hr, {k}, off, g);
  DownscaleGrads grads = downscale_backward(grad_lr, r.tape);

  auto objective = [&]() {
    DownscaleResult rr = downscale_forward(hr, {k}, off, g, /*record_tape=*/false);
    double acc = 0.0;
    for (std::size_t i = 0; i < grad_lr.size(); ++i) acc += grad_lr[i] * rr.lr.tensor()[i];
    return acc;
  };
  const double h = 1e-5;
  double worst = 0.0;
  auto probe = [&](Tensor& field, const Tensor& analytic) {
    for (int q = 0; q < 25; ++q) {
      const std::size_t i = rng.index(field.size());
      const double save = field[i];
      field[i] = save + h;
      const double lp = objective();
      field[i] = save - h;
      const double lm = objective();
      field[i] = save;
      const double fd = (lp - lm) / (2.0 * h);
      const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-6});
      worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
    }
  };
  probe(k, grads.k);
  probe(off.dx, grads.dx);
  probe(off.dy, grads.dy);
  CHECK(worst < 1e-5);
}

TEST_CASE("downscale_backward: a tape cannot be consumed twice") {
  ts::TestRng rng(53);
  Image hr = ts::random_image(rng, 4, 4);
  ResampleGeometry g{2, 2, 2, 2.0};
  Tensor k = ts::random_normalized_kernels(rng, 2, 2, 2, 2);

  DownscaleResult r = downscale_forward(hr, {k}, zero_offsets(2, 2, 2, 2), g);
  Tensor grad_lr({2, 2, 3});
  downscale_backward(grad_lr, r.tape);
  CHECK_THROWS(downscale_backward(grad_lr, r.tape));

  DownscaleResult untaped = downscale_forward(hr, {k}, zero_offsets(2, 2, 2, 2), g, false);
  CHECK_THROWS(downscale_backward(grad_lr, untaped.tape));
}

TEST_CASE("normalize_kernels: softmax symmetry and hand example") {
  Tensor equal = Tensor::full({2, 2, 3, 3}, 0.7);
  NormalizedKernels nk = normalize_kernels(equal);
  for (std::size_t i = 0; i < nk.field().k.size(); ++i)
    CHECK(nk.field().k[i] == doctest::Approx(1.0 / 9.0).epsilon(1e-12));

  Tensor two({1, 1, 1, 2});
  two[0] = 0.0;
  two[1] = std::log(3.0);
  NormalizedKernels pair = normalize_kernels(two);
  CHECK(pair.field().k[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(pair.field().k[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("normalize_kernels: both modes produce a partition of unity") {
  ts::TestRng rng(59);
  auto check_sums = [](const KernelField& f) {
    for (std::size_t x = 0; x < f.k.extent(0); ++x)
      for (std::size_t y = 0; y < f.k.extent(1); ++y) {
        double sum = 0.0;
        for (std::size_t i = 0; i < f.k.extent(2); ++i)
          for (std::size_t j = 0; j < f.k.extent(3); ++j) sum += f.k.at(x, y, i, j);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
      }
  };

  Tensor logits({3, 2, 4, 4});
  ts::fill_uniform(logits, rng, -3.0, 3.0);
  check_sums(normalize_kernels(logits, KernelNorm::Softmax).field());

  Tensor positive({3, 2, 4, 4});
  ts::fill_uniform(positive, rng, 0.05, 2.0);
  check_sums(normalize_kernels(positive, KernelNorm::SumEpsilon).field());
}

TEST_CASE("normalize_kernels: backward matches finite differences in both modes") {
  ts::TestRng rng(61);
  for (KernelNorm mode : {KernelNorm::Softmax, KernelNorm::SumEpsilon}) {
    Tensor raw({1, 2, 2, 2});
    ts::fill_uniform(raw, rng, mode == KernelNorm::Softmax ? -2.0 : 0.1,
                     mode == KernelNorm::Softmax ? 2.0 : 2.0);
    Tensor cot(raw.shape());
    ts::fill_uniform(cot, rng, -1.0, 1.0);

    NormalizedKernels nk = normalize_kernels(raw, mode);
    Tensor grad = nk.backward(cot);

    auto objective = [&]() {
      NormalizedKernels n2 = normalize_kernels(raw, mode);
      double acc = 0.0;
      for (std::size_t i = 0; i < cot.size(); ++i) acc += cot[i] * n2.field().k[i];
      return acc;
    };
    const double h = 1e-6;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const double save = raw[i];
      raw[i] = save + h;
      const double lp = objective();
      raw[i] = save - h;
      const double lm = objective();
      raw[i] = save;
      const double fd = (lp - lm) / (2.0 * h);
      CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("geometry: defaults and validation") {
  ResampleGeometry g = ResampleGeometry::defaults(4);
  CHECK(g.scale == 4);
  CHECK(g.m == 12);
  CHECK(g.n == 12);
  CHECK(g.offset_unit == 4.0);
  g.validate();

  ResampleGeometry bad = g;
  bad.scale = 0;
  CHECK_THROWS(bad.validate());
  bad = g;
  bad.m = 0;
  CHECK_THROWS(bad.validate());
  bad = g;
  bad.offset_unit = 0.0;
  CHECK_THROWS(bad.validate());
}
