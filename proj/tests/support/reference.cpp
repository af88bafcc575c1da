#include "reference.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "car/color.hpp"
#include "car/image_io.hpp"

namespace car::testsupport {

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

double sample_clamped(const Image& img, long r, long c, std::size_t ch) {
  const long h = static_cast<long>(img.height()), w = static_cast<long>(img.width());
  r = std::clamp(r, 0L, h - 1);
  c = std::clamp(c, 0L, w - 1);
  return img.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c), ch);
}

double bilinear_clamped(const Image& img, double u, double v, std::size_t ch) {
  const double uf = std::floor(u), vf = std::floor(v);
  const double a = u - uf, b = v - vf;
  const long r0 = static_cast<long>(uf), c0 = static_cast<long>(vf);
  return (1 - a) * (1 - b) * sample_clamped(img, r0, c0, ch) +
         (1 - a) * b * sample_clamped(img, r0, c0 + 1, ch) +
         a * (1 - b) * sample_clamped(img, r0 + 1, c0, ch) +
         a * b * sample_clamped(img, r0 + 1, c0 + 1, ch);
}

}  // namespace

Image oracle_downscale(const Image& hr, const Tensor& kernels, const Tensor& dx, const Tensor& dy,
                       const ResampleGeometry& geom) {
  const std::size_t lh = hr.height() / geom.scale, lw = hr.width() / geom.scale;
  const std::size_t m = geom.m, n = geom.n, c = hr.channels();
  Image lr = Image::zeros(lh, lw, c, hr.space());
  for (std::size_t x = 0; x < lh; ++x)
    for (std::size_t y = 0; y < lw; ++y) {
      const double u0 = (static_cast<double>(x) + 0.5) * static_cast<double>(geom.scale) - 0.5;
      const double v0 = (static_cast<double>(y) + 0.5) * static_cast<double>(geom.scale) - 0.5;
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double u = u0 + static_cast<double>(i) - static_cast<double>(m) / 2.0 +
                             geom.offset_unit * dx.at(x, y, i, j);
            const double v = v0 + static_cast<double>(j) - static_cast<double>(n) / 2.0 +
                             geom.offset_unit * dy.at(x, y, i, j);
            acc += kernels.at(x, y, i, j) * bilinear_clamped(hr, u, v, ch);
          }
        lr.at(x, y, ch) = acc;
      }
    }
  return lr;
}

double oracle_ssim_y(const Image& a, const Image& b) {
  const std::size_t h = a.height(), w = a.width();
  const Image ya = rgb_to_y(a), yb = rgb_to_y(b);
  auto luma_byte = [](const Image& y, std::size_t r, std::size_t c) {
    return std::round(clamp01(y.at(r, c, 0)) * 255.0);
  };

  double win[11][11];
  double wsum = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      const double di = i - 5.0, dj = j - 5.0;
      win[i][j] = std::exp(-(di * di + dj * dj) / (2.0 * 1.5 * 1.5));
      wsum += win[i][j];
    }
  for (auto& row : win)
    for (double& v : row) v /= wsum;

  const double c1 = 2.55 * 2.55, c2 = 7.65 * 7.65;
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r + 11 <= h; ++r)
    for (std::size_t c = 0; c + 11 <= w; ++c) {
      double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
      for (std::size_t i = 0; i < 11; ++i)
        for (std::size_t j = 0; j < 11; ++j) {
          const double wv = win[i][j];
          const double x = luma_byte(ya, r + i, c + j);
          const double y = luma_byte(yb, r + i, c + j);
          mx += wv * x;
          my += wv * y;
          mxx += wv * x * x;
          myy += wv * y * y;
          mxy += wv * x * y;
        }
      const double vx = mxx - mx * mx, vy = myy - my * my, cov = mxy - mx * my;
      acc += ((2 * mx * my + c1) * (2 * cov + c2)) /
             ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return acc / static_cast<double>(count);
}

void fill_uniform(Tensor& t, TestRng& rng, double lo, double hi) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.unif(lo, hi);
}

Image random_image(TestRng& rng, std::size_t h, std::size_t w, std::size_t c) {
  Image img = Image::zeros(h, w, c, c == 3 ? ColorSpace::RGB : ColorSpace::Y);
  fill_uniform(img.tensor(), rng, 0.0, 1.0);
  return img;
}

Tensor random_normalized_kernels(TestRng& rng, std::size_t lh, std::size_t lw, std::size_t m,
                                 std::size_t n) {
  Tensor k({lh, lw, m, n});
  for (std::size_t x = 0; x < lh; ++x)
    for (std::size_t y = 0; y < lw; ++y) {
      double sum = 0.0;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          k.at(x, y, i, j) = rng.unif(0.05, 1.0);
          sum += k.at(x, y, i, j);
        }
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) k.at(x, y, i, j) /= sum;
    }
  return k;
}

Image synth_photo(std::uint64_t seed, std::size_t h, std::size_t w) {
  TestRng rng(seed * 0x9e3779b97f4a7c15ULL + 12345);
  Image img = Image::zeros(h, w, 3, ColorSpace::RGB);

  const double base[3] = {rng.unif(0.2, 0.8), rng.unif(0.2, 0.8), rng.unif(0.2, 0.8)};
  const double gdir = rng.unif(0.0, 6.28318);
  const double gx = std::cos(gdir) / static_cast<double>(w), gy = std::sin(gdir) / static_cast<double>(h);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double ramp = 0.3 * (gx * static_cast<double>(c) + gy * static_cast<double>(r));
      for (std::size_t ch = 0; ch < 3; ++ch) img.at(r, c, ch) = base[ch] + ramp;
    }

  const std::size_t blobs = 4 + rng.index(4);
  for (std::size_t bidx = 0; bidx < blobs; ++bidx) {
    const double cr = rng.unif(0.0, static_cast<double>(h));
    const double cc = rng.unif(0.0, static_cast<double>(w));
    const double rr = rng.unif(0.06, 0.25) * static_cast<double>(h);
    const double rc = rng.unif(0.06, 0.25) * static_cast<double>(w);
    const double col[3] = {rng.unif(0.0, 1.0), rng.unif(0.0, 1.0), rng.unif(0.0, 1.0)};
    const double softness = rng.unif(2.0, 8.0);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        const double dr = (static_cast<double>(r) - cr) / rr;
        const double dc = (static_cast<double>(c) - cc) / rc;
        const double d = dr * dr + dc * dc;
        const double alpha = 1.0 / (1.0 + std::exp(softness * (d - 1.0)));
        for (std::size_t ch = 0; ch < 3; ++ch)
          img.at(r, c, ch) = (1.0 - alpha) * img.at(r, c, ch) + alpha * col[ch];
      }
  }

  // one oriented grating patch for high-frequency content
  {
    const std::size_t ph = h / 3, pw = w / 3;
    const std::size_t r0 = rng.index(h - ph), c0 = rng.index(w - pw);
    const double freq = rng.unif(0.4, 1.2), ang = rng.unif(0.0, 3.14159);
    const double ka = freq * std::cos(ang), kb = freq * std::sin(ang);
    for (std::size_t r = 0; r < ph; ++r)
      for (std::size_t c = 0; c < pw; ++c) {
        const double s =
            0.5 + 0.5 * std::sin(ka * static_cast<double>(r) + kb * static_cast<double>(c));
        for (std::size_t ch = 0; ch < 3; ++ch) {
          double& v = img.at(r0 + r, c0 + c, ch);
          v = 0.6 * v + 0.4 * s;
        }
      }
  }

  for (std::size_t i = 0; i < img.tensor().size(); ++i)
    img.tensor()[i] = clamp01(img.tensor()[i] + rng.unif(-0.02, 0.02));
  return img;
}

void write_synth_dataset(const std::string& dir, std::uint64_t seed, std::size_t count,
                         std::size_t h, std::size_t w) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%02zu.png", i);
    save_png(synth_photo(seed + i, h, w), dir + "/" + name);
  }
}

}  // namespace car::testsupport
