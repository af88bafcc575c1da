#include "car/viz.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "car/common.hpp"
#include "car/image_io.hpp"
#include "car/pipeline.hpp"

namespace car {

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0.0, g = 0.0, b = 0.0;
  if (hp < 1.0) {
    r = c; g = x;
  } else if (hp < 2.0) {
    r = x; g = c;
  } else if (hp < 3.0) {
    g = c; b = x;
  } else if (hp < 4.0) {
    g = x; b = c;
  } else if (hp < 5.0) {
    r = x; b = c;
  } else {
    r = c; b = x;
  }
  const double m = v - c;
  return {r + m, g + m, b + m};
}

std::vector<std::string> write_viz(const Checkpoint& ckpt, const Image& hr,
                                   const std::string& out_dir, const std::string& stem) {
  namespace fs = std::filesystem;
  Pipeline pipe(ckpt);
  const ResampleGeometry& geom = pipe.geom();
  check(geom.m >= 3 && geom.n >= 3, "kernel maps need kernel extents of at least 3");
  check(hr.height() % geom.scale == 0 && hr.width() % geom.scale == 0,
        "HR extents must be divisible by the scale");

  FieldPrediction fp = pipe.fields(hr);
  const std::size_t lh = fp.kernels.k.extent(0), lw = fp.kernels.k.extent(1);
  const std::size_t ci = geom.m / 2, cj = geom.n / 2;

  fs::create_directories(out_dir);
  std::vector<std::string> files;

  double peak = 0.0;
  for (std::size_t x = 0; x < lh; ++x)
    for (std::size_t y = 0; y < lw; ++y)
      for (std::size_t i = ci - 1; i <= ci + 1; ++i)
        for (std::size_t j = cj - 1; j <= cj + 1; ++j)
          peak = std::max(peak, fp.kernels.k.at(x, y, i, j));
  const double inv_peak = peak > 0.0 ? 1.0 / peak : 0.0;

  for (std::size_t i = ci - 1; i <= ci + 1; ++i)
    for (std::size_t j = cj - 1; j <= cj + 1; ++j) {
      Image map = Image::zeros(lh, lw, 1, ColorSpace::Y);
      for (std::size_t x = 0; x < lh; ++x)
        for (std::size_t y = 0; y < lw; ++y)
          map.at(x, y, 0) = std::clamp(fp.kernels.k.at(x, y, i, j) * inv_peak, 0.0, 1.0);
      const std::string name =
          stem + "_kernel_" + std::to_string(i) + "_" + std::to_string(j) + ".png";
      const std::string path = (fs::path(out_dir) / name).string();
      save_png(map, path);
      files.push_back(path);
    }

  const double cap = ckpt.topology.offset_cap;
  Image omap = Image::zeros(lh, lw, 3, ColorSpace::RGB);
  for (std::size_t x = 0; x < lh; ++x)
    for (std::size_t y = 0; y < lw; ++y) {
      const double dx = fp.offsets.dx.at(x, y, ci, cj);
      const double dy = fp.offsets.dy.at(x, y, ci, cj);
      const double r = std::hypot(dx, dy);
      const double hue =
          (std::atan2(dy, dx) + std::numbers::pi) / (2.0 * std::numbers::pi);
      const double sat = cap > 0.0 ? std::min(1.0, r / cap) : 0.0;
      const std::array<double, 3> rgb = hsv_to_rgb(std::min(hue, 0.999999), sat, 1.0);
      for (std::size_t c = 0; c < 3; ++c) omap.at(x, y, c) = rgb[c];
    }
  const std::string opath = (fs::path(out_dir) / (stem + "_offsets.png")).string();
  save_png(omap, opath);
  files.push_back(opath);
  return files;
}

}  // namespace car
