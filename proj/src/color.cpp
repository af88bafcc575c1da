#include "car/color.hpp"

namespace car {

double luma601(double r, double g, double b) {
  return (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0;
}

Image rgb_to_y(const Image& img) {
  if (img.channels() == 1) return img;
  check(img.space() == ColorSpace::RGB, "rgb_to_y: expected an RGB image");
  const std::size_t h = img.height(), w = img.width();
  Image out(Tensor::zeros({h, w, 1}), ColorSpace::Y, img.range());
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      out.at(r, c, 0) = luma601(img.at(r, c, 0), img.at(r, c, 1), img.at(r, c, 2));
  return out;
}

}  // namespace car
