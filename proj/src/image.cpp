#include "car/image.hpp"

namespace car {

Image::Image(Tensor t, ColorSpace space, ValueRange range)
    : t_(std::move(t)), space_(space), range_(range) {
  check(t_.rank() == 3, "Image: tensor must be H x W x C");
  const std::size_t c = t_.extent(2);
  check(c == 1 || c == 3, "Image: channel count must be 1 or 3");
  check(range_.lo < range_.hi, "Image: empty value range");
  if (space_ == ColorSpace::Y) check(c == 1, "Image: Y images are single-channel");
}

Image Image::zeros(std::size_t h, std::size_t w, std::size_t c, ColorSpace space) {
  return Image(Tensor::zeros({h, w, c}), space);
}

Image crop_patch(const Image& img, std::size_t row0, std::size_t col0, std::size_t h,
                 std::size_t w) {
  check(h > 0 && w > 0, "crop_patch: empty patch");
  check(row0 + h <= img.height() && col0 + w <= img.width(), "crop_patch: patch out of bounds");
  Image out(Tensor::zeros({h, w, img.channels()}), img.space(), img.range());
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t ch = 0; ch < img.channels(); ++ch)
        out.at(r, c, ch) = img.at(row0 + r, col0 + c, ch);
  return out;
}

Image center_crop_divisible(const Image& img, std::size_t multiple) {
  check(multiple > 0, "center_crop_divisible: zero multiple");
  const std::size_t h = img.height() - img.height() % multiple;
  const std::size_t w = img.width() - img.width() % multiple;
  check(h > 0 && w > 0, "center_crop_divisible: image smaller than the multiple");
  if (h == img.height() && w == img.width()) return img;
  return crop_patch(img, (img.height() - h) / 2, (img.width() - w) / 2, h, w);
}

Image flip(const Image& img, FlipAxis axis) {
  const std::size_t h = img.height(), w = img.width(), cc = img.channels();
  Image out(Tensor::zeros({h, w, cc}), img.space(), img.range());
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t sr = axis == FlipAxis::Vertical ? h - 1 - r : r;
      const std::size_t sc = axis == FlipAxis::Horizontal ? w - 1 - c : c;
      for (std::size_t ch = 0; ch < cc; ++ch) out.at(r, c, ch) = img.at(sr, sc, ch);
    }
  }
  return out;
}

}  // namespace car
