#pragma once

#include <cstddef>

#include "car/tensor.hpp"

namespace car {

enum class ColorSpace { RGB, Y };

/// Inclusive value range of an image; the canonical working range is [0, 1].
struct ValueRange {
  double lo = 0.0;
  double hi = 1.0;
};

/// H x W x C float image (C = 1 or 3), row-major, values nominally in range.
class Image {
 public:
  Image() = default;
  Image(Tensor t, ColorSpace space, ValueRange range = {});

  static Image zeros(std::size_t h, std::size_t w, std::size_t c, ColorSpace space);

  std::size_t height() const { return t_.extent(0); }
  std::size_t width() const { return t_.extent(1); }
  std::size_t channels() const { return t_.extent(2); }

  ColorSpace space() const { return space_; }
  ValueRange range() const { return range_; }

  double& at(std::size_t row, std::size_t col, std::size_t ch) { return t_.at(row, col, ch); }
  double at(std::size_t row, std::size_t col, std::size_t ch) const { return t_.at(row, col, ch); }

  Tensor& tensor() { return t_; }
  const Tensor& tensor() const { return t_; }

 private:
  Tensor t_;
  ColorSpace space_ = ColorSpace::RGB;
  ValueRange range_;
};

/// Extracts the h x w patch whose top-left pixel is (row0, col0). Throws if out of bounds.
Image crop_patch(const Image& img, std::size_t row0, std::size_t col0, std::size_t h,
                 std::size_t w);

/// Largest centered crop whose extents are divisible by `multiple`; returns
/// the input unchanged when it already divides evenly.
Image center_crop_divisible(const Image& img, std::size_t multiple);

enum class FlipAxis { Horizontal, Vertical };

/// Horizontal flip reverses columns (mirror left/right); vertical flip reverses rows.
Image flip(const Image& img, FlipAxis axis);

}  // namespace car
