#pragma once

#include "car/image.hpp"

namespace car {

/// BT.601 limited-range luma of one RGB triple, all values in [0, 1]:
/// Y = (65.481 R + 128.553 G + 24.966 B + 16) / 255.
double luma601(double r, double g, double b);

/// Converts an RGB image to its single-channel luma image. Y input passes through.
Image rgb_to_y(const Image& img);

}  // namespace car
