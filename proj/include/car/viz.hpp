#pragma once

#include <array>
#include <string>
#include <vector>

#include "car/checkpoint.hpp"
#include "car/image.hpp"

namespace car {

/// h, s in [0, 1); v in [0, 1]. s = 0 gives gray regardless of hue.
std::array<double, 3> hsv_to_rgb(double h, double s, double v);

/// Renders the predicted fields for one HR image: a grayscale map per central
/// 3x3 kernel tap (all nine normalized by their joint maximum) and one HSV map
/// of the centered-tap offsets (hue = direction, saturation = magnitude
/// relative to the offset cap). Returns the written file paths.
std::vector<std::string> write_viz(const Checkpoint& ckpt, const Image& hr,
                                   const std::string& out_dir, const std::string& stem);

}  // namespace car
