#pragma once

#include <string>

#include "car/image.hpp"

namespace car {

/// Loads an 8-bit grayscale or RGB PNG into [0, 1] (value = byte / 255).
/// Alpha channels are rejected unless strip_alpha is set; palette images and
/// other bit depths are rejected with a descriptive error.
Image load_png(const std::string& path, bool strip_alpha = false);

/// Saves a 1- or 3-channel image as an 8-bit PNG; byte = round(clamp(v, 0, 1) * 255),
/// halves away from zero. Writes to a temporary file and renames, so a failed
/// save leaves no partial output behind.
void save_png(const Image& img, const std::string& path);

}  // namespace car
