#pragma once

#include <cstddef>

#include "car/image.hpp"

namespace car {

/// Catmull-Rom cubic kernel value (Keys kernel with a = -0.5).
double cubic_kernel(double x);

/// Separable cubic upscale by an integer factor with clamp-to-edge taps.
/// Output pixel X samples the source at (X + 0.5) / scale - 0.5 on each axis.
/// The operator is linear in the input.
Image bicubic_upscale(const Image& lr, std::size_t scale);

/// Exact adjoint of bicubic_upscale (the transpose of its linear map):
/// scatters grad_hr back onto a {lr_h, lr_w, C} gradient tensor.
Tensor bicubic_upscale_backward(const Tensor& grad_hr, std::size_t lr_h, std::size_t lr_w,
                                std::size_t scale);

/// Anti-aliased cubic downscale by an integer factor (kernel stretched by the
/// scale, weights renormalized per output pixel). Reference operator only; no
/// backward.
Image bicubic_downscale(const Image& hr, std::size_t scale);

}  // namespace car
