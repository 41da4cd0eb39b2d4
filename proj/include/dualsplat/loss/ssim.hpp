#pragma once

#include "dualsplat/core/types.hpp"

namespace dualsplat {

/// Mean SSIM over pixels and channels. 11x11 Gaussian window (sigma 1.5),
/// stabilizers C1=(0.01)^2, C2=(0.03)^2 on [0,1] images, reflected borders.
/// When d_a is given it receives d(mean SSIM)/d(a).
double ssim(const ImageD& a, const ImageD& b, ImageD* d_a = nullptr);

}  // namespace dualsplat
