#pragma once

#include "dfrf/dataio/image.hpp"

namespace dfrf::dataio {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / mse) over all channels, capped at 99 dB when mse < 1e-10.
double psnr(const Image& img, const Image& ref);

/// Mean structural similarity: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, over the valid (unpadded) region, averaged
/// over channels. Images must be at least 11x11.
double ssim(const Image& img, const Image& ref);

}  // namespace dfrf::dataio
