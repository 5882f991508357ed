#pragma once

#include "emscat/scene.hpp"

namespace emscat::metrics {

// sqrt(sum |est - truth|^2) / sqrt(sum |truth|^2), complex moduli.
double rrmse(const scene::PermittivityMap& est, const scene::PermittivityMap& truth);

// 10*log10(MAX^2 / MSE) over the real parts, MAX = max Re(truth);
// capped at 99 dB when MSE < 1e-20.
double psnr(const scene::PermittivityMap& est, const scene::PermittivityMap& truth);

// Mean local SSIM over the real parts: 11x11 Gaussian window (sigma 1.5),
// K1 = 0.01, K2 = 0.03, dynamic range from the truth image (floor 1e-6),
// symmetric-reflection padding.
double ssim(const scene::PermittivityMap& est, const scene::PermittivityMap& truth);

// ssim with an externally fixed dynamic range (symmetric in its two images).
double ssim_with_range(const scene::PermittivityMap& a, const scene::PermittivityMap& b,
                       double dynamic_range);

}  // namespace emscat::metrics
