#pragma once

#include "scz/image.hpp"

namespace scz {

// Sampled isotropic Gaussian, renormalized to sum to 1.
// Errc::invalid_sigma when sigma <= 0; Errc::bad_config when radius < 1.
Kernel gaussian_kernel(double sigma, int radius);

// Sampled Laplacian of Gaussian, ((r^2 - 2 s^2) / s^4) exp(-r^2 / 2 s^2),
// divided by the Gaussian's sampled sum, then mean-subtracted so the weights
// sum to zero (no DC response).
Kernel log_kernel(double sigma, int radius);

// True convolution (kernel flipped). Output has the input's dimensions;
// samples outside the raster follow `border`. Errc::empty_image on empty input.
FilterMap convolve(const Image& img, const Kernel& kernel, BorderPolicy border);
FilterMap convolve(const FilterMap& map, const Kernel& kernel, BorderPolicy border);

enum class LogPath {
  analytic,   // I * LoG kernel
  two_stage,  // 5-point discrete Laplacian of (I * G)
};

FilterMap laplacian_of_gaussian(const Image& img, double sigma, int radius, BorderPolicy border,
                                LogPath path = LogPath::analytic);

// Global min-max rescale to [0,1]; a constant map becomes all 0.5.
Image normalize_filtermap(const FilterMap& map);

}  // namespace scz
