#pragma once

#include <vector>

#include "salcal/tensor.hpp"

namespace salcal {

// Normalized 1-D Gaussian taps, `size` odd.
std::vector<double> gaussian_kernel(int size, double sigma);

// Separable Gaussian blur of an [H, W, C] image, edge-replicated borders.
Tensor gaussian_blur(const Tensor& image, int size, double sigma);

// Bicubic resize (Keys, a = -0.5) with pixel-center alignment and replicated
// borders. No clipping.
Image2D resize_bicubic(const Image2D& source, Index height, Index width);

// sRGB (D65) to CIE Lab, per pixel of an [H, W, 3] image in [0, 1]. Single
// channel images map to l = 100 * intensity, a = b = 0. Returns [H, W, 3].
Tensor to_lab(const Tensor& image);

// [H, W, C] -> [1, H, W, C].
Tensor as_batch(const Tensor& image);

}  // namespace salcal
