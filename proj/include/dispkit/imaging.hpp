#pragma once

#include "dispkit/raster.hpp"

namespace dispkit {

/// Forward-difference horizontal gradient: out(y, x) = f(y, x+1) - f(y, x),
/// with the last column set to zero. Requires width >= 2.
ScalarField grad_x(const ScalarField& f);

/// Forward-difference vertical gradient; last row zero. Requires height >= 2.
ScalarField grad_y(const ScalarField& f);

/// 5-point Laplacian of the channel-mean intensity with replicated borders.
/// Requires height >= 3 and width >= 3.
ScalarField laplacian(const Image& img);

/// Separable Gaussian blur with replicated borders; radius = ceil(3*sigma).
/// sigma must be positive.
Image gaussian_blur(const Image& img, double sigma);

/// 2x2 box average; both dimensions must be even.
Image downsample_half(const Image& img);

/// Bilinear resample to an arbitrary resolution (align-corners-free, border
/// clamped). Used for rescaling predictions to ground-truth rasters.
ScalarField resize_bilinear(const ScalarField& f, int out_height, int out_width);

/// Nearest-neighbor resample to an arbitrary resolution.
ScalarField resize_nearest(const ScalarField& f, int out_height, int out_width);

}  // namespace dispkit
