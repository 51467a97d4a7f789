#pragma once

#include <string>

#include "dispkit/raster.hpp"

namespace dispkit {

/// Decode a PNG into [0, 1] values: grayscale files become one channel,
/// color files three (alpha is dropped, palettes expanded). 16-bit files are
/// scaled by 1/65535, 8-bit by 1/255.
Image read_image_png(const std::string& path);

/// Decode a 16-bit grayscale PNG as raw counts in [0, 65535]. Used for
/// ground-truth rasters that encode fixed-point values (x256 conventions).
ScalarField read_raw16_png(const std::string& path);

/// Write an image (1 or 3 channels, values clamped to [0, 1]) as 8-bit PNG.
void write_image_png(const std::string& path, const Image& img);

/// Write raw counts (clamped to [0, 65535], rounded) as 16-bit grayscale PNG.
void write_raw16_png(const std::string& path, const ScalarField& counts);

}  // namespace dispkit
