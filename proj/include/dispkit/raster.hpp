#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dispkit {

/// Raised when an operation receives arguments that violate its contract
/// (shape mismatches, out-of-range values, wrong side tags, ...).
class InvalidInputError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for unusable run configurations (as opposed to bad per-call inputs).
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Raised when on-disk data cannot be loaded; the message names the offending path.
class IngestionError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Raised for malformed text inputs (calibration files, scene descriptions, manifests).
class ParseError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Raised by the trainer when a loss or gradient stops being finite.
class DivergenceError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline void check_input(bool condition, const std::string& message) {
  if (!condition) throw InvalidInputError(message);
}

/// Which camera of the rig a raster belongs to. Left is the reference view.
enum class Side { kLeft = 0, kRight = 1 };

inline Side opposite(Side s) { return s == Side::kLeft ? Side::kRight : Side::kLeft; }
inline const char* to_string(Side s) { return s == Side::kLeft ? "left" : "right"; }

/// Dense H x W grid of doubles, row-major.
struct ScalarField {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  ScalarField() = default;
  ScalarField(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {
    check_input(h >= 1 && w >= 1, "ScalarField: dimensions must be positive, got " +
                                      std::to_string(h) + "x" + std::to_string(w));
  }

  double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const ScalarField& o) const { return height == o.height && width == o.width; }
};

/// Interleaved H x W x C raster of doubles in [0, 1] for photographs
/// (the range is enforced at ingestion and augmentation, not per element access).
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, fill) {
    check_input(h >= 1 && w >= 1 && c >= 1, "Image: dimensions must be positive, got " +
                                                std::to_string(h) + "x" + std::to_string(w) + "x" +
                                                std::to_string(c));
  }

  double& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::size_t size() const { return data.size(); }
  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }

  ScalarField channel_mean() const {
    ScalarField out(height, width);
    const double inv = 1.0 / channels;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        double s = 0.0;
        for (int c = 0; c < channels; ++c) s += at(y, x, c);
        out.at(y, x) = s * inv;
      }
    return out;
  }
};

/// Per-pixel horizontal disparity in pixels of its own resolution, tagged with
/// the view it lives in. Non-negative for a rectified rig.
struct DisparityField {
  ScalarField field;
  Side side = Side::kLeft;

  DisparityField() = default;
  DisparityField(int h, int w, Side s, double fill = 0.0) : field(h, w, fill), side(s) {}
  DisparityField(ScalarField f, Side s) : field(std::move(f)), side(s) {}

  int height() const { return field.height; }
  int width() const { return field.width; }
  double& at(int y, int x) { return field.at(y, x); }
  double at(int y, int x) const { return field.at(y, x); }
};

/// Boolean raster (nonzero = set).
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w, bool fill = false)
      : height(h), width(w),
        data(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill ? 1 : 0) {
    check_input(h >= 1 && w >= 1, "Mask: dimensions must be positive");
  }

  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : data) n += v ? 1 : 0;
    return n;
  }
};

/// Multi-scale disparity predictions: scales[r][side], r = 0 is the finest
/// (input) resolution and each coarser level halves both dimensions.
struct DisparityPyramid {
  std::vector<std::array<DisparityField, 2>> scales;

  int levels() const { return static_cast<int>(scales.size()); }
  const DisparityField& at(int scale, Side side) const {
    return scales[scale][static_cast<int>(side)];
  }
  DisparityField& at(int scale, Side side) { return scales[scale][static_cast<int>(side)]; }
};

/// Gradients of a scalar objective with respect to every pyramid disparity
/// field, shaped like the pyramid: scales[r][side].
struct PyramidGradients {
  std::vector<std::array<ScalarField, 2>> scales;
};

}  // namespace dispkit
