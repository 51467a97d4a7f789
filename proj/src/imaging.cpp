#include "dispkit/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace dispkit {

ScalarField grad_x(const ScalarField& f) {
  check_input(f.width >= 2, "grad_x: width must be >= 2, got " + std::to_string(f.width));
  ScalarField out(f.height, f.width, 0.0);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x + 1 < f.width; ++x) out.at(y, x) = f.at(y, x + 1) - f.at(y, x);
  return out;
}

ScalarField grad_y(const ScalarField& f) {
  check_input(f.height >= 2, "grad_y: height must be >= 2, got " + std::to_string(f.height));
  ScalarField out(f.height, f.width, 0.0);
  for (int y = 0; y + 1 < f.height; ++y)
    for (int x = 0; x < f.width; ++x) out.at(y, x) = f.at(y + 1, x) - f.at(y, x);
  return out;
}

ScalarField laplacian(const Image& img) {
  check_input(img.height >= 3 && img.width >= 3,
              "laplacian: image must be at least 3x3, got " + std::to_string(img.height) + "x" +
                  std::to_string(img.width));
  const ScalarField f = img.channel_mean();
  const int h = f.height, w = f.width;
  auto clamped = [&](int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return f.at(y, x);
  };
  ScalarField out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out.at(y, x) = clamped(y - 1, x) + clamped(y + 1, x) + clamped(y, x - 1) +
                     clamped(y, x + 1) - 4.0 * f.at(y, x);
  return out;
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
    k[i + radius] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

}  // namespace

Image gaussian_blur(const Image& img, double sigma) {
  check_input(sigma > 0.0, "gaussian_blur: sigma must be positive, got " + std::to_string(sigma));
  const std::vector<double> k = gaussian_kernel(sigma);
  const int radius = (static_cast<int>(k.size()) - 1) / 2;
  const int h = img.height, w = img.width, c = img.channels;

  Image tmp(h, w, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (int i = -radius; i <= radius; ++i)
          s += k[i + radius] * img.at(y, std::clamp(x + i, 0, w - 1), ch);
        tmp.at(y, x, ch) = s;
      }

  Image out(h, w, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (int i = -radius; i <= radius; ++i)
          s += k[i + radius] * tmp.at(std::clamp(y + i, 0, h - 1), x, ch);
        out.at(y, x, ch) = s;
      }
  return out;
}

Image downsample_half(const Image& img) {
  check_input(img.height % 2 == 0 && img.width % 2 == 0,
              "downsample_half: dimensions must be even, got " + std::to_string(img.height) + "x" +
                  std::to_string(img.width));
  Image out(img.height / 2, img.width / 2, img.channels);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        out.at(y, x, c) = 0.25 * (img.at(2 * y, 2 * x, c) + img.at(2 * y, 2 * x + 1, c) +
                                  img.at(2 * y + 1, 2 * x, c) + img.at(2 * y + 1, 2 * x + 1, c));
  return out;
}

ScalarField resize_bilinear(const ScalarField& f, int out_height, int out_width) {
  check_input(out_height >= 1 && out_width >= 1, "resize_bilinear: output must be non-empty");
  ScalarField out(out_height, out_width);
  const double sy = static_cast<double>(f.height) / out_height;
  const double sx = static_cast<double>(f.width) / out_width;
  for (int y = 0; y < out_height; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(f.height - 1));
    const int y0 = std::min(static_cast<int>(fy), std::max(f.height - 2, 0));
    const double wy = fy - y0;
    for (int x = 0; x < out_width; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(f.width - 1));
      const int x0 = std::min(static_cast<int>(fx), std::max(f.width - 2, 0));
      const double wx = fx - x0;
      const int y1 = std::min(y0 + 1, f.height - 1);
      const int x1 = std::min(x0 + 1, f.width - 1);
      out.at(y, x) = (1.0 - wy) * ((1.0 - wx) * f.at(y0, x0) + wx * f.at(y0, x1)) +
                     wy * ((1.0 - wx) * f.at(y1, x0) + wx * f.at(y1, x1));
    }
  }
  return out;
}

ScalarField resize_nearest(const ScalarField& f, int out_height, int out_width) {
  check_input(out_height >= 1 && out_width >= 1, "resize_nearest: output must be non-empty");
  ScalarField out(out_height, out_width);
  const double sy = static_cast<double>(f.height) / out_height;
  const double sx = static_cast<double>(f.width) / out_width;
  for (int y = 0; y < out_height; ++y) {
    const int ys = std::min(static_cast<int>((y + 0.5) * sy), f.height - 1);
    for (int x = 0; x < out_width; ++x) {
      const int xs = std::min(static_cast<int>((x + 0.5) * sx), f.width - 1);
      out.at(y, x) = f.at(ys, xs);
    }
  }
  return out;
}

}  // namespace dispkit
