#include "dispkit/warp.hpp"

#include <algorithm>
#include <cmath>

namespace dispkit {

namespace {

struct TapCoord {
  int x0;        // left support column
  double frac;   // interpolation weight of x0 + 1
  bool clamped;  // sampling coordinate fell outside [0, width-1]
};

inline TapCoord tap(double x_star, int width) {
  TapCoord t;
  t.clamped = x_star < 0.0 || x_star > static_cast<double>(width - 1);
  const double xs = std::clamp(x_star, 0.0, static_cast<double>(width - 1));
  t.x0 = std::min(static_cast<int>(xs), width - 2);
  t.frac = xs - t.x0;
  return t;
}

void check_resample_args(int src_h, int src_w, const ScalarField& disp, int direction,
                         const char* op) {
  check_input(direction == -1 || direction == 1,
              std::string(op) + ": direction must be -1 or +1, got " + std::to_string(direction));
  check_input(src_w >= 2, std::string(op) + ": width must be >= 2, got " + std::to_string(src_w));
  check_input(disp.height == src_h && disp.width == src_w,
              std::string(op) + ": disparity is " + std::to_string(disp.height) + "x" +
                  std::to_string(disp.width) + " but source is " + std::to_string(src_h) + "x" +
                  std::to_string(src_w));
}

}  // namespace

ScalarField horizontal_resample(const ScalarField& src, const ScalarField& disp, int direction) {
  check_resample_args(src.height, src.width, disp, direction, "horizontal_resample");
  ScalarField out(src.height, src.width);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      const TapCoord t = tap(x + direction * disp.at(y, x), src.width);
      out.at(y, x) = (1.0 - t.frac) * src.at(y, t.x0) + t.frac * src.at(y, t.x0 + 1);
    }
  return out;
}

Image horizontal_resample(const Image& src, const ScalarField& disp, int direction) {
  check_resample_args(src.height, src.width, disp, direction, "horizontal_resample");
  Image out(src.height, src.width, src.channels);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      const TapCoord t = tap(x + direction * disp.at(y, x), src.width);
      for (int c = 0; c < src.channels; ++c)
        out.at(y, x, c) = (1.0 - t.frac) * src.at(y, t.x0, c) + t.frac * src.at(y, t.x0 + 1, c);
    }
  return out;
}

void horizontal_resample_backward(const ScalarField& src, const ScalarField& disp, int direction,
                                  const ScalarField& grad_out, ScalarField* grad_src,
                                  ScalarField* grad_disp) {
  check_resample_args(src.height, src.width, disp, direction, "horizontal_resample_backward");
  check_input(grad_out.same_shape(src), "horizontal_resample_backward: grad shape mismatch");
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      const TapCoord t = tap(x + direction * disp.at(y, x), src.width);
      const double g = grad_out.at(y, x);
      if (grad_src != nullptr) {
        grad_src->at(y, t.x0) += (1.0 - t.frac) * g;
        grad_src->at(y, t.x0 + 1) += t.frac * g;
      }
      if (grad_disp != nullptr && !t.clamped)
        grad_disp->at(y, x) += direction * g * (src.at(y, t.x0 + 1) - src.at(y, t.x0));
    }
}

void horizontal_resample_backward(const Image& src, const ScalarField& disp, int direction,
                                  const Image& grad_out, Image* grad_src,
                                  ScalarField* grad_disp) {
  check_resample_args(src.height, src.width, disp, direction, "horizontal_resample_backward");
  check_input(grad_out.same_shape(src), "horizontal_resample_backward: grad shape mismatch");
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      const TapCoord t = tap(x + direction * disp.at(y, x), src.width);
      double slope_dot = 0.0;
      for (int c = 0; c < src.channels; ++c) {
        const double g = grad_out.at(y, x, c);
        if (grad_src != nullptr) {
          grad_src->at(y, t.x0, c) += (1.0 - t.frac) * g;
          grad_src->at(y, t.x0 + 1, c) += t.frac * g;
        }
        slope_dot += g * (src.at(y, t.x0 + 1, c) - src.at(y, t.x0, c));
      }
      if (grad_disp != nullptr && !t.clamped) grad_disp->at(y, x) += direction * slope_dot;
    }
}

std::pair<Image, Image> reconstruct_images(const Image& left, const Image& right,
                                           const DisparityField& d_left,
                                           const DisparityField& d_right) {
  check_input(left.same_shape(right), "reconstruct_images: image shapes differ");
  check_input(d_left.side == Side::kLeft && d_right.side == Side::kRight,
              "reconstruct_images: disparity fields must be tagged (left, right)");
  return {horizontal_resample(right, d_left.field, sample_direction(Side::kLeft)),
          horizontal_resample(left, d_right.field, sample_direction(Side::kRight))};
}

DisparityField project_disparity(const DisparityField& d_self, const DisparityField& d_other) {
  check_input(d_self.side == opposite(d_other.side),
              "project_disparity: fields must come from opposite sides");
  return DisparityField(
      horizontal_resample(d_other.field, d_self.field, sample_direction(d_self.side)),
      d_self.side);
}

CyclicReconstruction cyclic_reconstruct(const DisparityField& d_self,
                                        const DisparityField& d_other) {
  check_input(d_self.side == opposite(d_other.side),
              "cyclic_reconstruct: fields must come from opposite sides");
  CyclicReconstruction r;
  r.projected = project_disparity(d_other, d_self);
  r.reconstructed = DisparityField(
      horizontal_resample(r.projected.field, d_self.field, sample_direction(d_self.side)),
      d_self.side);
  return r;
}

void cyclic_reconstruct_backward(const DisparityField& d_self, const DisparityField& d_other,
                                 const ScalarField& grad_reconstructed, ScalarField* grad_self,
                                 ScalarField* grad_other) {
  check_input(d_self.side == opposite(d_other.side),
              "cyclic_reconstruct_backward: fields must come from opposite sides");
  const DisparityField projected = project_disparity(d_other, d_self);

  // Outer warp: reconstructed = resample(projected, d_self).
  ScalarField grad_projected(projected.height(), projected.width(), 0.0);
  horizontal_resample_backward(projected.field, d_self.field, sample_direction(d_self.side),
                               grad_reconstructed, &grad_projected, grad_self);

  // Inner warp: projected = resample(d_self, d_other); d_self acts as the source.
  horizontal_resample_backward(d_self.field, d_other.field, sample_direction(d_other.side),
                               grad_projected, grad_self, grad_other);
}

}  // namespace dispkit
