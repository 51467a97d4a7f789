#pragma once

#include <utility>

#include "dispkit/raster.hpp"

namespace dispkit {

/// Sampling direction for a view's own disparity: the left view reconstructs
/// itself from the right view at x - d, the right view from the left at x + d.
inline int sample_direction(Side side) { return side == Side::kLeft ? -1 : +1; }

/// Horizontal bilinear resampling: out(y, x) = src(y, x + direction * disp(y, x)),
/// linearly interpolated between the two straddling columns and clamped to the
/// image border. direction must be -1 or +1; src and disp must share a shape.
ScalarField horizontal_resample(const ScalarField& src, const ScalarField& disp, int direction);
Image horizontal_resample(const Image& src, const ScalarField& disp, int direction);

/// Backward pass of horizontal_resample. Accumulates (does not overwrite) into
/// grad_src and grad_disp; either may be null to skip. The disparity gradient
/// is zero wherever the sampling coordinate was clamped to the border.
void horizontal_resample_backward(const ScalarField& src, const ScalarField& disp, int direction,
                                  const ScalarField& grad_out, ScalarField* grad_src,
                                  ScalarField* grad_disp);
void horizontal_resample_backward(const Image& src, const ScalarField& disp, int direction,
                                  const Image& grad_out, Image* grad_src, ScalarField* grad_disp);

/// Reconstruct both views from the opposite ones: first = left rebuilt from
/// right via d_left, second = right rebuilt from left via d_right.
std::pair<Image, Image> reconstruct_images(const Image& left, const Image& right,
                                           const DisparityField& d_left,
                                           const DisparityField& d_right);

/// Transfer the counterpart's disparity into its own frame through d_self:
/// for a left d_self, out(x) = d_other(x - d_self(x)); mirrored for right.
/// The result keeps d_self's side.
DisparityField project_disparity(const DisparityField& d_self, const DisparityField& d_other);

/// One side of the bilateral cycle: project the counterpart through d_self,
/// then resample that projection through d_self again, landing back in
/// d_self's frame. `projected` is the intermediate (counterpart frame view of
/// d_self's side), `reconstructed` is the cycled estimate compared against
/// d_self by the consistency loss.
struct CyclicReconstruction {
  DisparityField projected;
  DisparityField reconstructed;
};

CyclicReconstruction cyclic_reconstruct(const DisparityField& d_self, const DisparityField& d_other);

/// Backward pass of cyclic_reconstruct: given the gradient with respect to
/// `reconstructed`, accumulate gradients into both source fields. The chain
/// through the warp coordinates and through the resampled values is included.
void cyclic_reconstruct_backward(const DisparityField& d_self, const DisparityField& d_other,
                                 const ScalarField& grad_reconstructed, ScalarField* grad_self,
                                 ScalarField* grad_other);

}  // namespace dispkit
