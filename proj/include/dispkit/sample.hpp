#pragma once

#include <optional>

#include "dispkit/raster.hpp"

namespace dispkit {

/// Rectified stereo rig intrinsics: focal length in pixels, baseline in meters.
/// depth = focal_length * baseline / disparity.
struct CameraRig {
  double focal_length = 0.0;
  double baseline = 0.0;

  void validate() const {
    check_input(focal_length > 0.0, "CameraRig: focal length must be positive, got " +
                                        std::to_string(focal_length));
    check_input(baseline > 0.0,
                "CameraRig: baseline must be positive, got " + std::to_string(baseline));
  }
};

/// One rectified stereo pair plus whatever ground truth accompanies it.
/// Ground-truth rasters are in the left view; synthetic scenes additionally
/// carry the right-view disparity and per-side co-visibility masks.
struct StereoSample {
  Image left;
  Image right;
  CameraRig rig;

  std::optional<ScalarField> gt_depth;            // meters
  std::optional<ScalarField> gt_disparity;        // pixels, left view
  std::optional<ScalarField> gt_disparity_right;  // pixels, right view
  std::optional<Mask> covis_left;   // left-view pixels visible in both views
  std::optional<Mask> covis_right;  // right-view pixels visible in both views

  void validate() const {
    check_input(left.height >= 1 && left.width >= 1, "StereoSample: empty left image");
    check_input(left.same_shape(right), "StereoSample: left is " + std::to_string(left.height) +
                                            "x" + std::to_string(left.width) + "x" +
                                            std::to_string(left.channels) +
                                            " but right is " + std::to_string(right.height) + "x" +
                                            std::to_string(right.width) + "x" +
                                            std::to_string(right.channels));
    rig.validate();
  }
};

}  // namespace dispkit
