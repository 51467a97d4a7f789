#pragma once

#include <string>
#include <vector>

#include "dispkit/rng.hpp"
#include "dispkit/sample.hpp"

namespace dispkit {

/// One entry of a dataset manifest: a dataset root plus the relative path
/// "<sequence>/<frame>.png" identifying a stereo pair within it.
struct SampleRecord {
  std::string root;
  std::string relative;

  std::string id() const;  // relative path with '/' replaced by '_', no extension
};

struct DatasetManifest {
  std::string root;
  std::string split;
  std::vector<SampleRecord> records;
};

/// Read a manifest file: one relative sample path per line, blank lines and
/// '#' comments skipped. Paths may be listed with or without the .png suffix.
DatasetManifest load_manifest(const std::string& root, const std::string& manifest_path,
                              const std::string& split = "synthetic");

/// Parse a calibration file with lines "F=<pixels>" and "B=<meters>".
CameraRig parse_calibration(const std::string& path);

/// Load one stereo pair from the layout
///   <root>/<sequence>/image_left/<frame>.png   (and image_right/)
/// with optional ground truth alongside:
///   gt_depth/      16-bit, meters x256
///   gt_disparity/  and gt_disparity_right/, 16-bit, pixels x256
///   covis_left/    and covis_right/, nonzero = visible in both views
/// and the rig from <root>/<sequence>/calib.txt.
StereoSample load_sample(const SampleRecord& record);

/// Augmentation parameters drawn once per sample. `sample` consumes a fixed
/// number of rng draws so streams stay aligned regardless of the gates.
struct AugmentParams {
  bool flip = false;
  bool color = false;
  double gamma = 1.0;
  double brightness = 1.0;
  double channel_scale[3] = {1.0, 1.0, 1.0};

  static AugmentParams draw(SplitMix64& rng);
};

/// Apply training augmentation: an optional horizontal mirror that also swaps
/// the left/right roles, and an optional photometric change (gamma, then
/// brightness, then per-channel scale, clamped to [0, 1]) shared by both
/// images. Ground-truth fields are dropped from the result: augmented pairs
/// are for training only.
StereoSample augment(const StereoSample& sample, const AugmentParams& params);

/// One fronto-parallel textured rectangle of a synthetic scene, placed in the
/// left view. Coordinates and sizes are in pixels, depth in meters.
struct SceneLayer {
  int x = 0, y = 0;
  int width = 0, height = 0;
  double depth = 0.0;
  std::uint64_t texture_seed = 0;
};

/// A synthetic stereo scene: a full-frame background plane plus zero or more
/// foreground rectangles, all fronto-parallel so each maps to a constant
/// integer disparity d = F * B / depth.
struct SceneSpec {
  int width = 0, height = 0;
  CameraRig rig;
  double background_depth = 0.0;
  std::uint64_t background_seed = 0;
  std::vector<SceneLayer> layers;

  void validate() const;
};

/// Parse/serialize the scene text format: "key=value" lines for the globals
/// (width, height, focal, baseline, background_depth, background_seed) and one
/// "layer: x=.. y=.. w=.. h=.. depth=.. seed=.." line per rectangle.
SceneSpec parse_scene(const std::string& text);
SceneSpec load_scene(const std::string& path);
std::string serialize_scene(const SceneSpec& spec);

/// Render the scene into a stereo pair with exact per-side ground-truth
/// disparity, left-view depth, and per-side co-visibility masks. Occlusion is
/// resolved front-to-back; layers must have pairwise distinct disparities
/// wherever they overlap, and every disparity must be a whole number of
/// pixels so the two views sample the same texture lattice.
StereoSample synth_generate(const SceneSpec& spec);

/// A reproducible random scene: a background plane and 1..3 foreground
/// rectangles with distinct integer disparities, sized for desk-scale runs.
SceneSpec random_scene(int height, int width, const CameraRig& rig, std::uint64_t seed);

/// Materialize scenes into the on-disk dataset layout under `root` (one
/// sequence per scene) and write `root/manifest.txt` listing them.
void write_synthetic_dataset(const std::string& root, const std::vector<SceneSpec>& scenes);

}  // namespace dispkit
