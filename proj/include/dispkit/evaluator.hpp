#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dispkit/data.hpp"
#include "dispkit/sample.hpp"

namespace dispkit {

/// The standard depth statistics plus the KITTI disparity outlier rate.
/// Accuracies use strict `< threshold` comparisons at 1.25, 1.25^2, 1.25^3.
struct MetricReport {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rms = 0.0;
  double log_rms = 0.0;   // natural log
  double log10 = 0.0;
  double d1_all = 0.0;    // percent
  double acc_1 = 0.0;
  double acc_2 = 0.0;
  double acc_3 = 0.0;
  long long n_valid_pixels = 0;
};

/// z(x) = F * B / max(d(x), min_disp); the floor guards division by zero.
ScalarField disparity_to_depth(const DisparityField& d, const CameraRig& rig,
                               double min_disp = 1e-3);

/// Half-open pixel rectangle: rows [row0, row1), cols [col0, col1).
struct CropRect {
  int row0 = 0, row1 = 0, col0 = 0, col1 = 0;

  int height() const { return row1 - row0; }
  int width() const { return col1 - col0; }
};

/// The fixed evaluation crop used on KITTI depth: roughly the lower 58% of
/// rows and central 93% of columns. Fractions are configurable; bounds are
/// floored.
CropRect garg_crop(int height, int width, double row_lo = 0.40810811, double row_hi = 0.99189189,
                   double col_lo = 0.03594771, double col_hi = 0.96405229);

ScalarField apply_crop(const ScalarField& field, const CropRect& crop);
Mask apply_crop(const Mask& mask, const CropRect& crop);

/// Depth metrics over pixels with gt > 0 (and mask nonzero when given), with
/// prediction and ground truth clamped to [min_depth, cap] first. The d1_all
/// field of the result is left at zero; it is a disparity metric.
MetricReport compute_metrics(const ScalarField& z, const ScalarField& z_gt, double cap,
                             const Mask* valid = nullptr, double min_depth = 1e-3);

/// Percentage of valid pixels (gt > 0, mask nonzero when given) whose
/// disparity error exceeds both 3 pixels and 5% of the true disparity.
double d1_all(const ScalarField& d, const ScalarField& d_gt, const Mask* valid = nullptr);

/// Bilinear resize of a disparity field with values rescaled by the width
/// ratio, preserving the pixels-of-shift meaning at the new resolution.
DisparityField resize_disparity(const DisparityField& d, int out_height, int out_width);

enum class Protocol { kEigen80, kEigen50, kKitti2015, kMake3d70 };

Protocol parse_protocol(const std::string& name);
const char* to_string(Protocol protocol);

struct EvalRecordResult {
  std::string id;
  MetricReport report;
  std::string error;  // non-empty when this record failed; report is then unset

  bool ok() const { return error.empty(); }
};

struct EvalSummary {
  Protocol protocol = Protocol::kEigen80;
  MetricReport aggregate;        // mean over successful records
  std::vector<EvalRecordResult> records;
  int n_failed = 0;
};

/// Predict a left-view disparity for one sample; `record` identifies it (for
/// prediction directories keyed by file name).
using PredictionFn = std::function<DisparityField(const StereoSample&, const SampleRecord&)>;

/// Evaluate every manifest record under a protocol:
///   eigen-80 / eigen-50: garg crop, depth metrics capped at 80 / 50 m
///   kitti2015:           D1-all on disparities, no crop
///   make3d-70:           1707x852 center crop, depth metrics capped at 70 m
///                        (abs_rel, sq_rel, rms, log10 are the reported set)
/// Records with missing ground truth fail individually; the run continues.
EvalSummary evaluate_dataset(const DatasetManifest& manifest, const PredictionFn& predict,
                             Protocol protocol);

/// Write <out_dir>/aggregate.txt and <out_dir>/per_image.csv.
void write_reports(const EvalSummary& summary, const std::string& out_dir,
                   const std::string& config_hash = "");

}  // namespace dispkit
