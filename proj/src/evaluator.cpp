#include "dispkit/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dispkit/imaging.hpp"

namespace dispkit {

ScalarField disparity_to_depth(const DisparityField& d, const CameraRig& rig, double min_disp) {
  rig.validate();
  check_input(min_disp > 0.0, "disparity_to_depth: min_disp must be positive");
  const double fb = rig.focal_length * rig.baseline;
  ScalarField z(d.height(), d.width());
  for (std::size_t i = 0; i < z.data.size(); ++i)
    z.data[i] = fb / std::max(d.field.data[i], min_disp);
  return z;
}

CropRect garg_crop(int height, int width, double row_lo, double row_hi, double col_lo,
                   double col_hi) {
  check_input(height >= 1 && width >= 1, "garg_crop: image size must be positive");
  check_input(0.0 <= row_lo && row_lo < row_hi && row_hi <= 1.0 && 0.0 <= col_lo &&
                  col_lo < col_hi && col_hi <= 1.0,
              "garg_crop: fractions must satisfy 0 <= lo < hi <= 1");
  CropRect crop;
  crop.row0 = static_cast<int>(std::floor(row_lo * height));
  crop.row1 = static_cast<int>(std::floor(row_hi * height));
  crop.col0 = static_cast<int>(std::floor(col_lo * width));
  crop.col1 = static_cast<int>(std::floor(col_hi * width));
  check_input(crop.row1 > crop.row0 && crop.col1 > crop.col0,
              "garg_crop: degenerate crop for " + std::to_string(height) + "x" +
                  std::to_string(width));
  return crop;
}

namespace {

void check_crop(int height, int width, const CropRect& crop, const char* what) {
  check_input(crop.row0 >= 0 && crop.row1 <= height && crop.col0 >= 0 && crop.col1 <= width &&
                  crop.height() >= 1 && crop.width() >= 1,
              std::string(what) + ": crop outside the field");
}

}  // namespace

ScalarField apply_crop(const ScalarField& field, const CropRect& crop) {
  check_crop(field.height, field.width, crop, "apply_crop");
  ScalarField out(crop.height(), crop.width());
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.at(y, x) = field.at(crop.row0 + y, crop.col0 + x);
  return out;
}

Mask apply_crop(const Mask& mask, const CropRect& crop) {
  check_crop(mask.height, mask.width, crop, "apply_crop");
  Mask out(crop.height(), crop.width());
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.at(y, x) = mask.at(crop.row0 + y, crop.col0 + x);
  return out;
}

MetricReport compute_metrics(const ScalarField& z, const ScalarField& z_gt, double cap,
                             const Mask* valid, double min_depth) {
  check_input(z.same_shape(z_gt), "compute_metrics: prediction and ground truth shapes differ");
  check_input(valid == nullptr || (valid->height == z.height && valid->width == z.width),
              "compute_metrics: mask shape differs");
  check_input(min_depth > 0.0 && cap > min_depth,
              "compute_metrics: need 0 < min_depth < cap");

  MetricReport r;
  for (std::size_t i = 0; i < z.data.size(); ++i) {
    if (z_gt.data[i] <= 0.0) continue;
    if (valid != nullptr && valid->data[i] == 0) continue;
    const double pred = std::clamp(z.data[i], min_depth, cap);
    const double gt = std::clamp(z_gt.data[i], min_depth, cap);
    const double diff = pred - gt;
    r.abs_rel += std::abs(diff) / gt;
    r.sq_rel += diff * diff / gt;
    r.rms += diff * diff;
    const double log_diff = std::log(pred) - std::log(gt);
    r.log_rms += log_diff * log_diff;
    r.log10 += std::abs(std::log10(pred) - std::log10(gt));
    const double ratio = std::max(pred / gt, gt / pred);
    r.acc_1 += ratio < 1.25 ? 1.0 : 0.0;
    r.acc_2 += ratio < 1.25 * 1.25 ? 1.0 : 0.0;
    r.acc_3 += ratio < 1.25 * 1.25 * 1.25 ? 1.0 : 0.0;
    ++r.n_valid_pixels;
  }
  check_input(r.n_valid_pixels > 0, "compute_metrics: no valid pixels");
  const double inv = 1.0 / static_cast<double>(r.n_valid_pixels);
  r.abs_rel *= inv;
  r.sq_rel *= inv;
  r.rms = std::sqrt(r.rms * inv);
  r.log_rms = std::sqrt(r.log_rms * inv);
  r.log10 *= inv;
  r.acc_1 *= inv;
  r.acc_2 *= inv;
  r.acc_3 *= inv;
  return r;
}

double d1_all(const ScalarField& d, const ScalarField& d_gt, const Mask* valid) {
  check_input(d.same_shape(d_gt), "d1_all: prediction and ground truth shapes differ");
  check_input(valid == nullptr || (valid->height == d.height && valid->width == d.width),
              "d1_all: mask shape differs");
  long long n = 0, outliers = 0;
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    if (d_gt.data[i] <= 0.0) continue;
    if (valid != nullptr && valid->data[i] == 0) continue;
    const double err = std::abs(d.data[i] - d_gt.data[i]);
    if (err > 3.0 && err > 0.05 * d_gt.data[i]) ++outliers;
    ++n;
  }
  check_input(n > 0, "d1_all: no valid pixels");
  return 100.0 * static_cast<double>(outliers) / static_cast<double>(n);
}

DisparityField resize_disparity(const DisparityField& d, int out_height, int out_width) {
  check_input(out_height >= 1 && out_width >= 1, "resize_disparity: output size must be positive");
  DisparityField out;
  out.side = d.side;
  out.field = resize_bilinear(d.field, out_height, out_width);
  const double scale = static_cast<double>(out_width) / static_cast<double>(d.width());
  for (double& v : out.field.data) v *= scale;
  return out;
}

Protocol parse_protocol(const std::string& name) {
  if (name == "eigen-80") return Protocol::kEigen80;
  if (name == "eigen-50") return Protocol::kEigen50;
  if (name == "kitti2015") return Protocol::kKitti2015;
  if (name == "make3d-70") return Protocol::kMake3d70;
  throw InvalidInputError("unknown protocol '" + name +
                          "' (expected eigen-80, eigen-50, kitti2015, or make3d-70)");
}

const char* to_string(Protocol protocol) {
  switch (protocol) {
    case Protocol::kEigen80: return "eigen-80";
    case Protocol::kEigen50: return "eigen-50";
    case Protocol::kKitti2015: return "kitti2015";
    case Protocol::kMake3d70: return "make3d-70";
  }
  return "?";
}

namespace {

MetricReport evaluate_record(const StereoSample& sample, const DisparityField& pred,
                             Protocol protocol) {
  if (protocol == Protocol::kKitti2015) {
    if (!sample.gt_disparity.has_value())
      throw IngestionError("record has no gt_disparity for the kitti2015 protocol");
    const ScalarField& gt = *sample.gt_disparity;
    const DisparityField resized = resize_disparity(pred, gt.height, gt.width);
    MetricReport r;
    r.d1_all = d1_all(resized.field, gt);
    for (double v : gt.data) r.n_valid_pixels += v > 0.0 ? 1 : 0;
    return r;
  }

  if (!sample.gt_depth.has_value())
    throw IngestionError("record has no gt_depth for the " + std::string(to_string(protocol)) +
                         " protocol");
  const ScalarField& gt = *sample.gt_depth;
  const DisparityField resized = resize_disparity(pred, gt.height, gt.width);
  const ScalarField z = disparity_to_depth(resized, sample.rig);

  CropRect crop;
  double cap = 80.0;
  switch (protocol) {
    case Protocol::kEigen80:
      crop = garg_crop(gt.height, gt.width);
      cap = 80.0;
      break;
    case Protocol::kEigen50:
      crop = garg_crop(gt.height, gt.width);
      cap = 50.0;
      break;
    case Protocol::kMake3d70: {
      // Standard central 1707x852 evaluation crop, clipped on small images.
      const int ch = std::min(1707, gt.height);
      const int cw = std::min(852, gt.width);
      crop.row0 = (gt.height - ch) / 2;
      crop.row1 = crop.row0 + ch;
      crop.col0 = (gt.width - cw) / 2;
      crop.col1 = crop.col0 + cw;
      cap = 70.0;
      break;
    }
    case Protocol::kKitti2015: break;  // handled above
  }
  return compute_metrics(apply_crop(z, crop), apply_crop(gt, crop), cap);
}

}  // namespace

EvalSummary evaluate_dataset(const DatasetManifest& manifest, const PredictionFn& predict,
                             Protocol protocol) {
  check_input(!manifest.records.empty(), "evaluate_dataset: empty manifest");
  check_input(static_cast<bool>(predict), "evaluate_dataset: no prediction function");

  EvalSummary summary;
  summary.protocol = protocol;
  int ok = 0;
  for (const SampleRecord& record : manifest.records) {
    EvalRecordResult result;
    result.id = record.id();
    try {
      const StereoSample sample = load_sample(record);
      const DisparityField pred = predict(sample, record);
      check_input(pred.height() >= 1 && pred.width() >= 1,
                  "prediction for '" + record.relative + "' is empty");
      result.report = evaluate_record(sample, pred, protocol);
    } catch (const std::exception& e) {
      result.error = e.what();
      ++summary.n_failed;
    }
    summary.records.push_back(std::move(result));
    if (!summary.records.back().ok()) continue;

    const MetricReport& r = summary.records.back().report;
    summary.aggregate.abs_rel += r.abs_rel;
    summary.aggregate.sq_rel += r.sq_rel;
    summary.aggregate.rms += r.rms;
    summary.aggregate.log_rms += r.log_rms;
    summary.aggregate.log10 += r.log10;
    summary.aggregate.d1_all += r.d1_all;
    summary.aggregate.acc_1 += r.acc_1;
    summary.aggregate.acc_2 += r.acc_2;
    summary.aggregate.acc_3 += r.acc_3;
    summary.aggregate.n_valid_pixels += r.n_valid_pixels;
    ++ok;
  }
  if (ok > 0) {
    const double inv = 1.0 / ok;
    summary.aggregate.abs_rel *= inv;
    summary.aggregate.sq_rel *= inv;
    summary.aggregate.rms *= inv;
    summary.aggregate.log_rms *= inv;
    summary.aggregate.log10 *= inv;
    summary.aggregate.d1_all *= inv;
    summary.aggregate.acc_1 *= inv;
    summary.aggregate.acc_2 *= inv;
    summary.aggregate.acc_3 *= inv;
  }
  return summary;
}

void write_reports(const EvalSummary& summary, const std::string& out_dir,
                   const std::string& config_hash) {
  std::filesystem::create_directories(out_dir);
  char buf[64];
  const auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
  };

  std::ofstream agg(out_dir + "/aggregate.txt", std::ios::trunc);
  if (!agg) throw IngestionError("cannot write '" + out_dir + "/aggregate.txt'");
  agg << "protocol=" << to_string(summary.protocol) << "\n";
  if (!config_hash.empty()) agg << "config_hash=" << config_hash << "\n";
  agg << "images=" << (summary.records.size() - static_cast<std::size_t>(summary.n_failed))
      << "\n";
  agg << "failed=" << summary.n_failed << "\n";
  const MetricReport& a = summary.aggregate;
  switch (summary.protocol) {
    case Protocol::kKitti2015:
      agg << "d1_all=" << num(a.d1_all) << "\n";
      break;
    case Protocol::kMake3d70:
      agg << "abs_rel=" << num(a.abs_rel) << "\n";
      agg << "sq_rel=" << num(a.sq_rel) << "\n";
      agg << "rms=" << num(a.rms) << "\n";
      agg << "log10=" << num(a.log10) << "\n";
      break;
    default:
      agg << "abs_rel=" << num(a.abs_rel) << "\n";
      agg << "sq_rel=" << num(a.sq_rel) << "\n";
      agg << "rms=" << num(a.rms) << "\n";
      agg << "log_rms=" << num(a.log_rms) << "\n";
      agg << "log10=" << num(a.log10) << "\n";
      agg << "acc_1=" << num(a.acc_1) << "\n";
      agg << "acc_2=" << num(a.acc_2) << "\n";
      agg << "acc_3=" << num(a.acc_3) << "\n";
      break;
  }

  std::ofstream csv(out_dir + "/per_image.csv", std::ios::trunc);
  if (!csv) throw IngestionError("cannot write '" + out_dir + "/per_image.csv'");
  csv << "id,abs_rel,sq_rel,rms,log_rms,log10,d1_all,acc_1,acc_2,acc_3,n_valid_pixels,error\n";
  for (const EvalRecordResult& rec : summary.records) {
    if (rec.ok()) {
      const MetricReport& r = rec.report;
      csv << rec.id << "," << num(r.abs_rel) << "," << num(r.sq_rel) << "," << num(r.rms) << ","
          << num(r.log_rms) << "," << num(r.log10) << "," << num(r.d1_all) << "," << num(r.acc_1)
          << "," << num(r.acc_2) << "," << num(r.acc_3) << "," << r.n_valid_pixels << ",\n";
    } else {
      std::string quoted = rec.error;
      std::string::size_type pos = 0;
      while ((pos = quoted.find('"', pos)) != std::string::npos) {
        quoted.replace(pos, 1, "\"\"");
        pos += 2;
      }
      csv << rec.id << ",,,,,,,,,,,\"" << quoted << "\"\n";
    }
  }
}

}  // namespace dispkit
