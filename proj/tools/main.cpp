#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "dispkit/data.hpp"
#include "dispkit/evaluator.hpp"
#include "dispkit/gradcheck.hpp"
#include "dispkit/image_io.hpp"
#include "dispkit/imaging.hpp"
#include "dispkit/losses.hpp"
#include "dispkit/network.hpp"
#include "dispkit/trainer.hpp"

namespace fs = std::filesystem;
using namespace dispkit;

namespace {

Image resize_image_bilinear(const Image& img, int out_h, int out_w) {
  if (img.height == out_h && img.width == out_w) return img;
  Image out(out_h, out_w, img.channels);
  for (int c = 0; c < img.channels; ++c) {
    ScalarField channel(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) channel.at(y, x) = img.at(y, x, c);
    const ScalarField resized = resize_bilinear(channel, out_h, out_w);
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) out.at(y, x, c) = resized.at(y, x);
  }
  return out;
}

/// Finest-scale left disparity for one image, resized to the network's input
/// resolution first.
DisparityField predict_disparity(const Network& network, const Image& image) {
  const NetworkConfig& nc = network.config();
  const Image input = resize_image_bilinear(image, nc.input_height, nc.input_width);
  const ForwardResult out = network.forward(input);
  return out.refined.at(0, Side::kLeft);
}

/// Options shared by training runs; mirrors TrainConfig one flag per key.
void add_train_options(CLI::App& cmd, TrainConfig& config, std::string& arch) {
  cmd.add_option("--arch", arch, "Network architecture (single-branch or two-branch)")
      ->capture_default_str();
  cmd.add_option("--width", config.network.input_width, "Input width in pixels")
      ->capture_default_str();
  cmd.add_option("--height", config.network.input_height, "Input height in pixels")
      ->capture_default_str();
  cmd.add_option("--levels", config.network.pyramid_levels, "Disparity pyramid levels")
      ->capture_default_str();
  cmd.add_option("--d-max-frac", config.network.d_max_frac,
                 "Disparity ceiling as a fraction of width")
      ->capture_default_str();
  cmd.add_option("--net-seed", config.network.seed, "Weight initialization seed")
      ->capture_default_str();
  cmd.add_option("--w-ph", config.weights.w_ph, "Photometric weight")->capture_default_str();
  cmd.add_option("--w-st", config.weights.w_st, "Structural weight")->capture_default_str();
  cmd.add_option("--w-sm", config.weights.w_sm, "Smoothness weight")->capture_default_str();
  cmd.add_option("--w-bc", config.weights.w_bc, "Cyclic-consistency weight")
      ->capture_default_str();
  cmd.add_option("--c", config.weights.c, "Adaptive-weight sensitivity")->capture_default_str();
  cmd.add_option("--edge-sigma", config.weights.edge_sigma, "Edge-weight blur sigma")
      ->capture_default_str();
  cmd.add_option("--base-lr", config.base_lr, "Epoch-0 learning rate")->capture_default_str();
  cmd.add_option("--peak-lr", config.peak_lr, "Learning rate from epoch 1")
      ->capture_default_str();
  cmd.add_option("--beta1", config.beta1, "Adam beta1")->capture_default_str();
  cmd.add_option("--beta2", config.beta2, "Adam beta2")->capture_default_str();
  cmd.add_option("--adam-eps", config.adam_eps, "Adam epsilon")->capture_default_str();
  cmd.add_option("--epochs", config.epochs, "Training epochs")->capture_default_str();
  cmd.add_option("--batch-size", config.batch_size, "Samples per step")->capture_default_str();
  cmd.add_option("--seed", config.seed, "Shuffle and augmentation seed")->capture_default_str();
  cmd.add_option("--log-every", config.log_every, "Log every N steps")->capture_default_str();
  cmd.add_option("--checkpoint-every", config.checkpoint_every, "Checkpoint every N epochs")
      ->capture_default_str();
  cmd.add_flag("--no-augment", "Disable training augmentation");
}

int cmd_train(const std::string& root, std::string manifest_path, const std::string& out_dir,
              TrainConfig config, const std::string& arch, bool no_augment,
              const std::string& resume) {
  config.network.arch = parse_arch(arch);
  config.augment = !no_augment;
  config.checkpoint_dir = out_dir;
  if (manifest_path.empty()) manifest_path = root + "/manifest.txt";

  const DatasetManifest manifest = load_manifest(root, manifest_path);
  std::printf("config_hash=%s\n", config_hash(config).c_str());
  std::printf("samples=%zu\n", manifest.records.size());
  const TrainResult result = train_loop(config, manifest, resume);
  std::printf("steps=%lld\n", static_cast<long long>(result.steps));
  std::printf("final_checkpoint=%s\n", result.final_checkpoint.c_str());
  return 0;
}

int cmd_eval(const std::string& root, std::string manifest_path, const std::string& checkpoint,
             const std::string& predictions, const std::string& protocol_name,
             const std::string& out_dir) {
  if (manifest_path.empty()) manifest_path = root + "/manifest.txt";
  const DatasetManifest manifest = load_manifest(root, manifest_path);
  const Protocol protocol = parse_protocol(protocol_name);

  Network network;
  std::string hash;
  PredictionFn predict;
  if (!checkpoint.empty()) {
    const CheckpointInfo info = read_checkpoint_info(checkpoint);
    network = Network::build(info.network);
    load_checkpoint(checkpoint, network, nullptr);
    hash = info.config_hash;
    predict = [&network](const StereoSample& sample, const SampleRecord&) {
      return predict_disparity(network, sample.left);
    };
  } else {
    predict = [predictions](const StereoSample&, const SampleRecord& record) {
      ScalarField raw = read_raw16_png(predictions + "/" + record.id() + ".png");
      for (double& v : raw.data) v /= 256.0;
      return DisparityField{std::move(raw), Side::kLeft};
    };
  }

  const EvalSummary summary = evaluate_dataset(manifest, predict, protocol);
  if (!out_dir.empty()) write_reports(summary, out_dir, hash);

  const MetricReport& a = summary.aggregate;
  std::printf("protocol=%s images=%zu failed=%d\n", to_string(protocol),
              summary.records.size() - static_cast<std::size_t>(summary.n_failed),
              summary.n_failed);
  if (protocol == Protocol::kKitti2015) {
    std::printf("d1_all=%.9g\n", a.d1_all);
  } else {
    std::printf("abs_rel=%.9g sq_rel=%.9g rms=%.9g log_rms=%.9g log10=%.9g\n", a.abs_rel,
                a.sq_rel, a.rms, a.log_rms, a.log10);
    std::printf("acc_1=%.9g acc_2=%.9g acc_3=%.9g\n", a.acc_1, a.acc_2, a.acc_3);
  }
  if (summary.n_failed == static_cast<int>(summary.records.size())) {
    std::fprintf(stderr, "error: every record failed; see per-image report\n");
    return 1;
  }
  return 0;
}

int cmd_infer(const std::string& checkpoint, const std::vector<std::string>& images,
              const std::string& out_dir, bool write_depth, double focal, double baseline) {
  const CheckpointInfo info = read_checkpoint_info(checkpoint);
  Network network = Network::build(info.network);
  load_checkpoint(checkpoint, network, nullptr);
  fs::create_directories(out_dir);

  for (const std::string& path : images) {
    const Image image = read_image_png(path);
    DisparityField disparity = predict_disparity(network, image);
    disparity = resize_disparity(disparity, image.height, image.width);

    const std::string stem = fs::path(path).stem().string();
    ScalarField counts = disparity.field;
    for (double& v : counts.data) v *= 256.0;
    const std::string disp_path = out_dir + "/" + stem + ".png";
    write_raw16_png(disp_path, counts);
    std::printf("%s -> %s\n", path.c_str(), disp_path.c_str());

    if (write_depth) {
      const CameraRig rig{focal, baseline};
      ScalarField depth = disparity_to_depth(disparity, rig);
      for (double& v : depth.data) v *= 256.0;
      const std::string depth_path = out_dir + "/" + stem + "_depth.png";
      write_raw16_png(depth_path, depth);
      std::printf("%s -> %s\n", path.c_str(), depth_path.c_str());
    }
  }
  return 0;
}

int cmd_synth(const std::string& out_dir, const std::vector<std::string>& spec_paths, int count,
              int width, int height, double focal, double baseline, std::uint64_t seed) {
  std::vector<SceneSpec> scenes;
  if (!spec_paths.empty()) {
    for (const std::string& path : spec_paths) scenes.push_back(load_scene(path));
  } else {
    const CameraRig rig{focal, baseline};
    for (int i = 0; i < count; ++i)
      scenes.push_back(random_scene(height, width, rig, mix_seed(seed, i)));
  }
  write_synthetic_dataset(out_dir, scenes);
  std::printf("scenes=%zu root=%s\n", scenes.size(), out_dir.c_str());
  return 0;
}

int cmd_gradcheck(const GradcheckOptions& options, double tolerance) {
  const std::vector<GradcheckTermReport> reports = run_gradcheck(options);
  bool all_ok = true;
  for (const GradcheckTermReport& r : reports) {
    const bool ok = r.max_rel_error <= tolerance;
    all_ok = all_ok && ok;
    std::printf("%-12s instances=%d compared=%lld max_rel_error=%.3e %s\n", r.term.c_str(),
                r.instances, r.compared, r.max_rel_error, ok ? "ok" : "FAIL");
  }
  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stereo-supervised single-image disparity: train, evaluate, infer"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train a disparity network");
  train->set_config("--config", "", "Key=value config file; flags override it");
  std::string train_root, train_manifest, train_out, train_arch = "two-branch", train_resume;
  TrainConfig train_config;
  train->add_option("--root", train_root, "Dataset root directory")->required();
  train->add_option("--manifest", train_manifest, "Manifest path (default <root>/manifest.txt)");
  train->add_option("--out", train_out, "Checkpoint and log directory")->required();
  train->add_option("--resume", train_resume, "Checkpoint stem to resume from");
  add_train_options(*train, train_config, train_arch);

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint or prediction directory");
  eval->set_config("--config", "", "Key=value config file; flags override it");
  std::string eval_root, eval_manifest, eval_checkpoint, eval_predictions, eval_protocol,
      eval_out;
  eval->add_option("--root", eval_root, "Dataset root directory")->required();
  eval->add_option("--manifest", eval_manifest, "Manifest path (default <root>/manifest.txt)");
  auto* eval_ckpt_opt = eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint stem");
  eval->add_option("--predictions", eval_predictions,
                   "Directory of 16-bit disparity rasters (pixels x256)")
      ->excludes(eval_ckpt_opt);
  eval->add_option("--protocol", eval_protocol,
                   "Evaluation protocol (eigen-80, eigen-50, kitti2015, make3d-70)")
      ->required();
  eval->add_option("--out", eval_out, "Report output directory");

  // infer
  auto* infer = app.add_subcommand("infer", "Predict disparity rasters for single images");
  std::string infer_checkpoint, infer_out = ".";
  std::vector<std::string> infer_images;
  bool infer_depth = false;
  double infer_focal = 0.0, infer_baseline = 0.0;
  infer->add_option("--checkpoint", infer_checkpoint, "Checkpoint stem")->required();
  infer->add_option("--image", infer_images, "Input image (repeatable)")->required();
  infer->add_option("--out", infer_out, "Output directory")->capture_default_str();
  infer->add_flag("--depth", infer_depth, "Also write depth rasters (meters x256)");
  infer->add_option("--focal", infer_focal, "Focal length in pixels (with --depth)");
  infer->add_option("--baseline", infer_baseline, "Baseline in meters (with --depth)");

  // synth
  auto* synth = app.add_subcommand("synth", "Materialize a synthetic stereo dataset");
  std::string synth_out;
  std::vector<std::string> synth_specs;
  int synth_count = 4, synth_width = 64, synth_height = 32;
  double synth_focal = 100.0, synth_baseline = 0.5;
  std::uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "Dataset root to create")->required();
  synth->add_option("--spec", synth_specs, "Scene description file (repeatable)");
  synth->add_option("--count", synth_count, "Random scenes to generate when no --spec")
      ->capture_default_str();
  synth->add_option("--width", synth_width, "Scene width")->capture_default_str();
  synth->add_option("--height", synth_height, "Scene height")->capture_default_str();
  synth->add_option("--focal", synth_focal, "Focal length in pixels")->capture_default_str();
  synth->add_option("--baseline", synth_baseline, "Baseline in meters")->capture_default_str();
  synth->add_option("--seed", synth_seed, "Scene generator seed")->capture_default_str();

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference audit of loss gradients");
  GradcheckOptions gc;
  double gc_tolerance = 1e-4;
  gradcheck->add_option("--instances", gc.instances, "Random instances per term")
      ->capture_default_str();
  gradcheck->add_option("--height", gc.height, "Field height")->capture_default_str();
  gradcheck->add_option("--width", gc.width, "Field width")->capture_default_str();
  gradcheck->add_option("--step", gc.step, "Central-difference step")->capture_default_str();
  gradcheck->add_option("--exclusion", gc.exclusion, "Kink/lattice exclusion radius")
      ->capture_default_str();
  gradcheck->add_option("--seed", gc.seed, "Instance seed")->capture_default_str();
  gradcheck->add_option("--tolerance", gc_tolerance, "Maximum accepted relative error")
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed())
      return cmd_train(train_root, train_manifest, train_out, train_config, train_arch,
                       train->count("--no-augment") > 0, train_resume);
    if (eval->parsed()) {
      if (eval_checkpoint.empty() == eval_predictions.empty())
        throw InvalidInputError("eval needs exactly one of --checkpoint or --predictions");
      return cmd_eval(eval_root, eval_manifest, eval_checkpoint, eval_predictions, eval_protocol,
                      eval_out);
    }
    if (infer->parsed()) {
      if (infer_depth && (infer_focal <= 0.0 || infer_baseline <= 0.0))
        throw InvalidInputError("--depth needs positive --focal and --baseline");
      return cmd_infer(infer_checkpoint, infer_images, infer_out, infer_depth, infer_focal,
                       infer_baseline);
    }
    if (synth->parsed())
      return cmd_synth(synth_out, synth_specs, synth_count, synth_width, synth_height,
                       synth_focal, synth_baseline, synth_seed);
    if (gradcheck->parsed()) return cmd_gradcheck(gc, gc_tolerance);
  } catch (const std::exception& e) {
    std::fflush(stdout);
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
