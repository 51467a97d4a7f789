#include "dispkit/trainer.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <string>
#include <unistd.h>
#include <vector>

#include "dispkit/data.hpp"
#include "test_util.hpp"

using namespace dispkit;

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;

  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("dispkit_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }

  std::string str() const { return path.string(); }
};

/// Small configuration used throughout: the coarsest pyramid grid of a
/// 24x32 input is 3x4, the minimum the network accepts.
TrainConfig small_config() {
  TrainConfig config;
  config.network.arch = Arch::kTwoBranch;
  config.network.input_height = 24;
  config.network.input_width = 32;
  config.network.seed = 5;
  config.seed = 9;
  config.augment = false;
  return config;
}

std::vector<StereoSample> small_batch(int count) {
  const CameraRig rig{100.0, 0.5};
  std::vector<StereoSample> batch;
  for (int i = 0; i < count; ++i)
    batch.push_back(synth_generate(random_scene(24, 32, rig, 70 + static_cast<std::uint64_t>(i))));
  return batch;
}

bool params_equal(const std::vector<Parameter>& a, const std::vector<Parameter>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].values != b[i].values) return false;
  return true;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("the learning-rate schedule has four plateaus") {
  const TrainConfig config = small_config();  // epochs = 50
  CHECK(lr_schedule(0, config) == 1.8e-4);
  for (int epoch = 1; epoch <= 45; ++epoch) CHECK(lr_schedule(epoch, config) == 2e-4);
  CHECK(lr_schedule(46, config) == 1e-4);
  CHECK(lr_schedule(47, config) == 1e-4);
  CHECK(lr_schedule(48, config) == 5e-5);
  CHECK(lr_schedule(49, config) == 5e-5);
  CHECK_THROWS_AS(lr_schedule(-1, config), InvalidInputError);
  CHECK_THROWS_AS(lr_schedule(50, config), InvalidInputError);
}

TEST_CASE("config serialization names the hyper-parameters and hashes stably") {
  const TrainConfig config = small_config();
  const std::string text = serialize_config(config);
  CHECK(text.find("arch=two-branch\n") != std::string::npos);
  CHECK(text.find("peak_lr=") != std::string::npos);
  CHECK(text.find("w_bc=") != std::string::npos);

  const std::string hash = config_hash(config);
  CHECK(hash.size() == 16);
  CHECK(config_hash(config) == hash);

  TrainConfig other = config;
  other.weights.w_sm = 0.2;
  CHECK(config_hash(other) != hash);
  other = config;
  other.network.seed = 6;
  CHECK(config_hash(other) != hash);
}

TEST_CASE("train config validation rejects degenerate settings") {
  TrainConfig config = small_config();
  CHECK_NOTHROW(config.validate());
  config.epochs = 0;
  CHECK_THROWS_AS(config.validate(), InvalidInputError);
  config = small_config();
  config.batch_size = 0;
  CHECK_THROWS_AS(config.validate(), InvalidInputError);
  config = small_config();
  config.beta1 = 1.0;
  CHECK_THROWS_AS(config.validate(), InvalidInputError);
  config = small_config();
  config.peak_lr = 0.0;
  CHECK_THROWS_AS(config.validate(), InvalidInputError);
}

TEST_CASE("zero loss weights leave the parameters untouched") {
  TrainConfig config = small_config();
  config.weights.w_ph = 0.0;
  config.weights.w_st = 0.0;
  config.weights.w_sm = 0.0;
  config.weights.w_bc = 0.0;

  Network network = Network::build(config.network);
  AdamState adam = AdamState::init(network);
  const std::vector<Parameter> before = network.parameters();

  const LossBreakdown bd = train_step(network, small_batch(1), config, 1e-4, adam);
  CHECK(bd.total == 0.0);
  CHECK(bd.weighted_photometric == 0.0);
  CHECK(bd.weighted_structural == 0.0);
  CHECK(bd.weighted_smoothness == 0.0);
  CHECK(bd.weighted_cyclic == 0.0);
  CHECK(bd.weighted_init == 0.0);
  CHECK(adam.t == 1);
  CHECK(params_equal(before, network.parameters()));
}

TEST_CASE("a training step is bitwise deterministic") {
  const TrainConfig config = small_config();
  const std::vector<StereoSample> batch = small_batch(2);

  Network net_a = Network::build(config.network);
  Network net_b = Network::build(config.network);
  AdamState adam_a = AdamState::init(net_a);
  AdamState adam_b = AdamState::init(net_b);

  const LossBreakdown a = train_step(net_a, batch, config, 2e-4, adam_a);
  const LossBreakdown b = train_step(net_b, batch, config, 2e-4, adam_b);

  CHECK(a.total == b.total);
  CHECK(a.weighted_photometric == b.weighted_photometric);
  CHECK(a.weighted_cyclic == b.weighted_cyclic);
  CHECK(a.weighted_init == b.weighted_init);
  REQUIRE(a.photometric.size() == b.photometric.size());
  for (std::size_t r = 0; r < a.photometric.size(); ++r) {
    CHECK(a.photometric[r] == b.photometric[r]);
    CHECK(a.mean_alpha[r] == b.mean_alpha[r]);
  }
  CHECK(params_equal(net_a.parameters(), net_b.parameters()));
  CHECK(a.total > 0.0);  // a real objective, not the trivial zero
}

TEST_CASE("a non-finite forward throws before any state changes") {
  const TrainConfig config = small_config();
  Network network = Network::build(config.network);
  AdamState adam = AdamState::init(network);

  network.parameters()[0].values[0] = std::numeric_limits<float>::quiet_NaN();
  const std::vector<float> witness = network.parameters()[1].values;

  CHECK_THROWS_AS(train_step(network, small_batch(1), config, 1e-4, adam), DivergenceError);
  CHECK(network.parameters()[1].values == witness);
  CHECK(adam.t == 0);
  for (float v : adam.m[0]) CHECK(v == 0.0f);
}

TEST_CASE("checkpoints restore the network and optimizer bitwise") {
  TempDir tmp("ckpt");
  const TrainConfig config = small_config();
  const std::string hash = config_hash(config);
  const std::vector<StereoSample> batch = small_batch(1);

  Network net_a = Network::build(config.network);
  AdamState adam_a = AdamState::init(net_a);
  train_step(net_a, batch, config, 2e-4, adam_a);

  const std::string stem = (tmp.path / "state").string();
  save_checkpoint(stem, net_a, adam_a, 7, 3, hash);

  const CheckpointInfo info = read_checkpoint_info(stem);
  CHECK(info.step == 7);
  CHECK(info.epoch == 3);
  CHECK(info.config_hash == hash);
  CHECK(info.network.arch == Arch::kTwoBranch);
  CHECK(info.network.input_height == 24);
  CHECK(info.network.input_width == 32);
  CHECK(info.network.seed == config.network.seed);

  Network net_b = Network::build(info.network);
  AdamState adam_b = AdamState::init(net_b);
  load_checkpoint(stem, net_b, &adam_b);
  CHECK(params_equal(net_a.parameters(), net_b.parameters()));
  CHECK(adam_b.t == adam_a.t);
  REQUIRE(adam_b.m.size() == adam_a.m.size());
  for (std::size_t i = 0; i < adam_a.m.size(); ++i) {
    CHECK(adam_b.m[i] == adam_a.m[i]);
    CHECK(adam_b.v[i] == adam_a.v[i]);
  }

  // The restored state continues exactly as the original would have.
  const std::vector<StereoSample> next = small_batch(2);
  const LossBreakdown a = train_step(net_a, next, config, 2e-4, adam_a);
  const LossBreakdown b = train_step(net_b, next, config, 2e-4, adam_b);
  CHECK(a.total == b.total);
  CHECK(params_equal(net_a.parameters(), net_b.parameters()));
}

TEST_CASE("loading a checkpoint into a mismatched network fails") {
  TempDir tmp("ckpt_bad");
  const TrainConfig config = small_config();
  Network network = Network::build(config.network);
  AdamState adam = AdamState::init(network);
  const std::string stem = (tmp.path / "state").string();
  save_checkpoint(stem, network, adam, 0, 0, config_hash(config));

  NetworkConfig other = config.network;
  other.arch = Arch::kSingleBranch;
  Network single = Network::build(other);
  CHECK_THROWS_AS(load_checkpoint(stem, single, nullptr), InvalidInputError);

  Network fresh = Network::build(config.network);
  CHECK_THROWS_AS(load_checkpoint((tmp.path / "absent").string(), fresh, nullptr),
                  IngestionError);
}

TEST_CASE("the training loop logs each step and checkpoints each epoch") {
  TempDir data_dir("loop_data");
  TempDir ckpt_dir("loop_ckpt");
  const CameraRig rig{100.0, 0.5};
  write_synthetic_dataset(data_dir.str(),
                          {random_scene(24, 32, rig, 81), random_scene(24, 32, rig, 82)});
  const DatasetManifest manifest =
      load_manifest(data_dir.str(), (data_dir.path / "manifest.txt").string());

  TrainConfig config = small_config();
  config.epochs = 1;
  config.batch_size = 1;
  config.checkpoint_dir = ckpt_dir.str();

  const TrainResult result = train_loop(config, manifest);
  CHECK(result.steps == 2);
  CHECK(result.epochs == 1);
  CHECK(result.final_checkpoint == ckpt_dir.str() + "/epoch_0001");
  CHECK(fs::exists(ckpt_dir.path / "epoch_0001.json"));
  CHECK(fs::exists(ckpt_dir.path / "epoch_0001.bin"));
  CHECK(std::isfinite(result.last.total));

  const auto lines = read_lines(ckpt_dir.path / "train_log.jsonl");
  REQUIRE(lines.size() == 3);  // one header plus one record per step
  CHECK(json::parse(lines[0]).at("config_hash").get<std::string>() == config_hash(config));
  const json first = json::parse(lines[1]);
  CHECK(first.at("step").get<int>() == 1);
  CHECK(first.at("epoch").get<int>() == 0);
  CHECK(first.at("lr").get<double>() == 1.8e-4);
  CHECK(first.at("total").get<double>() > 0.0);
  CHECK(first.at("mean_alpha").size() == 4);
  CHECK(json::parse(lines[2]).at("step").get<int>() == 2);
}

TEST_CASE("resuming a run reproduces the uninterrupted run bitwise") {
  TempDir data_dir("resume_data");
  TempDir dir_a("resume_a");
  TempDir dir_b("resume_b");
  const CameraRig rig{100.0, 0.5};
  write_synthetic_dataset(data_dir.str(),
                          {random_scene(24, 32, rig, 91), random_scene(24, 32, rig, 92)});
  const DatasetManifest manifest =
      load_manifest(data_dir.str(), (data_dir.path / "manifest.txt").string());

  TrainConfig config = small_config();
  config.epochs = 2;
  config.batch_size = 2;  // one step per epoch
  config.augment = true;  // augmentation streams must survive the resume
  config.checkpoint_dir = dir_a.str();
  const TrainResult run_a = train_loop(config, manifest);
  CHECK(run_a.steps == 2);

  config.checkpoint_dir = dir_b.str();  // not part of the config hash
  const TrainResult run_b = train_loop(config, manifest, dir_a.str() + "/epoch_0001");
  CHECK(run_b.steps == 2);
  CHECK(run_b.final_checkpoint == dir_b.str() + "/epoch_0002");

  // The resumed second epoch logs the very same record the full run logged.
  const auto lines_a = read_lines(dir_a.path / "train_log.jsonl");
  const auto lines_b = read_lines(dir_b.path / "train_log.jsonl");
  REQUIRE(lines_a.size() == 3);  // header + two steps
  REQUIRE(lines_b.size() == 1);  // the resumed step only
  CHECK(lines_b[0] == lines_a[2]);

  CHECK(read_bytes(dir_b.path / "epoch_0002.bin") == read_bytes(dir_a.path / "epoch_0002.bin"));
}
