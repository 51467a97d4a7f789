#include "dispkit/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace dispkit {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  network.validate();
  check_input(base_lr > 0.0 && peak_lr > 0.0, "TrainConfig: learning rates must be positive");
  check_input(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
              "TrainConfig: betas must lie in [0, 1)");
  check_input(adam_eps > 0.0, "TrainConfig: adam_eps must be positive");
  check_input(epochs >= 1, "TrainConfig: epochs must be >= 1, got " + std::to_string(epochs));
  check_input(batch_size >= 1,
              "TrainConfig: batch_size must be >= 1, got " + std::to_string(batch_size));
  check_input(log_every >= 1, "TrainConfig: log_every must be >= 1");
  check_input(checkpoint_every >= 1, "TrainConfig: checkpoint_every must be >= 1");
}

double lr_schedule(int epoch, const TrainConfig& config) {
  check_input(epoch >= 0 && epoch < config.epochs,
              "lr_schedule: epoch " + std::to_string(epoch) + " outside [0, " +
                  std::to_string(config.epochs) + ")");
  if (epoch == 0) return config.base_lr;
  if (epoch <= 45) return config.peak_lr;
  if (epoch <= 47) return config.peak_lr / 2.0;
  return config.peak_lr / 4.0;
}

std::string serialize_config(const TrainConfig& config) {
  char buf[64];
  const auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  std::string out;
  out += "arch=" + std::string(to_string(config.network.arch)) + "\n";
  out += "input_height=" + std::to_string(config.network.input_height) + "\n";
  out += "input_width=" + std::to_string(config.network.input_width) + "\n";
  out += "input_channels=" + std::to_string(config.network.input_channels) + "\n";
  out += "pyramid_levels=" + std::to_string(config.network.pyramid_levels) + "\n";
  out += "d_max_frac=" + num(config.network.d_max_frac) + "\n";
  out += "network_seed=" + std::to_string(config.network.seed) + "\n";
  out += "w_ph=" + num(config.weights.w_ph) + "\n";
  out += "w_st=" + num(config.weights.w_st) + "\n";
  out += "w_sm=" + num(config.weights.w_sm) + "\n";
  out += "w_bc=" + num(config.weights.w_bc) + "\n";
  out += "c=" + num(config.weights.c) + "\n";
  out += "edge_sigma=" + num(config.weights.edge_sigma) + "\n";
  out += "base_lr=" + num(config.base_lr) + "\n";
  out += "peak_lr=" + num(config.peak_lr) + "\n";
  out += "beta1=" + num(config.beta1) + "\n";
  out += "beta2=" + num(config.beta2) + "\n";
  out += "adam_eps=" + num(config.adam_eps) + "\n";
  out += "epochs=" + std::to_string(config.epochs) + "\n";
  out += "batch_size=" + std::to_string(config.batch_size) + "\n";
  out += "augment=" + std::string(config.augment ? "1" : "0") + "\n";
  out += "seed=" + std::to_string(config.seed) + "\n";
  out += "log_every=" + std::to_string(config.log_every) + "\n";
  out += "checkpoint_every=" + std::to_string(config.checkpoint_every) + "\n";
  return out;
}

std::string config_hash(const TrainConfig& config) {
  const std::string text = serialize_config(config);
  std::uint64_t hash = 14695981039346656037ULL;
  for (unsigned char byte : text) {
    hash ^= byte;
    hash *= 1099511628211ULL;
  }
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

AdamState AdamState::init(const Network& network) {
  AdamState state;
  state.m.resize(network.parameters().size());
  state.v.resize(network.parameters().size());
  for (std::size_t i = 0; i < network.parameters().size(); ++i) {
    state.m[i].assign(network.parameters()[i].count(), 0.0f);
    state.v[i].assign(network.parameters()[i].count(), 0.0f);
  }
  return state;
}

namespace {

void accumulate_breakdown(LossBreakdown& acc, const LossBreakdown& bd) {
  const auto add_scales = [](std::vector<std::array<double, 2>>& a,
                             const std::vector<std::array<double, 2>>& b) {
    if (a.empty()) a.assign(b.size(), {0.0, 0.0});
    for (std::size_t r = 0; r < b.size(); ++r) {
      a[r][0] += b[r][0];
      a[r][1] += b[r][1];
    }
  };
  add_scales(acc.photometric, bd.photometric);
  add_scales(acc.structural, bd.structural);
  add_scales(acc.smoothness, bd.smoothness);
  add_scales(acc.cyclic, bd.cyclic);
  add_scales(acc.mean_alpha, bd.mean_alpha);
  acc.weighted_photometric += bd.weighted_photometric;
  acc.weighted_structural += bd.weighted_structural;
  acc.weighted_smoothness += bd.weighted_smoothness;
  acc.weighted_cyclic += bd.weighted_cyclic;
  acc.weighted_init += bd.weighted_init;
  acc.total += bd.total;
}

void scale_breakdown(LossBreakdown& acc, double factor) {
  const auto scale_scales = [&](std::vector<std::array<double, 2>>& a) {
    for (auto& pair : a) {
      pair[0] *= factor;
      pair[1] *= factor;
    }
  };
  scale_scales(acc.photometric);
  scale_scales(acc.structural);
  scale_scales(acc.smoothness);
  scale_scales(acc.cyclic);
  scale_scales(acc.mean_alpha);
  acc.weighted_photometric *= factor;
  acc.weighted_structural *= factor;
  acc.weighted_smoothness *= factor;
  acc.weighted_cyclic *= factor;
  acc.weighted_init *= factor;
  acc.total *= factor;
}

bool pyramid_finite(const DisparityPyramid& pyramid) {
  for (const auto& sides : pyramid.scales)
    for (const DisparityField& d : sides)
      for (double v : d.field.data)
        if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

LossBreakdown train_step(Network& network, const std::vector<StereoSample>& batch,
                         const TrainConfig& config, double lr, AdamState& adam) {
  config.validate();
  check_input(!batch.empty(), "train_step: empty batch");
  check_input(lr > 0.0, "train_step: learning rate must be positive");
  check_input(adam.m.size() == network.parameters().size() &&
                  adam.v.size() == network.parameters().size(),
              "train_step: optimizer state does not match the network");
  const bool two_branch = network.config().arch == Arch::kTwoBranch;

  NetworkGradients grads = network.zero_gradients();
  LossBreakdown mean;
  ForwardTrace trace;
  for (const StereoSample& sample : batch) {
    const ForwardResult out = network.forward(sample.left, &trace);
    // The losses sample images at the predicted coordinates, so a NaN
    // disparity must be caught here rather than fed to the warp.
    if (!pyramid_finite(out.refined) || (two_branch && !pyramid_finite(out.initial)))
      throw DivergenceError(
          "train_step: non-finite disparity from the forward pass; parameters left untouched");
    PyramidGradients refined_grads, initial_grads;
    LossBreakdown bd = total_loss(sample, out.refined, config.weights, &refined_grads);
    if (two_branch) {
      const LossBreakdown init =
          init_loss_pyramid(sample, out.initial, config.weights, &initial_grads);
      bd.weighted_init = init.weighted_init;
      bd.total += init.weighted_init;
    }
    network.backward(trace, refined_grads, two_branch ? &initial_grads : nullptr, grads);
    accumulate_breakdown(mean, bd);
  }
  scale_breakdown(mean, 1.0 / static_cast<double>(batch.size()));

  if (!std::isfinite(mean.total) || !grads.all_finite())
    throw DivergenceError("train_step: non-finite loss or gradient (total = " +
                          std::to_string(mean.total) + "); parameters left untouched");

  // Adam with bias correction; moments are stored as float32 alongside the
  // parameters, arithmetic runs in double.
  adam.t += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(adam.t));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(adam.t));
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < network.parameters().size(); ++i) {
    auto& values = network.parameters()[i].values;
    check_input(adam.m[i].size() == values.size() && adam.v[i].size() == values.size(),
                "train_step: optimizer state shape mismatch on " + network.parameters()[i].name);
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = static_cast<double>(grads.values[i][j]) * inv_batch;
      const double m = config.beta1 * adam.m[i][j] + (1.0 - config.beta1) * g;
      const double v = config.beta2 * adam.v[i][j] + (1.0 - config.beta2) * g * g;
      adam.m[i][j] = static_cast<float>(m);
      adam.v[i][j] = static_cast<float>(v);
      const double update = lr * (m / bc1) / (std::sqrt(v / bc2) + config.adam_eps);
      values[j] = static_cast<float>(values[j] - update);
    }
  }
  return mean;
}

namespace {

void append_le32(std::string& out, std::uint32_t word) {
  out.push_back(static_cast<char>(word & 0xff));
  out.push_back(static_cast<char>((word >> 8) & 0xff));
  out.push_back(static_cast<char>((word >> 16) & 0xff));
  out.push_back(static_cast<char>((word >> 24) & 0xff));
}

std::uint32_t read_le32(const unsigned char* bytes) {
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) |
         (static_cast<std::uint32_t>(bytes[3]) << 24);
}

struct ArrayEntry {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t count = 0;
};

json manifest_json(const Network& network, const AdamState& adam, std::int64_t step, int epoch,
                   const std::string& hash) {
  const NetworkConfig& nc = network.config();
  json arrays = json::array();
  std::size_t offset = 0;
  const auto add = [&](const std::string& name, const std::vector<int>& shape,
                       std::size_t count) {
    arrays.push_back({{"name", name}, {"shape", shape}, {"offset", offset}, {"count", count}});
    offset += count;
  };
  for (const Parameter& p : network.parameters()) add(p.name, p.shape, p.count());
  for (const Parameter& p : network.parameters())
    add("adam/" + p.name + "/m", p.shape, p.count());
  for (const Parameter& p : network.parameters())
    add("adam/" + p.name + "/v", p.shape, p.count());

  json manifest;
  manifest["format"] = "dispkit-checkpoint-v1";
  manifest["arch"] = to_string(nc.arch);
  manifest["input_height"] = nc.input_height;
  manifest["input_width"] = nc.input_width;
  manifest["input_channels"] = nc.input_channels;
  manifest["pyramid_levels"] = nc.pyramid_levels;
  manifest["d_max_frac"] = nc.d_max_frac;
  manifest["network_seed"] = nc.seed;
  manifest["step"] = step;
  manifest["epoch"] = epoch;
  manifest["adam_t"] = adam.t;
  manifest["config_hash"] = hash;
  manifest["arrays"] = std::move(arrays);
  return manifest;
}

json parse_manifest(const std::string& stem) {
  std::ifstream in(stem + ".json");
  if (!in) throw IngestionError("cannot open checkpoint manifest '" + stem + ".json'");
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw ParseError("checkpoint manifest '" + stem + ".json': " + e.what());
  }
  if (manifest.value("format", "") != "dispkit-checkpoint-v1")
    throw ParseError("checkpoint manifest '" + stem + ".json' has unknown format '" +
                     manifest.value("format", "") + "'");
  return manifest;
}

NetworkConfig config_from_manifest(const json& manifest, const std::string& stem) {
  try {
    NetworkConfig nc;
    nc.arch = parse_arch(manifest.at("arch").get<std::string>());
    nc.input_height = manifest.at("input_height").get<int>();
    nc.input_width = manifest.at("input_width").get<int>();
    nc.input_channels = manifest.at("input_channels").get<int>();
    nc.pyramid_levels = manifest.at("pyramid_levels").get<int>();
    nc.d_max_frac = manifest.at("d_max_frac").get<double>();
    nc.seed = manifest.at("network_seed").get<std::uint64_t>();
    return nc;
  } catch (const json::exception& e) {
    throw ParseError("checkpoint manifest '" + stem + ".json': " + e.what());
  }
}

std::vector<ArrayEntry> arrays_from_manifest(const json& manifest, const std::string& stem) {
  try {
    std::vector<ArrayEntry> entries;
    for (const json& item : manifest.at("arrays")) {
      ArrayEntry e;
      e.name = item.at("name").get<std::string>();
      e.shape = item.at("shape").get<std::vector<int>>();
      e.offset = item.at("offset").get<std::size_t>();
      e.count = item.at("count").get<std::size_t>();
      entries.push_back(std::move(e));
    }
    return entries;
  } catch (const json::exception& e) {
    throw ParseError("checkpoint manifest '" + stem + ".json': " + e.what());
  }
}

}  // namespace

void save_checkpoint(const std::string& stem, const Network& network, const AdamState& adam,
                     std::int64_t step, int epoch, const std::string& config_hash) {
  check_input(adam.m.size() == network.parameters().size() &&
                  adam.v.size() == network.parameters().size(),
              "save_checkpoint: optimizer state does not match the network");
  const fs::path parent = fs::path(stem).parent_path();
  if (!parent.empty()) fs::create_directories(parent);

  const json manifest = manifest_json(network, adam, step, epoch, config_hash);
  std::ofstream mout(stem + ".json", std::ios::binary | std::ios::trunc);
  if (!mout) throw IngestionError("cannot write '" + stem + ".json'");
  mout << manifest.dump(2) << "\n";

  std::string payload;
  std::size_t total = 0;
  for (const Parameter& p : network.parameters()) total += p.count();
  payload.reserve(total * 3 * 4);
  const auto append_array = [&](const std::vector<float>& values) {
    for (float v : values) append_le32(payload, std::bit_cast<std::uint32_t>(v));
  };
  for (const Parameter& p : network.parameters()) append_array(p.values);
  for (const auto& m : adam.m) append_array(m);
  for (const auto& v : adam.v) append_array(v);

  std::ofstream wout(stem + ".bin", std::ios::binary | std::ios::trunc);
  if (!wout) throw IngestionError("cannot write '" + stem + ".bin'");
  wout.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!wout) throw IngestionError("short write to '" + stem + ".bin'");
}

CheckpointInfo read_checkpoint_info(const std::string& stem) {
  const json manifest = parse_manifest(stem);
  CheckpointInfo info;
  info.network = config_from_manifest(manifest, stem);
  try {
    info.step = manifest.at("step").get<std::int64_t>();
    info.epoch = manifest.at("epoch").get<int>();
    info.config_hash = manifest.at("config_hash").get<std::string>();
  } catch (const json::exception& e) {
    throw ParseError("checkpoint manifest '" + stem + ".json': " + e.what());
  }
  return info;
}

CheckpointInfo load_checkpoint(const std::string& stem, Network& network, AdamState* adam) {
  const json manifest = parse_manifest(stem);
  const CheckpointInfo info = read_checkpoint_info(stem);
  const NetworkConfig& nc = network.config();
  check_input(info.network.arch == nc.arch && info.network.input_height == nc.input_height &&
                  info.network.input_width == nc.input_width &&
                  info.network.input_channels == nc.input_channels &&
                  info.network.pyramid_levels == nc.pyramid_levels &&
                  info.network.d_max_frac == nc.d_max_frac,
              "load_checkpoint: '" + stem + "' was written for a different network shape");

  std::ifstream in(stem + ".bin", std::ios::binary);
  if (!in) throw IngestionError("cannot open checkpoint payload '" + stem + ".bin'");
  std::vector<unsigned char> payload{std::istreambuf_iterator<char>(in),
                                     std::istreambuf_iterator<char>()};

  if (adam != nullptr) {
    adam->m.assign(network.parameters().size(), {});
    adam->v.assign(network.parameters().size(), {});
    try {
      adam->t = manifest.at("adam_t").get<std::int64_t>();
    } catch (const json::exception& e) {
      throw ParseError("checkpoint manifest '" + stem + ".json': " + e.what());
    }
  }

  const auto read_array = [&](const ArrayEntry& entry, std::vector<float>& into) {
    const std::size_t end_byte = (entry.offset + entry.count) * 4;
    check_input(end_byte <= payload.size(), "load_checkpoint: '" + stem + ".bin' is truncated (" +
                                                entry.name + " ends at byte " +
                                                std::to_string(end_byte) + " of " +
                                                std::to_string(payload.size()) + ")");
    into.resize(entry.count);
    for (std::size_t i = 0; i < entry.count; ++i)
      into[i] = std::bit_cast<float>(read_le32(payload.data() + (entry.offset + i) * 4));
  };

  std::size_t matched = 0;
  for (const ArrayEntry& entry : arrays_from_manifest(manifest, stem)) {
    const bool is_m = entry.name.rfind("adam/", 0) == 0 &&
                      entry.name.size() > 7 && entry.name.compare(entry.name.size() - 2, 2, "/m") == 0;
    const bool is_v = entry.name.rfind("adam/", 0) == 0 &&
                      entry.name.size() > 7 && entry.name.compare(entry.name.size() - 2, 2, "/v") == 0;
    if (is_m || is_v) {
      if (adam == nullptr) continue;
      const std::string param_name = entry.name.substr(5, entry.name.size() - 7);
      const Parameter* p = network.find_parameter(param_name);
      check_input(p != nullptr,
                  "load_checkpoint: optimizer array '" + entry.name + "' has no parameter");
      const std::size_t index =
          static_cast<std::size_t>(p - network.parameters().data());
      read_array(entry, is_m ? adam->m[index] : adam->v[index]);
      continue;
    }
    Parameter* p = network.find_parameter(entry.name);
    check_input(p != nullptr, "load_checkpoint: network has no parameter '" + entry.name + "'");
    check_input(p->shape == entry.shape && p->count() == entry.count,
                "load_checkpoint: shape mismatch on '" + entry.name + "'");
    read_array(entry, p->values);
    ++matched;
  }
  check_input(matched == network.parameters().size(),
              "load_checkpoint: '" + stem + "' holds " + std::to_string(matched) + " of " +
                  std::to_string(network.parameters().size()) + " parameter arrays");
  return info;
}

namespace {

json log_record(std::int64_t step, int epoch, double lr, const LossBreakdown& bd) {
  json alpha = json::array();
  for (const auto& pair : bd.mean_alpha) alpha.push_back({pair[0], pair[1]});
  return json{{"step", step},
              {"epoch", epoch},
              {"lr", lr},
              {"l_ph", bd.weighted_photometric},
              {"l_st", bd.weighted_structural},
              {"l_sm", bd.weighted_smoothness},
              {"l_bc", bd.weighted_cyclic},
              {"l_init", bd.weighted_init},
              {"total", bd.total},
              {"mean_alpha", std::move(alpha)}};
}

}  // namespace

TrainResult train_loop(const TrainConfig& config, const DatasetManifest& manifest,
                       const std::string& resume_stem) {
  config.validate();
  check_input(!manifest.records.empty(), "train_loop: empty manifest");
  check_input(!config.checkpoint_dir.empty(), "train_loop: checkpoint_dir must be set");
  fs::create_directories(config.checkpoint_dir);

  const std::string hash = config_hash(config);
  Network network = Network::build(config.network);
  AdamState adam = AdamState::init(network);

  std::int64_t step = 0;
  int start_epoch = 0;
  if (!resume_stem.empty()) {
    const CheckpointInfo info = load_checkpoint(resume_stem, network, &adam);
    check_input(info.config_hash == hash,
                "train_loop: resume checkpoint was written under config " + info.config_hash +
                    " but the current config hashes to " + hash);
    step = info.step;
    start_epoch = info.epoch;
  }

  const std::string log_path = config.checkpoint_dir + "/train_log.jsonl";
  std::ofstream log(log_path, resume_stem.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IngestionError("cannot write '" + log_path + "'");
  if (resume_stem.empty()) log << json{{"config_hash", hash}}.dump() << "\n";

  const std::size_t n = manifest.records.size();
  const std::size_t batch =
      std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), n);
  TrainResult result;
  result.steps = step;

  for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, config);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 shuffle_rng(mix_seed(config.seed, 0xE90C, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    for (std::size_t begin = 0; begin < n; begin += batch) {
      const std::size_t end = std::min(begin + batch, n);
      std::vector<StereoSample> samples;
      samples.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        const std::size_t index = order[i];
        StereoSample sample;
        try {
          sample = load_sample(manifest.records[index]);
        } catch (const IngestionError& e) {
          throw IngestionError("step " + std::to_string(step + 1) + ": " + e.what());
        }
        if (config.augment) {
          SplitMix64 rng(mix_seed(config.seed, 0xA06, static_cast<std::uint64_t>(epoch),
                                  static_cast<std::uint64_t>(index)));
          sample = augment(sample, AugmentParams::draw(rng));
        }
        samples.push_back(std::move(sample));
      }

      try {
        result.last = train_step(network, samples, config, lr, adam);
      } catch (const DivergenceError& e) {
        throw DivergenceError("step " + std::to_string(step + 1) + ": " + e.what());
      }
      ++step;
      if (step % config.log_every == 0)
        log << log_record(step, epoch, lr, result.last).dump() << "\n";
    }

    if ((epoch + 1) % config.checkpoint_every == 0 || epoch + 1 == config.epochs) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04d", epoch + 1);
      save_checkpoint(config.checkpoint_dir + "/" + name, network, adam, step, epoch + 1, hash);
      result.final_checkpoint = config.checkpoint_dir + "/" + name;
    }
  }

  log.flush();
  result.steps = step;
  result.epochs = config.epochs;
  return result;
}

}  // namespace dispkit
