#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dispkit/data.hpp"
#include "dispkit/losses.hpp"
#include "dispkit/network.hpp"

namespace dispkit {

/// Training hyper-parameters. Defaults are the published regime: warmup at
/// 1.8e-4 for one epoch, 2e-4 through epoch 45, half that through epoch 47,
/// then a quarter of the peak; batches of 8 at 512x256 for 50 epochs.
struct TrainConfig {
  NetworkConfig network;
  LossWeights weights;
  double base_lr = 1.8e-4;
  double peak_lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 50;
  int batch_size = 8;
  bool augment = true;
  std::uint64_t seed = 0;
  std::string checkpoint_dir;
  int log_every = 1;             // log a record every N steps
  int checkpoint_every = 1;      // checkpoint every N epochs (and at the end)

  void validate() const;
};

/// Scheduled learning rate for an epoch: base_lr for epoch 0, peak_lr for
/// epochs 1-45, peak/2 for 46-47, peak/4 from 48 on.
double lr_schedule(int epoch, const TrainConfig& config);

/// Canonical key=value rendering of every hyper-parameter, and its FNV-1a
/// hash. The hash names the configuration in checkpoints, logs, and reports.
std::string serialize_config(const TrainConfig& config);
std::string config_hash(const TrainConfig& config);

/// Adam moment estimates, parallel to Network::parameters().
struct AdamState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::int64_t t = 0;

  static AdamState init(const Network& network);
};

/// One optimization step on a batch: forward and backward every sample,
/// average the parameter gradients, and apply an Adam update at `lr`. The
/// returned breakdown is the batch mean. A non-finite forward output, loss,
/// or gradient throws DivergenceError before any state is touched.
LossBreakdown train_step(Network& network, const std::vector<StereoSample>& batch,
                         const TrainConfig& config, double lr, AdamState& adam);

/// Serialized training state: "<stem>.json" index plus "<stem>.bin" payload of
/// every parameter and Adam moment as little-endian float32. Loading restores
/// the network and optimizer bitwise.
void save_checkpoint(const std::string& stem, const Network& network, const AdamState& adam,
                     std::int64_t step, int epoch, const std::string& config_hash);

struct CheckpointInfo {
  std::int64_t step = 0;
  int epoch = 0;
  std::string config_hash;
  NetworkConfig network;
};

/// Read the manifest only (to build a network before loading weights).
CheckpointInfo read_checkpoint_info(const std::string& stem);

/// Load weights and optimizer state into an already-built network; shapes must
/// match the checkpoint manifest exactly.
CheckpointInfo load_checkpoint(const std::string& stem, Network& network, AdamState* adam);

struct TrainResult {
  std::int64_t steps = 0;
  int epochs = 0;
  std::string final_checkpoint;  // stem
  LossBreakdown last;
};

/// The full loop: per-epoch deterministic shuffle, per-sample augmentation
/// streams keyed by (seed, epoch, index), scheduled learning rate, JSONL step
/// records appended to <checkpoint_dir>/train_log.jsonl, and checkpoints at
/// epoch boundaries. `resume_stem` continues a previous run bitwise.
TrainResult train_loop(const TrainConfig& config, const DatasetManifest& manifest,
                       const std::string& resume_stem = "");

}  // namespace dispkit
