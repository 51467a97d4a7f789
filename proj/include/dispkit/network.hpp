#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dispkit/raster.hpp"

namespace dispkit {

enum class Arch { kSingleBranch, kTwoBranch };

Arch parse_arch(const std::string& name);  // "single-branch" or "two-branch"
const char* to_string(Arch arch);

enum class LayerKind {
  kConv,         // kernel/stride conv + ELU
  kUpconv,       // nearest-neighbor upsample to the next finer grid, then conv + ELU
  kResidualAdd,  // parameter-free elementwise sum of two inputs
  kDispHead,     // conv + sigmoid scaled to [0, d_max_frac], emitted as disparity
};

struct LayerInput {
  std::string name;
  bool upsampled = false;  // resized (nearest) to the consumer's grid before concatenation
};

/// One row of the architecture table. Channels are the realized values; inputs
/// are concatenated in order. An empty input list means the network input.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::kConv;
  int kernel = 0;
  int stride = 1;
  int in_channels = 0;
  int out_channels = 0;
  std::vector<LayerInput> inputs;
};

/// The full layer tables of the two architectures.
std::vector<LayerSpec> single_branch_layers();
std::vector<LayerSpec> two_branch_layers();

struct NetworkConfig {
  Arch arch = Arch::kTwoBranch;
  int input_height = 256;
  int input_width = 512;
  int input_channels = 3;
  int pyramid_levels = 4;
  double d_max_frac = 0.3;  // upper bound of predicted disparity as a fraction of width
  std::uint64_t seed = 0;   // weight initialization stream

  void validate() const;
};

/// Float32 H x W x C activation raster, row-major, channel-interleaved.
struct TensorF {
  int height = 0, width = 0, channels = 0;
  std::vector<float> data;

  void resize(int h, int w, int c) {
    height = h;
    width = w;
    channels = c;
    data.assign(static_cast<std::size_t>(h) * w * c, 0.0f);
  }
  float& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

/// One learnable array. Weight layout is [ky][kx][in][out]; biases are flat.
struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;

  std::size_t count() const { return values.size(); }
};

/// Per-parameter gradient buffers, parallel to Network::parameters().
struct NetworkGradients {
  std::vector<std::vector<float>> values;

  void zero() {
    for (auto& v : values) std::fill(v.begin(), v.end(), 0.0f);
  }
  bool all_finite() const;
};

/// Activations retained by a forward pass plus backward scratch. One trace per
/// concurrent caller; the network itself stays read-only during forward.
struct ForwardTrace {
  TensorF input;
  std::vector<TensorF> activations;
  std::vector<TensorF> grads;   // backward scratch, lazily sized
  std::vector<float> gemm_ws;   // shared im2col workspace
  std::vector<float> gemm_ws2;  // shared patch-gradient workspace
};

struct ForwardResult {
  DisparityPyramid refined;
  DisparityPyramid initial;  // two-branch only; empty for single-branch

  bool has_initial() const { return !initial.scales.empty(); }
};

/// An encoder-decoder disparity network with explicit forward and backward
/// passes. Built once from a config; weights live in parameters() and are the
/// only mutable state.
class Network {
public:
  Network() = default;

  static Network build(const NetworkConfig& config);

  const NetworkConfig& config() const { return config_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Parameter* find_parameter(const std::string& name);

  /// Disparity pyramids for one image. `trace` is required when a backward
  /// pass will follow; a null trace runs inference with internal scratch.
  ForwardResult forward(const Image& image, ForwardTrace* trace = nullptr) const;

  /// Accumulate parameter gradients from pyramid-level disparity gradients
  /// (pixels of each scale's own grid, as produced by the pyramid losses).
  /// `initial_grads` must be given iff the architecture is two-branch.
  void backward(ForwardTrace& trace, const PyramidGradients& refined_grads,
                const PyramidGradients* initial_grads, NetworkGradients& grads) const;

  NetworkGradients zero_gradients() const;

  /// (height, width) of the grid at pyramid scale r.
  std::array<int, 2> scale_shape(int r) const;

private:
  struct Node {
    LayerSpec spec;
    int downscale = 1;       // spatial factor relative to the input grid
    int height = 0, width = 0;
    std::vector<int> input_nodes;  // -1 = network input
    int weight_param = -1;
    int bias_param = -1;
  };

  void wire(const NetworkConfig& config, std::vector<LayerSpec> table);
  void init_parameters();
  TensorF assemble_input(const Node& node, const ForwardTrace& trace) const;

  NetworkConfig config_;
  std::vector<LayerSpec> layers_;
  std::vector<Parameter> params_;
  std::vector<Node> nodes_;
  std::vector<int> refined_heads_;  // node index per scale, finest first
  std::vector<int> initial_heads_;
};

std::size_t count_parameters(const Network& network);

}  // namespace dispkit
