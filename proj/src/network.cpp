#include "dispkit/network.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "dispkit/rng.hpp"

namespace dispkit {

Arch parse_arch(const std::string& name) {
  if (name == "single-branch") return Arch::kSingleBranch;
  if (name == "two-branch") return Arch::kTwoBranch;
  throw InvalidInputError("unknown architecture '" + name +
                          "' (expected single-branch or two-branch)");
}

const char* to_string(Arch arch) {
  return arch == Arch::kSingleBranch ? "single-branch" : "two-branch";
}

namespace {

// Compact table rows; kind codes: C conv, U upconv, A residual add, H head.
// Inputs are comma separated, '*' marks a feed upsampled to the consumer grid.
struct Row {
  const char* name;
  char kind;
  int k, s, in, out;
  const char* inputs;
};

constexpr Row kSingleBranch[] = {
    {"conv1", 'C', 7, 2, 3, 32, ""},
    {"conv1b", 'C', 7, 1, 32, 32, "conv1"},
    {"conv2", 'C', 5, 2, 32, 64, "conv1b"},
    {"conv2b", 'C', 5, 1, 64, 64, "conv2"},
    {"conv3", 'C', 3, 2, 64, 128, "conv2b"},
    {"conv3b", 'C', 3, 1, 128, 128, "conv3"},
    {"conv4", 'C', 3, 2, 128, 256, "conv3b"},
    {"conv4b", 'C', 3, 1, 256, 256, "conv4"},
    {"conv5", 'C', 3, 2, 256, 512, "conv4b"},
    {"conv5b", 'C', 3, 1, 512, 512, "conv5"},
    {"conv6", 'C', 3, 2, 512, 512, "conv5b"},
    {"conv6b", 'C', 3, 1, 512, 512, "conv6"},
    {"conv7", 'C', 3, 2, 512, 512, "conv6b"},
    {"conv7b", 'C', 3, 1, 512, 512, "conv7"},
    {"upconv7", 'U', 3, 2, 512, 512, "conv7b"},
    {"iconv7", 'C', 3, 1, 1024, 512, "upconv7,conv6b"},
    {"upconv6", 'U', 3, 2, 512, 512, "iconv7"},
    {"iconv6", 'C', 3, 1, 1024, 512, "upconv6,conv5b"},
    {"upconv5", 'U', 3, 2, 512, 256, "iconv6"},
    {"iconv5", 'C', 3, 1, 512, 256, "upconv5,conv4b"},
    {"upconv4", 'U', 3, 2, 256, 128, "iconv5"},
    {"iconv4", 'C', 3, 1, 256, 128, "upconv4,conv3b"},
    {"disp4", 'H', 3, 1, 128, 2, "iconv4"},
    {"upconv3", 'U', 3, 2, 128, 64, "iconv4"},
    {"iconv3", 'C', 3, 1, 130, 64, "upconv3,conv2b,disp4*"},
    {"disp3", 'H', 3, 1, 64, 2, "iconv3"},
    {"upconv2", 'U', 3, 2, 64, 32, "iconv3"},
    {"iconv2", 'C', 3, 1, 66, 32, "upconv2,conv1b,disp3*"},
    {"disp2", 'H', 3, 1, 32, 2, "iconv2"},
    {"upconv1", 'U', 3, 2, 32, 16, "iconv2"},
    {"iconv1", 'C', 3, 1, 18, 16, "upconv1,disp2*"},
    {"disp1", 'H', 3, 1, 16, 2, "iconv1"},
};

constexpr Row kTwoBranch[] = {
    {"conv0", 'C', 7, 1, 3, 32, ""},
    {"conv1", 'C', 7, 2, 32, 32, "conv0"},
    {"conv1b", 'C', 7, 1, 32, 32, "conv1"},
    {"conv2", 'C', 5, 2, 32, 64, "conv1b"},
    {"conv2b", 'C', 5, 1, 64, 64, "conv2"},
    {"conv3", 'C', 3, 2, 64, 128, "conv2b"},
    {"conv3b", 'C', 3, 1, 128, 128, "conv3"},
    {"conv4", 'C', 3, 2, 128, 256, "conv3b"},
    {"conv4b", 'C', 3, 1, 256, 256, "conv4"},
    {"conv5", 'C', 3, 2, 256, 512, "conv4b"},
    {"conv5b", 'C', 3, 1, 512, 512, "conv5"},
    {"conv6", 'C', 3, 2, 512, 512, "conv5b"},
    {"conv6b", 'C', 3, 1, 512, 512, "conv6"},
    {"iupconv6", 'U', 3, 2, 512, 512, "conv6b"},
    {"iconv6", 'C', 3, 1, 1024, 512, "iupconv6,conv5b"},
    {"iupconv5", 'U', 3, 2, 512, 256, "iconv6"},
    {"iconv5", 'C', 3, 1, 512, 256, "iupconv5,conv4b"},
    {"iupconv4", 'U', 3, 2, 256, 128, "iconv5"},
    {"iconv4", 'C', 3, 1, 256, 128, "iupconv4,conv3b"},
    {"idisp4", 'H', 3, 1, 128, 2, "iconv4"},
    {"sconv4", 'C', 3, 1, 128, 128, "conv3b"},
    {"sconv4b", 'C', 3, 1, 128, 128, "sconv4"},
    {"rskip4", 'A', 0, 1, 128, 128, "conv3b,sconv4b"},
    {"rconv4", 'C', 3, 1, 258, 128, "iconv4,idisp4,rskip4"},
    {"rdisp4", 'H', 3, 1, 128, 2, "rconv4"},
    {"iupconv3", 'U', 3, 2, 128, 64, "iconv4"},
    {"iconv3", 'C', 3, 1, 130, 64, "iupconv3,conv2b,idisp4*"},
    {"idisp3", 'H', 3, 1, 64, 2, "iconv3"},
    {"sconv3", 'C', 3, 1, 64, 64, "conv2b"},
    {"sconv3b", 'C', 3, 1, 64, 64, "sconv3"},
    {"rskip3", 'A', 0, 1, 64, 64, "conv2b,sconv3b"},
    {"rupconv3", 'U', 3, 2, 128, 64, "rconv4"},
    {"rconv3", 'C', 3, 1, 196, 64, "iconv3,idisp3,rupconv3,rskip3,rdisp4*"},
    {"rdisp3", 'H', 3, 1, 64, 2, "rconv3"},
    {"iupconv2", 'U', 3, 2, 64, 32, "iconv3"},
    {"iconv2", 'C', 3, 1, 66, 32, "iupconv2,conv1b,idisp3*"},
    {"idisp2", 'H', 3, 1, 32, 2, "iconv2"},
    {"sconv2", 'C', 3, 1, 32, 32, "conv1b"},
    {"sconv2b", 'C', 3, 1, 32, 32, "sconv2"},
    {"rskip2", 'A', 0, 1, 32, 32, "conv1b,sconv2b"},
    {"rupconv2", 'U', 3, 2, 64, 32, "rconv3"},
    {"rconv2", 'C', 3, 1, 100, 32, "iconv2,idisp2,rupconv2,rskip2,rdisp3*"},
    {"rdisp2", 'H', 3, 1, 32, 2, "rconv2"},
    {"iupconv1", 'U', 3, 2, 32, 16, "iconv2"},
    {"iconv1", 'C', 3, 1, 18, 16, "iupconv1,idisp2*"},
    {"idisp1", 'H', 3, 1, 16, 2, "iconv1"},
    {"sconv1", 'C', 3, 1, 32, 32, "conv0"},
    {"sconv1b", 'C', 3, 1, 32, 32, "sconv1"},
    {"rskip1", 'A', 0, 1, 32, 32, "conv0,sconv1b"},
    {"rupconv1", 'U', 3, 2, 32, 16, "rconv2"},
    {"rconv1", 'C', 3, 1, 68, 16, "iconv1,idisp1,rupconv1,rskip1,rdisp2*"},
    {"rdisp1", 'H', 5, 1, 16, 2, "rconv1"},
};

LayerKind kind_of(char code) {
  switch (code) {
    case 'C': return LayerKind::kConv;
    case 'U': return LayerKind::kUpconv;
    case 'A': return LayerKind::kResidualAdd;
    default: return LayerKind::kDispHead;
  }
}

std::vector<LayerInput> parse_inputs(const char* text) {
  std::vector<LayerInput> inputs;
  std::istringstream stream(text);
  std::string token;
  while (std::getline(stream, token, ',')) {
    LayerInput in;
    if (!token.empty() && token.back() == '*') {
      in.upsampled = true;
      token.pop_back();
    }
    in.name = token;
    inputs.push_back(std::move(in));
  }
  return inputs;
}

template <std::size_t N>
std::vector<LayerSpec> table_to_specs(const Row (&rows)[N]) {
  std::vector<LayerSpec> specs;
  specs.reserve(N);
  for (const Row& r : rows) {
    LayerSpec s;
    s.name = r.name;
    s.kind = kind_of(r.kind);
    s.kernel = r.k;
    s.stride = r.s;
    s.in_channels = r.in;
    s.out_channels = r.out;
    s.inputs = parse_inputs(r.inputs);
    specs.push_back(std::move(s));
  }
  return specs;
}

int ceil_div(int a, int b) { return (a + b - 1) / b; }

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatF = Eigen::Map<MatF>;
using MapConstMatF = Eigen::Map<const MatF>;

// Keep im2col blocks at ~16 MB so large-resolution passes stay bounded.
constexpr std::size_t kGemmBlockFloats = std::size_t{1} << 22;

struct Padding {
  int top, left;
};

Padding same_padding(int in_h, int in_w, int out_h, int out_w, int k, int s) {
  const int pad_h = std::max((out_h - 1) * s + k - in_h, 0);
  const int pad_w = std::max((out_w - 1) * s + k - in_w, 0);
  return {pad_h / 2, pad_w / 2};
}

void fill_im2col_block(const TensorF& in, int k, int s, const Padding& pad, int out_w, int p0,
                       int p1, float* ws) {
  const int cols = k * k * in.channels;
  for (int p = p0; p < p1; ++p) {
    float* row = ws + static_cast<std::size_t>(p - p0) * cols;
    const int oy = p / out_w;
    const int ox = p % out_w;
    int col = 0;
    for (int ky = 0; ky < k; ++ky) {
      const int iy = oy * s - pad.top + ky;
      for (int kx = 0; kx < k; ++kx) {
        const int ix = ox * s - pad.left + kx;
        if (iy < 0 || iy >= in.height || ix < 0 || ix >= in.width) {
          std::fill(row + col, row + col + in.channels, 0.0f);
        } else {
          const float* src = in.data.data() +
                             (static_cast<std::size_t>(iy) * in.width + ix) * in.channels;
          std::copy(src, src + in.channels, row + col);
        }
        col += in.channels;
      }
    }
  }
}

void conv_forward(const TensorF& in, const Parameter& weight, const Parameter& bias, int k, int s,
                  TensorF& out, std::vector<float>& ws) {
  const int out_rows = out.height * out.width;
  const int cols = k * k * in.channels;
  const int co = out.channels;
  const Padding pad = same_padding(in.height, in.width, out.height, out.width, k, s);
  const int block = std::max<int>(1, static_cast<int>(kGemmBlockFloats / cols));
  ws.resize(static_cast<std::size_t>(std::min(block, out_rows)) * cols);

  MapConstMatF w(weight.values.data(), cols, co);
  for (int p0 = 0; p0 < out_rows; p0 += block) {
    const int p1 = std::min(p0 + block, out_rows);
    fill_im2col_block(in, k, s, pad, out.width, p0, p1, ws.data());
    MapConstMatF patches(ws.data(), p1 - p0, cols);
    MapMatF dst(out.data.data() + static_cast<std::size_t>(p0) * co, p1 - p0, co);
    dst.noalias() = patches * w;
  }
  MapMatF all(out.data.data(), out_rows, co);
  all.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bias.values.data(), co);
}

void conv_backward(const TensorF& in, const Parameter& weight, int k, int s,
                   const TensorF& grad_out, TensorF* grad_in, std::vector<float>& grad_w,
                   std::vector<float>& grad_b, std::vector<float>& ws,
                   std::vector<float>& ws2) {
  const int out_rows = grad_out.height * grad_out.width;
  const int cols = k * k * in.channels;
  const int co = grad_out.channels;
  const Padding pad = same_padding(in.height, in.width, grad_out.height, grad_out.width, k, s);
  const int block = std::max<int>(1, static_cast<int>(kGemmBlockFloats / cols));
  ws.resize(static_cast<std::size_t>(std::min(block, out_rows)) * cols);
  ws2.resize(ws.size());

  MapConstMatF w(weight.values.data(), cols, co);
  MapMatF gw(grad_w.data(), cols, co);

  for (int p0 = 0; p0 < out_rows; p0 += block) {
    const int p1 = std::min(p0 + block, out_rows);
    const int rows = p1 - p0;
    MapConstMatF g(grad_out.data.data() + static_cast<std::size_t>(p0) * co, rows, co);

    fill_im2col_block(in, k, s, pad, grad_out.width, p0, p1, ws.data());
    MapConstMatF patches(ws.data(), rows, cols);
    gw.noalias() += patches.transpose() * g;
    // Bias gradients accumulate in a fixed per-channel order. Eigen's
    // reduction kernels round differently depending on the destination's
    // runtime alignment, which would make otherwise identical steps drift by
    // an ulp and break bitwise-reproducible checkpoint resumes.
    for (int p = 0; p < rows; ++p) {
      const float* gp = grad_out.data.data() + (static_cast<std::size_t>(p0 + p)) * co;
      for (int j = 0; j < co; ++j) grad_b[static_cast<std::size_t>(j)] += gp[j];
    }

    if (grad_in == nullptr) continue;
    MapMatF gp(ws2.data(), rows, cols);
    gp.noalias() = g * w.transpose();
    // col2im: scatter patch gradients back onto the input grid.
    for (int p = p0; p < p1; ++p) {
      const float* row = ws2.data() + static_cast<std::size_t>(p - p0) * cols;
      const int oy = p / grad_out.width;
      const int ox = p % grad_out.width;
      int col = 0;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * s - pad.top + ky;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * s - pad.left + kx;
          if (iy >= 0 && iy < in.height && ix >= 0 && ix < in.width) {
            float* dst = grad_in->data.data() +
                         (static_cast<std::size_t>(iy) * in.width + ix) * in.channels;
            for (int c = 0; c < in.channels; ++c) dst[c] += row[col + c];
          }
          col += in.channels;
        }
      }
    }
  }
}

void elu_inplace(TensorF& t) {
  for (float& v : t.data) v = v > 0.0f ? v : std::expm1f(v);
}

// ELU' recovered from the post-activation value: 1 above zero, y + 1 below.
void elu_backward_inplace(const TensorF& post, TensorF& grad) {
  for (std::size_t i = 0; i < grad.data.size(); ++i)
    grad.data[i] *= post.data[i] > 0.0f ? 1.0f : post.data[i] + 1.0f;
}

void head_activation_inplace(TensorF& t, float d_max_frac) {
  for (float& v : t.data) v = d_max_frac / (1.0f + std::exp(-v));
}

void head_backward_inplace(const TensorF& post, float d_max_frac, TensorF& grad) {
  for (std::size_t i = 0; i < grad.data.size(); ++i) {
    const float s = post.data[i] / d_max_frac;
    grad.data[i] *= d_max_frac * s * (1.0f - s);
  }
}

void resize_nearest_f(const TensorF& in, TensorF& out) {
  const double sy = static_cast<double>(in.height) / out.height;
  const double sx = static_cast<double>(in.width) / out.width;
  for (int y = 0; y < out.height; ++y) {
    const int ys = std::min(static_cast<int>((y + 0.5) * sy), in.height - 1);
    for (int x = 0; x < out.width; ++x) {
      const int xs = std::min(static_cast<int>((x + 0.5) * sx), in.width - 1);
      const float* src = in.data.data() +
                         (static_cast<std::size_t>(ys) * in.width + xs) * in.channels;
      float* dst = out.data.data() + (static_cast<std::size_t>(y) * out.width + x) * out.channels;
      std::copy(src, src + in.channels, dst);
    }
  }
}

void resize_nearest_backward_f(const TensorF& grad_out, TensorF& grad_in) {
  const double sy = static_cast<double>(grad_in.height) / grad_out.height;
  const double sx = static_cast<double>(grad_in.width) / grad_out.width;
  for (int y = 0; y < grad_out.height; ++y) {
    const int ys = std::min(static_cast<int>((y + 0.5) * sy), grad_in.height - 1);
    for (int x = 0; x < grad_out.width; ++x) {
      const int xs = std::min(static_cast<int>((x + 0.5) * sx), grad_in.width - 1);
      const float* src = grad_out.data.data() +
                         (static_cast<std::size_t>(y) * grad_out.width + x) * grad_out.channels;
      float* dst = grad_in.data.data() +
                   (static_cast<std::size_t>(ys) * grad_in.width + xs) * grad_in.channels;
      for (int c = 0; c < grad_in.channels; ++c) dst[c] += src[c];
    }
  }
}

void accumulate(const TensorF& src, TensorF& dst) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

int log2_exact(int v) {
  int l = 0;
  while ((1 << l) < v) ++l;
  return l;
}

}  // namespace

std::vector<LayerSpec> single_branch_layers() { return table_to_specs(kSingleBranch); }
std::vector<LayerSpec> two_branch_layers() { return table_to_specs(kTwoBranch); }

void NetworkConfig::validate() const {
  check_input(input_height >= 1 && input_width >= 2 && input_channels >= 1,
              "NetworkConfig: invalid input shape");
  check_input(pyramid_levels >= 1 && pyramid_levels <= 4,
              "NetworkConfig: pyramid_levels must be in [1, 4], got " +
                  std::to_string(pyramid_levels));
  const int div = 1 << (pyramid_levels - 1);
  if (input_height % div != 0 || input_width % div != 0)
    throw ConfigError("NetworkConfig: resolution " + std::to_string(input_height) + "x" +
                      std::to_string(input_width) + " is not divisible by " + std::to_string(div));
  if (input_height / div < 3 || input_width / div < 3)
    throw ConfigError("NetworkConfig: coarsest pyramid scale would be smaller than 3x3");
  check_input(d_max_frac > 0.0 && d_max_frac <= 1.0,
              "NetworkConfig: d_max_frac must be in (0, 1], got " + std::to_string(d_max_frac));
}

void Network::wire(const NetworkConfig& config, std::vector<LayerSpec> table) {
  config_ = config;
  layers_ = std::move(table);

  // Grid sizes after repeated ceil-halving; index = log2 of the downscale.
  std::vector<std::array<int, 2>> chain = {{config.input_height, config.input_width}};
  for (int i = 0; i < 8; ++i)
    chain.push_back({ceil_div(chain.back()[0], 2), ceil_div(chain.back()[1], 2)});

  std::map<std::string, int> index;
  nodes_.clear();
  params_.clear();

  for (const LayerSpec& spec : layers_) {
    Node node;
    node.spec = spec;

    int in_channels = 0;
    int base_downscale = -1;
    if (spec.inputs.empty()) {
      in_channels = config.input_channels;
      base_downscale = 1;
      node.input_nodes.push_back(-1);
    } else {
      for (const LayerInput& in : spec.inputs) {
        const auto it = index.find(in.name);
        check_input(it != index.end(),
                    "network table: '" + spec.name + "' references unknown layer '" + in.name +
                        "'");
        const Node& producer = nodes_[it->second];
        node.input_nodes.push_back(it->second);
        in_channels += producer.spec.out_channels;
        const int effective = in.upsampled ? producer.downscale / 2 : producer.downscale;
        if (base_downscale == -1) base_downscale = effective;
        check_input(effective == base_downscale,
                    "network table: '" + spec.name + "' mixes incompatible grids");
        if (spec.kind == LayerKind::kResidualAdd)
          check_input(producer.spec.out_channels == spec.in_channels,
                      "network table: '" + spec.name + "' adds mismatched widths");
      }
      check_input(spec.kind == LayerKind::kResidualAdd || in_channels == spec.in_channels,
                  "network table: '" + spec.name + "' expects " +
                      std::to_string(spec.in_channels) + " channels but is fed " +
                      std::to_string(in_channels));
    }

    switch (spec.kind) {
      case LayerKind::kConv:
      case LayerKind::kDispHead:
        node.downscale = base_downscale * spec.stride;
        break;
      case LayerKind::kUpconv:
        check_input(spec.stride == 2 && base_downscale % 2 == 0,
                    "network table: '" + spec.name + "' cannot upsample from downscale " +
                        std::to_string(base_downscale));
        node.downscale = base_downscale / 2;
        break;
      case LayerKind::kResidualAdd:
        check_input(spec.inputs.size() == 2 && spec.in_channels == spec.out_channels,
                    "network table: '" + spec.name + "' must add exactly two equal-width inputs");
        node.downscale = base_downscale;
        break;
    }
    const auto shape = chain[log2_exact(node.downscale)];
    node.height = shape[0];
    node.width = shape[1];

    if (spec.kind != LayerKind::kResidualAdd) {
      const int real_in = spec.inputs.empty() ? config.input_channels : in_channels;
      Parameter w;
      w.name = spec.name + "/weight";
      w.shape = {spec.kernel, spec.kernel, real_in, spec.out_channels};
      w.values.assign(static_cast<std::size_t>(spec.kernel) * spec.kernel * real_in *
                          spec.out_channels,
                      0.0f);
      Parameter b;
      b.name = spec.name + "/bias";
      b.shape = {spec.out_channels};
      b.values.assign(spec.out_channels, 0.0f);
      node.weight_param = static_cast<int>(params_.size());
      params_.push_back(std::move(w));
      node.bias_param = static_cast<int>(params_.size());
      params_.push_back(std::move(b));
    }

    index[spec.name] = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(node));
  }

  const bool two_branch = config.arch == Arch::kTwoBranch;
  refined_heads_.clear();
  initial_heads_.clear();
  for (int r = 0; r < config.pyramid_levels; ++r) {
    const std::string refined = two_branch ? "rdisp" + std::to_string(r + 1)
                                           : "disp" + std::to_string(r + 1);
    refined_heads_.push_back(index.at(refined));
    if (two_branch) initial_heads_.push_back(index.at("idisp" + std::to_string(r + 1)));
  }
}

void Network::init_parameters() {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& node = nodes_[i];
    if (node.weight_param < 0) continue;
    Parameter& w = params_[node.weight_param];
    const int fan_in = w.shape[0] * w.shape[1] * w.shape[2];
    const int fan_out = w.shape[0] * w.shape[1] * w.shape[3];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    SplitMix64 rng(mix_seed(config_.seed, 0x1717, i));
    for (float& v : w.values) v = static_cast<float>(rng.uniform(-limit, limit));
    // biases stay zero
  }
}

Network Network::build(const NetworkConfig& config) {
  config.validate();
  Network net;
  net.wire(config, config.arch == Arch::kSingleBranch ? single_branch_layers()
                                                      : two_branch_layers());
  net.init_parameters();
  return net;
}

Parameter* Network::find_parameter(const std::string& name) {
  for (Parameter& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

std::array<int, 2> Network::scale_shape(int r) const {
  check_input(r >= 0 && r < config_.pyramid_levels, "scale_shape: scale out of range");
  std::array<int, 2> shape = {config_.input_height, config_.input_width};
  for (int i = 0; i < r; ++i) shape = {ceil_div(shape[0], 2), ceil_div(shape[1], 2)};
  return shape;
}

TensorF Network::assemble_input(const Node& node, const ForwardTrace& trace) const {
  const bool upsampling = node.spec.kind == LayerKind::kUpconv;
  int in_h = node.height, in_w = node.width;
  if (!upsampling && node.spec.stride > 1) {
    // Stride-s conv: input grid is the producer's grid.
    const int src = node.input_nodes[0];
    const TensorF& t = src < 0 ? trace.input : trace.activations[src];
    in_h = t.height;
    in_w = t.width;
  }

  int channels = 0;
  for (int idx : node.input_nodes)
    channels += idx < 0 ? config_.input_channels : nodes_[idx].spec.out_channels;

  TensorF out;
  out.resize(in_h, in_w, channels);
  int offset = 0;
  TensorF resized;
  for (std::size_t j = 0; j < node.input_nodes.size(); ++j) {
    const int idx = node.input_nodes[j];
    const TensorF* src = idx < 0 ? &trace.input : &trace.activations[idx];
    if (src->height != in_h || src->width != in_w) {
      resized.resize(in_h, in_w, src->channels);
      resize_nearest_f(*src, resized);
      src = &resized;
    }
    for (int y = 0; y < in_h; ++y)
      for (int x = 0; x < in_w; ++x) {
        const float* s = src->data.data() +
                         (static_cast<std::size_t>(y) * in_w + x) * src->channels;
        float* d = out.data.data() + (static_cast<std::size_t>(y) * in_w + x) * channels + offset;
        std::copy(s, s + src->channels, d);
      }
    offset += src->channels;
  }
  return out;
}

ForwardResult Network::forward(const Image& image, ForwardTrace* trace) const {
  check_input(!nodes_.empty(), "Network::forward: network was not built");
  check_input(image.height == config_.input_height && image.width == config_.input_width &&
                  image.channels == config_.input_channels,
              "Network::forward: image is " + std::to_string(image.height) + "x" +
                  std::to_string(image.width) + "x" + std::to_string(image.channels) +
                  " but the network expects " + std::to_string(config_.input_height) + "x" +
                  std::to_string(config_.input_width) + "x" +
                  std::to_string(config_.input_channels));

  ForwardTrace local;
  ForwardTrace& tr = trace != nullptr ? *trace : local;
  tr.input.resize(image.height, image.width, image.channels);
  for (std::size_t i = 0; i < image.data.size(); ++i)
    tr.input.data[i] = static_cast<float>(image.data[i]);
  tr.activations.resize(nodes_.size());

  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& node = nodes_[i];
    TensorF& out = tr.activations[i];
    out.resize(node.height, node.width, node.spec.out_channels);
    switch (node.spec.kind) {
      case LayerKind::kConv: {
        const TensorF in = assemble_input(node, tr);
        conv_forward(in, params_[node.weight_param], params_[node.bias_param], node.spec.kernel,
                     node.spec.stride, out, tr.gemm_ws);
        elu_inplace(out);
        break;
      }
      case LayerKind::kUpconv: {
        const TensorF in = assemble_input(node, tr);
        conv_forward(in, params_[node.weight_param], params_[node.bias_param], node.spec.kernel,
                     1, out, tr.gemm_ws);
        elu_inplace(out);
        break;
      }
      case LayerKind::kResidualAdd: {
        const TensorF& a = tr.activations[node.input_nodes[0]];
        const TensorF& b = tr.activations[node.input_nodes[1]];
        for (std::size_t p = 0; p < out.data.size(); ++p)
          out.data[p] = a.data[p] + b.data[p];
        break;
      }
      case LayerKind::kDispHead: {
        const TensorF in = assemble_input(node, tr);
        conv_forward(in, params_[node.weight_param], params_[node.bias_param], node.spec.kernel,
                     1, out, tr.gemm_ws);
        head_activation_inplace(out, static_cast<float>(config_.d_max_frac));
        break;
      }
    }
  }

  ForwardResult result;
  const auto export_pyramid = [&](const std::vector<int>& heads, DisparityPyramid& pyr) {
    pyr.scales.resize(heads.size());
    for (std::size_t r = 0; r < heads.size(); ++r) {
      const Node& node = nodes_[heads[r]];
      const TensorF& act = tr.activations[heads[r]];
      for (int s = 0; s < 2; ++s) {
        DisparityField field(node.height, node.width, static_cast<Side>(s));
        for (int y = 0; y < node.height; ++y)
          for (int x = 0; x < node.width; ++x)
            field.at(y, x) = static_cast<double>(act.at(y, x, s)) * node.width;
        pyr.scales[r][s] = std::move(field);
      }
    }
  };
  export_pyramid(refined_heads_, result.refined);
  export_pyramid(initial_heads_, result.initial);
  return result;
}

NetworkGradients Network::zero_gradients() const {
  NetworkGradients g;
  g.values.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i)
    g.values[i].assign(params_[i].values.size(), 0.0f);
  return g;
}

bool NetworkGradients::all_finite() const {
  for (const auto& v : values)
    for (float x : v)
      if (!std::isfinite(x)) return false;
  return true;
}

void Network::backward(ForwardTrace& trace, const PyramidGradients& refined_grads,
                       const PyramidGradients* initial_grads, NetworkGradients& grads) const {
  check_input(trace.activations.size() == nodes_.size(),
              "Network::backward: trace does not match this network");
  check_input(static_cast<int>(refined_grads.scales.size()) == config_.pyramid_levels,
              "Network::backward: refined gradient pyramid has wrong depth");
  const bool two_branch = config_.arch == Arch::kTwoBranch;
  check_input((initial_grads != nullptr) == two_branch,
              two_branch ? "Network::backward: two-branch networks need initial-branch gradients"
                         : "Network::backward: single-branch networks take no initial gradients");
  check_input(grads.values.size() == params_.size(),
              "Network::backward: gradient buffers do not match the parameters");

  trace.grads.resize(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& node = nodes_[i];
    trace.grads[i].resize(node.height, node.width, node.spec.out_channels);
  }

  const auto seed_heads = [&](const std::vector<int>& heads, const PyramidGradients& src) {
    for (std::size_t r = 0; r < heads.size(); ++r) {
      const Node& node = nodes_[heads[r]];
      TensorF& g = trace.grads[heads[r]];
      for (int s = 0; s < 2; ++s) {
        const ScalarField& field = src.scales[r][s];
        check_input(field.height == node.height && field.width == node.width,
                    "Network::backward: gradient field shape mismatch at scale " +
                        std::to_string(r));
        // Emitted disparity was feature * width; chain that factor back in.
        for (int y = 0; y < node.height; ++y)
          for (int x = 0; x < node.width; ++x)
            g.at(y, x, s) += static_cast<float>(field.at(y, x) * node.width);
      }
    }
  };
  seed_heads(refined_heads_, refined_grads);
  if (two_branch) seed_heads(initial_heads_, *initial_grads);

  TensorF slice, slice_resized;
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    const Node& node = nodes_[i];
    TensorF& g_out = trace.grads[i];

    if (node.spec.kind == LayerKind::kResidualAdd) {
      accumulate(g_out, trace.grads[node.input_nodes[0]]);
      accumulate(g_out, trace.grads[node.input_nodes[1]]);
      continue;
    }

    // Deactivate in place: g_out becomes the pre-activation gradient.
    if (node.spec.kind == LayerKind::kDispHead)
      head_backward_inplace(trace.activations[i], static_cast<float>(config_.d_max_frac), g_out);
    else
      elu_backward_inplace(trace.activations[i], g_out);

    const TensorF in = assemble_input(node, trace);
    TensorF grad_in;
    grad_in.resize(in.height, in.width, in.channels);
    const int stride = node.spec.kind == LayerKind::kUpconv ? 1 : node.spec.stride;
    conv_backward(in, params_[node.weight_param], node.spec.kernel, stride, g_out, &grad_in,
                  grads.values[node.weight_param], grads.values[node.bias_param], trace.gemm_ws,
                  trace.gemm_ws2);

    // Split the assembled-input gradient back onto the producers.
    int offset = 0;
    for (std::size_t j = 0; j < node.input_nodes.size(); ++j) {
      const int idx = node.input_nodes[j];
      const int ch = idx < 0 ? config_.input_channels : nodes_[idx].spec.out_channels;
      if (idx < 0) {
        offset += ch;
        continue;  // no gradient to the input image
      }
      TensorF& dst = trace.grads[idx];
      const bool resized = nodes_[idx].height != in.height || nodes_[idx].width != in.width;
      slice.resize(in.height, in.width, ch);
      for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x) {
          const float* s = grad_in.data.data() +
                           (static_cast<std::size_t>(y) * in.width + x) * in.channels + offset;
          float* d = slice.data.data() + (static_cast<std::size_t>(y) * in.width + x) * ch;
          std::copy(s, s + ch, d);
        }
      if (resized) {
        resize_nearest_backward_f(slice, dst);
      } else {
        accumulate(slice, dst);
      }
      offset += ch;
    }
  }
}

std::size_t count_parameters(const Network& network) {
  std::size_t n = 0;
  for (const Parameter& p : network.parameters()) n += p.count();
  return n;
}

}  // namespace dispkit
