#include "dispkit/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dispkit/image_io.hpp"

namespace dispkit {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::string strip_png_suffix(std::string path) {
  if (path.size() > 4 && path.compare(path.size() - 4, 4, ".png") == 0)
    path.resize(path.size() - 4);
  return path;
}

double parse_double(const std::string& text, const std::string& context) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ParseError(context + ": cannot parse number '" + text + "'");
  }
}

long parse_long(const std::string& text, const std::string& context) {
  try {
    std::size_t used = 0;
    const long v = std::stol(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ParseError(context + ": cannot parse integer '" + text + "'");
  }
}

std::uint64_t parse_seed(const std::string& text, const std::string& context) {
  try {
    std::size_t used = 0;
    const std::uint64_t v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ParseError(context + ": cannot parse seed '" + text + "'");
  }
}

/// Split "key=value"; throws ParseError when '=' is absent.
std::pair<std::string, std::string> split_key_value(const std::string& token,
                                                    const std::string& context) {
  const auto eq = token.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ParseError(context + ": expected key=value, got '" + token + "'");
  return {trim(token.substr(0, eq)), trim(token.substr(eq + 1))};
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Procedural layer texture, evaluated on the integer pixel lattice of the
/// left view. Both views sample the same (u, v) for corresponding surface
/// points, which is what makes the generator an exact warp oracle. The
/// horizontal wavelength stays between 31 and 63 pixels so the photometric
/// basin around the true shift is wide and free of aliases within the
/// disparity range a desk-scale network can emit; the faint grain keeps
/// distinct surfaces distinguishable near the minimum.
double texture_value(std::uint64_t seed, int u, int v, int c) {
  SplitMix64 keyed(mix_seed(seed, 0xA11CEu, static_cast<std::uint64_t>(c)));
  const double f1 = 0.016 + 0.016 * keyed.uniform();
  const double f2 = 0.01 + 0.03 * keyed.uniform();
  const double phase = keyed.uniform();
  const double wave = std::sin(2.0 * 3.141592653589793 * (u * f1 + v * f2 + phase));
  const double grain = hash_uniform(seed, u, v, c) - 0.5;
  return 0.5 + 0.36 * wave + 0.06 * grain;
}

/// Integer disparity of a plane at `depth`; validated by SceneSpec::validate.
int plane_disparity(const CameraRig& rig, double depth) {
  return static_cast<int>(std::llround(rig.focal_length * rig.baseline / depth));
}

struct VisibleSurface {
  int layer = -1;  // -1 = background
  int disparity = 0;
  std::uint64_t seed = 0;
  double depth = 0.0;
};

}  // namespace

std::string SampleRecord::id() const {
  std::string out = strip_png_suffix(relative);
  std::replace(out.begin(), out.end(), '/', '_');
  return out;
}

DatasetManifest load_manifest(const std::string& root, const std::string& manifest_path,
                              const std::string& split) {
  std::ifstream in(manifest_path);
  if (!in) throw IngestionError("cannot open manifest '" + manifest_path + "'");
  DatasetManifest manifest;
  manifest.root = root;
  manifest.split = split;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    manifest.records.push_back({root, strip_png_suffix(line)});
  }
  return manifest;
}

CameraRig parse_calibration(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open calibration '" + path + "'");
  CameraRig rig;
  bool have_f = false, have_b = false;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto [key, value] = split_key_value(line, path);
    if (key == "F") {
      rig.focal_length = parse_double(value, path);
      have_f = true;
    } else if (key == "B") {
      rig.baseline = parse_double(value, path);
      have_b = true;
    } else {
      throw ParseError(path + ": unknown calibration key '" + key + "'");
    }
  }
  if (!have_f || !have_b)
    throw ParseError(path + ": calibration needs both F= and B= lines");
  try {
    rig.validate();
  } catch (const InvalidInputError& e) {
    throw ParseError(path + ": " + e.what());
  }
  return rig;
}

StereoSample load_sample(const SampleRecord& record) {
  const std::string relative = strip_png_suffix(record.relative);
  const auto slash = relative.rfind('/');
  if (slash == std::string::npos || slash == 0 || slash + 1 == relative.size())
    throw IngestionError("sample path '" + record.relative +
                         "' is not of the form <sequence>/<frame>");
  const std::string sequence = record.root + "/" + relative.substr(0, slash);
  const std::string frame = relative.substr(slash + 1) + ".png";

  StereoSample sample;
  sample.left = read_image_png(sequence + "/image_left/" + frame);
  sample.right = read_image_png(sequence + "/image_right/" + frame);
  sample.rig = parse_calibration(sequence + "/calib.txt");

  const auto optional_raw16 = [&](const char* dir) -> std::optional<ScalarField> {
    const std::string path = sequence + "/" + dir + "/" + frame;
    if (!fs::exists(path)) return std::nullopt;
    return read_raw16_png(path);
  };
  if (auto raw = optional_raw16("gt_depth")) {
    for (double& v : raw->data) v /= 256.0;
    sample.gt_depth = std::move(*raw);
  }
  if (auto raw = optional_raw16("gt_disparity")) {
    for (double& v : raw->data) v /= 256.0;
    sample.gt_disparity = std::move(*raw);
  }
  if (auto raw = optional_raw16("gt_disparity_right")) {
    for (double& v : raw->data) v /= 256.0;
    sample.gt_disparity_right = std::move(*raw);
  }
  const auto optional_mask = [&](const char* dir) -> std::optional<Mask> {
    const std::string path = sequence + "/" + dir + "/" + frame;
    if (!fs::exists(path)) return std::nullopt;
    const ScalarField raw = read_raw16_png(path);
    Mask mask(raw.height, raw.width);
    for (std::size_t i = 0; i < raw.data.size(); ++i) mask.data[i] = raw.data[i] > 0.0 ? 1 : 0;
    return mask;
  };
  sample.covis_left = optional_mask("covis_left");
  sample.covis_right = optional_mask("covis_right");

  sample.validate();
  return sample;
}

AugmentParams AugmentParams::draw(SplitMix64& rng) {
  AugmentParams p;
  p.flip = rng.uniform() < 0.5;
  p.color = rng.uniform() < 0.5;
  p.gamma = rng.uniform(0.8, 1.2);
  p.brightness = rng.uniform(0.5, 1.5);
  for (double& s : p.channel_scale) s = rng.uniform(0.8, 1.2);
  return p;
}

namespace {

Image mirror_horizontal(const Image& img) {
  Image out(img.height, img.width, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
  return out;
}

void apply_color(Image& img, const AugmentParams& p) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double v = std::pow(img.at(y, x, c), p.gamma) * p.brightness;
        v *= p.channel_scale[c % 3];
        img.at(y, x, c) = std::clamp(v, 0.0, 1.0);
      }
}

}  // namespace

StereoSample augment(const StereoSample& sample, const AugmentParams& params) {
  sample.validate();
  StereoSample out;
  out.rig = sample.rig;
  if (params.flip) {
    // Mirroring swaps the roles: the reflected right image sits where a left
    // camera would be, and vice versa.
    out.left = mirror_horizontal(sample.right);
    out.right = mirror_horizontal(sample.left);
  } else {
    out.left = sample.left;
    out.right = sample.right;
  }
  if (params.color) {
    apply_color(out.left, params);
    apply_color(out.right, params);
  }
  return out;
}

void SceneSpec::validate() const {
  check_input(width >= 2 && height >= 1,
              "SceneSpec: image size must be at least 2x1, got " + std::to_string(height) + "x" +
                  std::to_string(width));
  rig.validate();
  check_input(background_depth > 0.0, "SceneSpec: background depth must be positive");

  const auto integer_disparity = [&](double depth, const std::string& what) {
    const double d = rig.focal_length * rig.baseline / depth;
    check_input(std::abs(d - std::llround(d)) <= 1e-9,
                "SceneSpec: " + what + " maps to non-integer disparity " + std::to_string(d) +
                    "; the generator only renders whole-pixel shifts");
    check_input(d >= 0.0 && d < width,
                "SceneSpec: " + what + " disparity " + std::to_string(d) +
                    " must lie in [0, width)");
  };
  integer_disparity(background_depth, "background");

  const int d_bg = plane_disparity(rig, background_depth);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const SceneLayer& a = layers[i];
    check_input(a.width >= 1 && a.height >= 1,
                "SceneSpec: layer " + std::to_string(i) + " has empty extent");
    check_input(a.depth > 0.0, "SceneSpec: layer " + std::to_string(i) + " depth must be positive");
    integer_disparity(a.depth, "layer " + std::to_string(i));
    const int d_a = plane_disparity(rig, a.depth);
    check_input(d_a != d_bg, "SceneSpec: layer " + std::to_string(i) +
                                 " sits at the background depth; occlusion would be ambiguous");
    for (std::size_t j = 0; j < i; ++j) {
      const SceneLayer& b = layers[j];
      if (plane_disparity(rig, b.depth) != d_a) continue;
      const bool overlap = a.x < b.x + b.width && b.x < a.x + a.width && a.y < b.y + b.height &&
                           b.y < a.y + a.height;
      check_input(!overlap, "SceneSpec: layers " + std::to_string(j) + " and " + std::to_string(i) +
                                " overlap at equal depth; order would be ambiguous");
    }
  }
}

namespace {

/// Which surface is visible at (x, y)? `view_shift` is 0 for the left view
/// and the per-layer disparity for the right view (layers move left by their
/// disparity between the views). Nearest surface = largest disparity.
VisibleSurface visible_at(const SceneSpec& spec, int x, int y, bool right_view) {
  VisibleSurface best;
  best.layer = -1;
  best.disparity = plane_disparity(spec.rig, spec.background_depth);
  best.seed = spec.background_seed;
  best.depth = spec.background_depth;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const SceneLayer& layer = spec.layers[i];
    const int d = plane_disparity(spec.rig, layer.depth);
    const int x_left_frame = right_view ? x + d : x;
    const bool covers = x_left_frame >= layer.x && x_left_frame < layer.x + layer.width &&
                        y >= layer.y && y < layer.y + layer.height;
    if (covers && d > best.disparity) {
      best.layer = static_cast<int>(i);
      best.disparity = d;
      best.seed = layer.texture_seed;
      best.depth = layer.depth;
    }
  }
  return best;
}

}  // namespace

StereoSample synth_generate(const SceneSpec& spec) {
  spec.validate();
  const int h = spec.height, w = spec.width;

  std::vector<VisibleSurface> left_vis(static_cast<std::size_t>(h) * w);
  std::vector<VisibleSurface> right_vis(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      left_vis[static_cast<std::size_t>(y) * w + x] = visible_at(spec, x, y, false);
      right_vis[static_cast<std::size_t>(y) * w + x] = visible_at(spec, x, y, true);
    }

  StereoSample sample;
  sample.rig = spec.rig;
  sample.left = Image(h, w, 3);
  sample.right = Image(h, w, 3);
  sample.gt_depth = ScalarField(h, w);
  sample.gt_disparity = ScalarField(h, w);
  sample.gt_disparity_right = ScalarField(h, w);
  sample.covis_left = Mask(h, w);
  sample.covis_right = Mask(h, w);

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const VisibleSurface& lv = left_vis[static_cast<std::size_t>(y) * w + x];
      const VisibleSurface& rv = right_vis[static_cast<std::size_t>(y) * w + x];
      for (int c = 0; c < 3; ++c) {
        // Texture coordinates live on the left-view lattice; the right view
        // reads the same surface point shifted by its disparity.
        sample.left.at(y, x, c) = texture_value(lv.seed, x, y, c);
        sample.right.at(y, x, c) = texture_value(rv.seed, x + rv.disparity, y, c);
      }
      sample.gt_depth->at(y, x) = lv.depth;
      sample.gt_disparity->at(y, x) = lv.disparity;
      sample.gt_disparity_right->at(y, x) = rv.disparity;

      const int xr = x - lv.disparity;
      sample.covis_left->at(y, x) =
          xr >= 0 && xr < w && right_vis[static_cast<std::size_t>(y) * w + xr].layer == lv.layer
              ? 1
              : 0;
      const int xl = x + rv.disparity;
      sample.covis_right->at(y, x) =
          xl >= 0 && xl < w && left_vis[static_cast<std::size_t>(y) * w + xl].layer == rv.layer
              ? 1
              : 0;
    }

  sample.validate();
  return sample;
}

SceneSpec parse_scene(const std::string& text) {
  SceneSpec spec;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string context = "scene line " + std::to_string(lineno);

    if (line.rfind("layer:", 0) == 0) {
      SceneLayer layer;
      std::istringstream tokens(line.substr(6));
      std::string token;
      while (tokens >> token) {
        const auto [key, value] = split_key_value(token, context);
        if (key == "x") layer.x = static_cast<int>(parse_long(value, context));
        else if (key == "y") layer.y = static_cast<int>(parse_long(value, context));
        else if (key == "w") layer.width = static_cast<int>(parse_long(value, context));
        else if (key == "h") layer.height = static_cast<int>(parse_long(value, context));
        else if (key == "depth") layer.depth = parse_double(value, context);
        else if (key == "seed") layer.texture_seed = parse_seed(value, context);
        else throw ParseError(context + ": unknown layer key '" + key + "'");
      }
      spec.layers.push_back(layer);
      continue;
    }

    const auto [key, value] = split_key_value(line, context);
    if (key == "width") spec.width = static_cast<int>(parse_long(value, context));
    else if (key == "height") spec.height = static_cast<int>(parse_long(value, context));
    else if (key == "focal") spec.rig.focal_length = parse_double(value, context);
    else if (key == "baseline") spec.rig.baseline = parse_double(value, context);
    else if (key == "background_depth") spec.background_depth = parse_double(value, context);
    else if (key == "background_seed") spec.background_seed = parse_seed(value, context);
    else throw ParseError(context + ": unknown scene key '" + key + "'");
  }
  spec.validate();
  return spec;
}

SceneSpec load_scene(const std::string& path) {
  try {
    return parse_scene(read_text_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::string serialize_scene(const SceneSpec& spec) {
  std::ostringstream out;
  char buf[64];
  const auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  out << "width=" << spec.width << "\n";
  out << "height=" << spec.height << "\n";
  out << "focal=" << num(spec.rig.focal_length) << "\n";
  out << "baseline=" << num(spec.rig.baseline) << "\n";
  out << "background_depth=" << num(spec.background_depth) << "\n";
  out << "background_seed=" << spec.background_seed << "\n";
  for (const SceneLayer& layer : spec.layers)
    out << "layer: x=" << layer.x << " y=" << layer.y << " w=" << layer.width
        << " h=" << layer.height << " depth=" << num(layer.depth) << " seed=" << layer.texture_seed
        << "\n";
  return out.str();
}

SceneSpec random_scene(int height, int width, const CameraRig& rig, std::uint64_t seed) {
  check_input(width >= 16 && height >= 8,
              "random_scene: image size must be at least 8x16, got " + std::to_string(height) +
                  "x" + std::to_string(width));
  SplitMix64 rng(mix_seed(seed, 0x5CE11Eu));
  SceneSpec spec;
  spec.width = width;
  spec.height = height;
  spec.rig = rig;
  const double fb = rig.focal_length * rig.baseline;

  const int d_bg = 1 + static_cast<int>(rng.below(2));  // 1 or 2 pixels
  spec.background_depth = fb / d_bg;
  spec.background_seed = rng.next();

  // Foreground disparities stay distinct and within the network's output
  // range (0.3 * width) with room to spare.
  const int d_max = std::min(width / 8, 8);
  std::vector<int> pool;
  for (int d = d_bg + 1; d <= d_max; ++d) pool.push_back(d);
  const int n_layers = 1 + static_cast<int>(rng.below(std::min<std::uint64_t>(3, pool.size())));
  for (int i = 0; i < n_layers; ++i) {
    const std::size_t pick = rng.below(pool.size());
    const int d = pool[pick];
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));

    SceneLayer layer;
    layer.width = width / 4 + static_cast<int>(rng.below(static_cast<std::uint64_t>(width) / 4));
    layer.height = height / 3 + static_cast<int>(rng.below(static_cast<std::uint64_t>(height) / 3));
    layer.x = d_max + static_cast<int>(rng.below(
                          static_cast<std::uint64_t>(std::max(1, width - layer.width - d_max))));
    layer.y = static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, height - layer.height))));
    layer.depth = fb / d;
    layer.texture_seed = rng.next();
    spec.layers.push_back(layer);
  }
  spec.validate();
  return spec;
}

void write_synthetic_dataset(const std::string& root, const std::vector<SceneSpec>& scenes) {
  check_input(!scenes.empty(), "write_synthetic_dataset: no scenes given");
  fs::create_directories(root);
  std::ofstream manifest(root + "/manifest.txt");
  if (!manifest) throw IngestionError("cannot write '" + root + "/manifest.txt'");

  for (std::size_t i = 0; i < scenes.size(); ++i) {
    char seq_name[32];
    std::snprintf(seq_name, sizeof(seq_name), "scene%03zu", i);
    const std::string seq = root + "/" + seq_name;
    for (const char* dir : {"image_left", "image_right", "gt_depth", "gt_disparity",
                            "gt_disparity_right", "covis_left", "covis_right"})
      fs::create_directories(seq + "/" + dir);

    const StereoSample sample = synth_generate(scenes[i]);
    write_image_png(seq + "/image_left/000000.png", sample.left);
    write_image_png(seq + "/image_right/000000.png", sample.right);

    const auto scaled = [](const ScalarField& f, double factor) {
      ScalarField out = f;
      for (double& v : out.data) v *= factor;
      return out;
    };
    write_raw16_png(seq + "/gt_depth/000000.png", scaled(*sample.gt_depth, 256.0));
    write_raw16_png(seq + "/gt_disparity/000000.png", scaled(*sample.gt_disparity, 256.0));
    write_raw16_png(seq + "/gt_disparity_right/000000.png",
                    scaled(*sample.gt_disparity_right, 256.0));

    const auto mask_counts = [](const Mask& m) {
      ScalarField out(m.height, m.width);
      for (std::size_t k = 0; k < m.data.size(); ++k) out.data[k] = m.data[k] ? 65535.0 : 0.0;
      return out;
    };
    write_raw16_png(seq + "/covis_left/000000.png", mask_counts(*sample.covis_left));
    write_raw16_png(seq + "/covis_right/000000.png", mask_counts(*sample.covis_right));

    std::ofstream calib(seq + "/calib.txt");
    if (!calib) throw IngestionError("cannot write '" + seq + "/calib.txt'");
    char line[96];
    std::snprintf(line, sizeof(line), "F=%.17g\nB=%.17g\n", scenes[i].rig.focal_length,
                  scenes[i].rig.baseline);
    calib << line;

    std::ofstream scene_file(seq + "/scene.txt");
    if (!scene_file) throw IngestionError("cannot write '" + seq + "/scene.txt'");
    scene_file << serialize_scene(scenes[i]);

    manifest << seq_name << "/000000.png\n";
  }
}

}  // namespace dispkit
