#include "dispkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dispkit/imaging.hpp"
#include "dispkit/losses.hpp"
#include "dispkit/rng.hpp"
#include "dispkit/warp.hpp"

namespace dispkit {

namespace {

Image random_image(int h, int w, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Image img(h, w, 3);
  for (auto& v : img.data) v = rng.uniform();
  return img;
}

ScalarField random_field(int h, int w, std::uint64_t seed, double lo, double hi) {
  SplitMix64 rng(seed);
  ScalarField f(h, w);
  for (auto& v : f.data) v = rng.uniform(lo, hi);
  return f;
}

/// A sampling coordinate is hazardous when a 1e-6 nudge could move it across
/// an interpolation breakpoint: near an interior integer column or near the
/// border-clamp threshold. Coordinates clamped well outside the image are
/// fine; their path through the warp is locally constant on both sides of the
/// comparison.
bool hazardous_coordinate(double xs, int width, double excl) {
  if (std::abs(xs) < excl || std::abs(xs - (width - 1)) < excl) return true;
  if (xs < 0.0 || xs > width - 1.0) return false;
  return std::abs(xs - std::round(xs)) < excl;
}

struct Comparison {
  long long compared = 0;
  double max_rel = 0.0;

  void add(const ScalarField& analytic, const ScalarField& numeric,
           const std::vector<char>& skip) {
    double scale = 0.0;
    for (double v : analytic.data) scale = std::max(scale, std::abs(v));
    const double floor = std::max(1e-3 * scale, 1e-12);
    for (std::size_t i = 0; i < analytic.data.size(); ++i) {
      if (skip[i]) continue;
      const double a = analytic.data[i], f = numeric.data[i];
      max_rel = std::max(max_rel, std::abs(a - f) / std::max({std::abs(a), std::abs(f), floor}));
      ++compared;
    }
  }
};

/// Photometric and structural terms share the same left-view warp: recon(x) =
/// right(x - d(x)). `loss` is one of the two granular terms.
template <typename Loss>
void check_warped_term(const GradcheckOptions& opts, std::uint64_t term_key, int dilate,
                       const Loss& loss, Comparison& out) {
  const int h = opts.height, w = opts.width;
  for (int k = 0; k < opts.instances; ++k) {
    const Image target = random_image(h, w, mix_seed(opts.seed, term_key, k, 1));
    const Image source = random_image(h, w, mix_seed(opts.seed, term_key, k, 2));
    const ScalarField d = random_field(h, w, mix_seed(opts.seed, term_key, k, 3), 0.6, 2.4);

    const Image recon = horizontal_resample(source, d, -1);
    Image grad_recon(h, w, 3);
    loss(target, recon, &grad_recon);
    ScalarField analytic(h, w);
    horizontal_resample_backward(source, d, -1, grad_recon, nullptr, &analytic);

    const ScalarField numeric = numeric_gradient(
        [&](const ScalarField& probe) {
          return loss(target, horizontal_resample(source, probe, -1), nullptr);
        },
        d, opts.step);

    // Flag pixels whose own sampling coordinate is hazardous, or (for the
    // photometric L1) whose residual sits at the kink; dilation widens the
    // flags to every gradient entry the pixel can influence.
    std::vector<char> bad(d.data.size(), 0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        if (hazardous_coordinate(x - d.data[i], w, opts.exclusion)) bad[i] = 1;
        if (dilate == 0)  // photometric: L1 kink per channel
          for (int c = 0; c < 3; ++c)
            if (std::abs(target.at(y, x, c) - recon.at(y, x, c)) < opts.exclusion) bad[i] = 1;
      }
    std::vector<char> skip(d.data.size(), 0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        for (int dy = -dilate; dy <= dilate && !skip[i]; ++dy)
          for (int dx = -dilate; dx <= dilate && !skip[i]; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy >= 0 && yy < h && xx >= 0 && xx < w &&
                bad[static_cast<std::size_t>(yy) * w + xx])
              skip[i] = 1;
          }
      }
    out.add(analytic, numeric, skip);
  }
}

void check_smoothness(const GradcheckOptions& opts, Comparison& out) {
  const int h = opts.height, w = opts.width;
  for (int k = 0; k < opts.instances; ++k) {
    const ScalarField dfield = random_field(h, w, mix_seed(opts.seed, 0x5111, k, 1), 0.0, 3.0);
    const DisparityField d{dfield, Side::kLeft};
    const ScalarField alpha = random_field(h, w, mix_seed(opts.seed, 0x5111, k, 2), 0.5, 1.0);
    const ScalarField lambda = edge_weights(random_image(h, w, mix_seed(opts.seed, 0x5111, k, 3)));

    ScalarField analytic(h, w);
    smoothness_loss(d, alpha, lambda, &analytic);
    const ScalarField numeric = numeric_gradient(
        [&](const ScalarField& probe) {
          return smoothness_loss(DisparityField{probe, Side::kLeft}, alpha, lambda, nullptr);
        },
        dfield, opts.step);

    // d(y, x) enters the forward differences at (y, x), (y, x-1) and (y-1, x);
    // skip entries adjacent to any difference at its kink.
    const ScalarField dx = grad_x(dfield);
    const ScalarField dy = grad_y(dfield);
    std::vector<char> skip(dfield.data.size(), 0);
    const auto kink = [&](const ScalarField& g, int y, int x) {
      return y >= 0 && y < h && x >= 0 && x < w && std::abs(g.at(y, x)) < opts.exclusion;
    };
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (kink(dx, y, x) || kink(dx, y, x - 1) || kink(dy, y, x) || kink(dy, y - 1, x))
          skip[static_cast<std::size_t>(y) * w + x] = 1;
    out.add(analytic, numeric, skip);
  }
}

void check_cyclic(const GradcheckOptions& opts, Comparison& out) {
  const int h = opts.height, w = opts.width;
  for (int k = 0; k < opts.instances; ++k) {
    const ScalarField self_field = random_field(h, w, mix_seed(opts.seed, 0xC9C, k, 1), 0.6, 2.4);
    const ScalarField other_field = random_field(h, w, mix_seed(opts.seed, 0xC9C, k, 2), 0.6, 2.4);
    const DisparityField d_self{self_field, Side::kLeft};
    const DisparityField d_other{other_field, Side::kRight};
    const ScalarField alpha = random_field(h, w, mix_seed(opts.seed, 0xC9C, k, 3), 0.5, 1.0);

    const CyclicReconstruction cyc = cyclic_reconstruct(d_self, d_other);
    ScalarField analytic_self(h, w), grad_cycled(h, w), analytic_other(h, w);
    bilateral_cyclic_loss(d_self, cyc.reconstructed, alpha, &analytic_self, &grad_cycled);
    cyclic_reconstruct_backward(d_self, d_other, grad_cycled, &analytic_self, &analytic_other);

    const auto functional = [&](const ScalarField& s, const ScalarField& o) {
      const DisparityField ds{s, Side::kLeft};
      const DisparityField doo{o, Side::kRight};
      return bilateral_cyclic_loss(ds, cyclic_reconstruct(ds, doo).reconstructed, alpha, nullptr,
                                   nullptr);
    };
    const ScalarField numeric_self = numeric_gradient(
        [&](const ScalarField& probe) { return functional(probe, other_field); }, self_field,
        opts.step);
    const ScalarField numeric_other = numeric_gradient(
        [&](const ScalarField& probe) { return functional(self_field, probe); }, other_field,
        opts.step);

    // Outputs are hazardous when the outer coordinate, either inner coordinate
    // of the tapped projections, or the L1 residual sits near a breakpoint.
    std::vector<char> bad_projected(self_field.data.size(), 0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        if (hazardous_coordinate(x - self_field.data[i], w, opts.exclusion)) bad_projected[i] = 1;
      }
    std::vector<char> bad_out(self_field.data.size(), 0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        const double xs = x - self_field.data[i];
        bool bad = hazardous_coordinate(xs, w, opts.exclusion);
        const int q0 = std::clamp(static_cast<int>(std::floor(xs)), 0, w - 2);
        bad = bad || bad_projected[static_cast<std::size_t>(y) * w + q0] ||
              bad_projected[static_cast<std::size_t>(y) * w + q0 + 1];
        bad = bad ||
              std::abs(self_field.data[i] - cyc.reconstructed.field.data[i]) < opts.exclusion;
        bad_out[i] = bad ? 1 : 0;
      }
    // d_self(p) reaches outputs in columns [p-1, p+4]; d_other(p) is read by
    // projections near column p + d, reaching outputs in columns [p, p+6].
    std::vector<char> skip_self(self_field.data.size(), 0);
    std::vector<char> skip_other(self_field.data.size(), 0);
    for (int y = 0; y < h; ++y)
      for (int p = 0; p < w; ++p) {
        const auto bad_in = [&](int lo, int hi) {
          for (int x = std::max(0, p + lo); x <= std::min(w - 1, p + hi); ++x)
            if (bad_out[static_cast<std::size_t>(y) * w + x]) return true;
          return false;
        };
        skip_self[static_cast<std::size_t>(y) * w + p] = bad_in(-2, 5) ? 1 : 0;
        skip_other[static_cast<std::size_t>(y) * w + p] = bad_in(-1, 7) ? 1 : 0;
      }
    out.add(analytic_self, numeric_self, skip_self);
    out.add(analytic_other, numeric_other, skip_other);
  }
}

}  // namespace

std::vector<GradcheckTermReport> run_gradcheck(const GradcheckOptions& options) {
  check_input(options.instances >= 1, "run_gradcheck: need at least one instance");
  check_input(options.height >= 3 && options.width >= 4,
              "run_gradcheck: fields must be at least 3x4");
  check_input(options.step > 0.0 && options.exclusion > options.step,
              "run_gradcheck: exclusion radius must exceed the step");

  std::vector<GradcheckTermReport> reports;

  Comparison photometric;
  check_warped_term(
      options, 0x401, 0,
      [](const Image& t, const Image& r, Image* g) { return photometric_loss(t, r, g); },
      photometric);
  reports.push_back({"photometric", options.instances, photometric.compared,
                     photometric.max_rel});

  Comparison structural;
  // SSIM mixes a 3x3 window twice, so one hazardous pixel taints gradient
  // entries up to two pixels away.
  check_warped_term(
      options, 0x402, 2,
      [](const Image& t, const Image& r, Image* g) { return structural_loss(t, r, g); },
      structural);
  reports.push_back({"structural", options.instances, structural.compared, structural.max_rel});

  Comparison smoothness;
  check_smoothness(options, smoothness);
  reports.push_back({"smoothness", options.instances, smoothness.compared, smoothness.max_rel});

  Comparison cyclic;
  check_cyclic(options, cyclic);
  reports.push_back({"cyclic", options.instances, cyclic.compared, cyclic.max_rel});

  return reports;
}

}  // namespace dispkit
