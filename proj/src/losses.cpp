#include "dispkit/losses.hpp"

#include <algorithm>
#include <cmath>

#include "dispkit/imaging.hpp"
#include "dispkit/warp.hpp"

namespace dispkit {

namespace {

constexpr double kSsimC1 = 1e-4;  // (0.01)^2 for unit-range images
constexpr double kSsimC2 = 9e-4;  // (0.03)^2

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// 3x3 mean filter with replicated borders, and its adjoint (the scatter of the
// same clamped taps). The adjoint is what routes SSIM gradients back out of
// the window statistics.
ScalarField box3(const ScalarField& f) {
  ScalarField out(f.height, f.width);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      double s = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          s += f.at(std::clamp(y + dy, 0, f.height - 1), std::clamp(x + dx, 0, f.width - 1));
      out.at(y, x) = s / 9.0;
    }
  return out;
}

ScalarField box3_adjoint(const ScalarField& g) {
  ScalarField out(g.height, g.width, 0.0);
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      const double v = g.at(y, x) / 9.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          out.at(std::clamp(y + dy, 0, g.height - 1), std::clamp(x + dx, 0, g.width - 1)) += v;
    }
  return out;
}

ScalarField extract_channel(const Image& img, int c) {
  ScalarField out(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) out.at(y, x) = img.at(y, x, c);
  return out;
}

ScalarField multiply(const ScalarField& a, const ScalarField& b) {
  ScalarField out(a.height, a.width);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
  return out;
}

void axpy(double a, const ScalarField& x, ScalarField& y) {
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += a * x.data[i];
}

void axpy(double a, const Image& x, Image& y) {
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += a * x.data[i];
}

// Window statistics of one channel pair plus the SSIM factor maps kept for the
// backward pass: s = (A1 * A2) / (B1 * B2).
struct SsimChannel {
  ScalarField m1, m2, e22, e12;
  ScalarField a1, a2, b1, b2, s;
};

SsimChannel ssim_channel(const ScalarField& a, const ScalarField& b) {
  SsimChannel r;
  r.m1 = box3(a);
  r.m2 = box3(b);
  const ScalarField e11 = box3(multiply(a, a));
  r.e22 = box3(multiply(b, b));
  r.e12 = box3(multiply(a, b));
  const int n = a.height * a.width;
  r.a1 = ScalarField(a.height, a.width);
  r.a2 = r.a1;
  r.b1 = r.a1;
  r.b2 = r.a1;
  r.s = r.a1;
  for (int i = 0; i < n; ++i) {
    const double m1 = r.m1.data[i], m2 = r.m2.data[i];
    const double vx = e11.data[i] - m1 * m1;
    const double vy = r.e22.data[i] - m2 * m2;
    const double cov = r.e12.data[i] - m1 * m2;
    r.a1.data[i] = 2.0 * m1 * m2 + kSsimC1;
    r.a2.data[i] = 2.0 * cov + kSsimC2;
    r.b1.data[i] = m1 * m1 + m2 * m2 + kSsimC1;
    r.b2.data[i] = vx + vy + kSsimC2;
    r.s.data[i] = (r.a1.data[i] * r.a2.data[i]) / (r.b1.data[i] * r.b2.data[i]);
  }
  return r;
}

void check_pair_shapes(const Image& target, const Image& recon, const char* op) {
  check_input(target.same_shape(recon), std::string(op) + ": image shapes differ");
}

}  // namespace

double photometric_loss(const Image& target, const Image& recon, Image* grad_recon) {
  check_pair_shapes(target, recon, "photometric_loss");
  double loss = 0.0;
  for (std::size_t i = 0; i < target.data.size(); ++i) {
    const double diff = recon.data[i] - target.data[i];
    loss += std::abs(diff);
    if (grad_recon != nullptr) grad_recon->data[i] += sign_of(diff);
  }
  return loss;
}

ScalarField ssim(const Image& a, const Image& b) {
  check_pair_shapes(a, b, "ssim");
  check_input(a.height >= 3 && a.width >= 3, "ssim: images must be at least 3x3, got " +
                                                 std::to_string(a.height) + "x" +
                                                 std::to_string(a.width));
  ScalarField out(a.height, a.width, 0.0);
  for (int c = 0; c < a.channels; ++c) {
    const SsimChannel sc = ssim_channel(extract_channel(a, c), extract_channel(b, c));
    axpy(1.0 / a.channels, sc.s, out);
  }
  return out;
}

double structural_loss(const Image& target, const Image& recon, Image* grad_recon) {
  check_pair_shapes(target, recon, "structural_loss");
  check_input(target.height >= 3 && target.width >= 3,
              "structural_loss: images must be at least 3x3, got " +
                  std::to_string(target.height) + "x" + std::to_string(target.width));
  const int n = target.height * target.width;
  const double gs = -1.0 / target.channels;  // d loss / d s_c, same at every pixel
  double s_sum = 0.0;
  for (int c = 0; c < target.channels; ++c) {
    const ScalarField a = extract_channel(target, c);
    const ScalarField b = extract_channel(recon, c);
    const SsimChannel sc = ssim_channel(a, b);
    for (int i = 0; i < n; ++i) s_sum += sc.s.data[i] / target.channels;
    if (grad_recon == nullptr) continue;

    ScalarField g_m2(target.height, target.width), g_e22 = g_m2, g_e12 = g_m2;
    for (int i = 0; i < n; ++i) {
      const double m1 = sc.m1.data[i], m2 = sc.m2.data[i];
      const double a1 = sc.a1.data[i], a2 = sc.a2.data[i];
      const double b1 = sc.b1.data[i], b2 = sc.b2.data[i];
      const double s = sc.s.data[i];
      const double ds_dm2 =
          2.0 * m1 * (a2 - a1) / (b1 * b2) - s * (2.0 * m2 / b1 - 2.0 * m2 / b2);
      g_m2.data[i] = gs * ds_dm2;
      g_e22.data[i] = gs * (-s / b2);
      g_e12.data[i] = gs * (2.0 * a1 / (b1 * b2));
    }
    const ScalarField adj_m2 = box3_adjoint(g_m2);
    const ScalarField adj_e22 = box3_adjoint(g_e22);
    const ScalarField adj_e12 = box3_adjoint(g_e12);
    for (int y = 0; y < target.height; ++y)
      for (int x = 0; x < target.width; ++x)
        grad_recon->at(y, x, c) += adj_m2.at(y, x) + 2.0 * b.at(y, x) * adj_e22.at(y, x) +
                                   a.at(y, x) * adj_e12.at(y, x);
  }
  return n - s_sum;
}

ScalarField adaptive_weights(const Image& target, const Image& recon, double c) {
  check_pair_shapes(target, recon, "adaptive_weights");
  check_input(c >= 0.0, "adaptive_weights: c must be non-negative");
  ScalarField rho(target.height, target.width);
  double mu = 0.0;
  for (int y = 0; y < target.height; ++y)
    for (int x = 0; x < target.width; ++x) {
      double r = 0.0;
      for (int ch = 0; ch < target.channels; ++ch)
        r += std::abs(target.at(y, x, ch) - recon.at(y, x, ch));
      r /= target.channels;
      rho.at(y, x) = r;
      mu += r;
    }
  mu /= static_cast<double>(target.height) * target.width;
  ScalarField alpha(target.height, target.width);
  for (std::size_t i = 0; i < alpha.data.size(); ++i)
    alpha.data[i] = std::exp(-c * rho.data[i] * mu);
  return alpha;
}

ScalarField edge_weights(const Image& img, double blur_sigma) {
  const ScalarField lap = laplacian(gaussian_blur(img, blur_sigma));
  ScalarField out(lap.height, lap.width);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::exp(-std::abs(lap.data[i]));
  return out;
}

double smoothness_loss(const DisparityField& disp, const ScalarField& alpha,
                       const ScalarField& lambda, ScalarField* grad_disp) {
  check_input(alpha.same_shape(disp.field) && lambda.same_shape(disp.field),
              "smoothness_loss: weight map shapes must match the disparity field");
  check_input(disp.height() >= 2 && disp.width() >= 2,
              "smoothness_loss: field must be at least 2x2");
  const ScalarField gx = grad_x(disp.field);
  const ScalarField gy = grad_y(disp.field);
  double loss = 0.0;
  for (int y = 0; y < disp.height(); ++y)
    for (int x = 0; x < disp.width(); ++x) {
      const double w = alpha.at(y, x) * lambda.at(y, x);
      loss += w * (std::abs(gx.at(y, x)) + std::abs(gy.at(y, x)));
      if (grad_disp == nullptr) continue;
      if (x + 1 < disp.width()) {
        const double g = w * sign_of(gx.at(y, x));
        grad_disp->at(y, x) -= g;
        grad_disp->at(y, x + 1) += g;
      }
      if (y + 1 < disp.height()) {
        const double g = w * sign_of(gy.at(y, x));
        grad_disp->at(y, x) -= g;
        grad_disp->at(y + 1, x) += g;
      }
    }
  return loss;
}

double bilateral_cyclic_loss(const DisparityField& disp, const DisparityField& cycled,
                             const ScalarField& alpha, ScalarField* grad_disp,
                             ScalarField* grad_cycled) {
  check_input(disp.side == cycled.side, "bilateral_cyclic_loss: side tags differ");
  check_input(disp.field.same_shape(cycled.field) && alpha.same_shape(disp.field),
              "bilateral_cyclic_loss: shapes differ");
  double loss = 0.0;
  for (std::size_t i = 0; i < disp.field.data.size(); ++i) {
    const double diff = disp.field.data[i] - cycled.field.data[i];
    const double a = alpha.data[i];
    loss += a * std::abs(diff);
    const double g = a * sign_of(diff);
    if (grad_disp != nullptr) grad_disp->data[i] += g;
    if (grad_cycled != nullptr) grad_cycled->data[i] -= g;
  }
  return loss;
}

double init_loss(const Image& left, const Image& right, const Image& recon_left,
                 const Image& recon_right, const LossWeights& w, Image* grad_recon_left,
                 Image* grad_recon_right) {
  w.validate();
  Image g_ph_l, g_ph_r, g_st_l, g_st_r;
  const bool want_grads = grad_recon_left != nullptr || grad_recon_right != nullptr;
  if (want_grads) {
    g_ph_l = Image(left.height, left.width, left.channels, 0.0);
    g_ph_r = g_ph_l;
    g_st_l = g_ph_l;
    g_st_r = g_ph_l;
  }
  const double ph = photometric_loss(left, recon_left, want_grads ? &g_ph_l : nullptr) +
                    photometric_loss(right, recon_right, want_grads ? &g_ph_r : nullptr);
  const double st = structural_loss(left, recon_left, want_grads ? &g_st_l : nullptr) +
                    structural_loss(right, recon_right, want_grads ? &g_st_r : nullptr);
  if (grad_recon_left != nullptr) {
    axpy(w.w_ph, g_ph_l, *grad_recon_left);
    axpy(w.w_st, g_st_l, *grad_recon_left);
  }
  if (grad_recon_right != nullptr) {
    axpy(w.w_ph, g_ph_r, *grad_recon_right);
    axpy(w.w_st, g_st_r, *grad_recon_right);
  }
  return w.w_ph * ph + w.w_st * st;
}

namespace {

std::vector<std::array<Image, 2>> image_chain(const StereoSample& pair, int levels) {
  const int div = 1 << (levels - 1);
  check_input(pair.left.height % div == 0 && pair.left.width % div == 0,
              "pyramid loss: resolution " + std::to_string(pair.left.height) + "x" +
                  std::to_string(pair.left.width) + " is not divisible by " + std::to_string(div));
  check_input(pair.left.height / div >= 3 && pair.left.width / div >= 3,
              "pyramid loss: coarsest scale would be smaller than 3x3");
  std::vector<std::array<Image, 2>> chain;
  chain.push_back({pair.left, pair.right});
  for (int r = 1; r < levels; ++r)
    chain.push_back({downsample_half(chain.back()[0]), downsample_half(chain.back()[1])});
  return chain;
}

void check_pyramid(const DisparityPyramid& pyramid,
                   const std::vector<std::array<Image, 2>>& chain, const char* op) {
  check_input(pyramid.levels() == static_cast<int>(chain.size()),
              std::string(op) + ": pyramid has " + std::to_string(pyramid.levels()) +
                  " levels, expected " + std::to_string(chain.size()));
  for (int r = 0; r < pyramid.levels(); ++r)
    for (int s = 0; s < 2; ++s) {
      const DisparityField& d = pyramid.scales[r][s];
      check_input(d.side == static_cast<Side>(s),
                  std::string(op) + ": pyramid side tag wrong at scale " + std::to_string(r));
      check_input(d.height() == chain[r][s].height && d.width() == chain[r][s].width,
                  std::string(op) + ": scale " + std::to_string(r) + " field is " +
                      std::to_string(d.height()) + "x" + std::to_string(d.width()) +
                      ", expected " + std::to_string(chain[r][s].height) + "x" +
                      std::to_string(chain[r][s].width));
    }
}

void init_breakdown(LossBreakdown& bd, int levels) {
  bd.photometric.assign(levels, {0.0, 0.0});
  bd.structural.assign(levels, {0.0, 0.0});
  bd.smoothness.assign(levels, {0.0, 0.0});
  bd.cyclic.assign(levels, {0.0, 0.0});
  bd.mean_alpha.assign(levels, {0.0, 0.0});
}

void init_gradients(PyramidGradients& grads, const DisparityPyramid& pyramid) {
  grads.scales.assign(pyramid.levels(), {ScalarField(), ScalarField()});
  for (int r = 0; r < pyramid.levels(); ++r)
    for (int s = 0; s < 2; ++s)
      grads.scales[r][s] =
          ScalarField(pyramid.scales[r][s].height(), pyramid.scales[r][s].width(), 0.0);
}

}  // namespace

LossBreakdown total_loss(const StereoSample& pair, const DisparityPyramid& pyramid,
                         const LossWeights& w, PyramidGradients* grads) {
  w.validate();
  pair.validate();
  const auto chain = image_chain(pair, w.pyramid_levels);
  check_pyramid(pyramid, chain, "total_loss");

  LossBreakdown bd;
  init_breakdown(bd, w.pyramid_levels);
  if (grads != nullptr) init_gradients(*grads, pyramid);

  for (int r = 0; r < w.pyramid_levels; ++r) {
    const Image& il = chain[r][0];
    const Image& ir = chain[r][1];
    const DisparityField& dl = pyramid.scales[r][0];
    const DisparityField& dr = pyramid.scales[r][1];
    const auto [recon_l, recon_r] = reconstruct_images(il, ir, dl, dr);
    const double decay = std::ldexp(1.0, -r);

    for (int s = 0; s < 2; ++s) {
      const Side side = static_cast<Side>(s);
      const Image& target = s == 0 ? il : ir;
      const Image& source = s == 0 ? ir : il;
      const Image& recon = s == 0 ? recon_l : recon_r;
      const DisparityField& d_self = pyramid.scales[r][s];
      const DisparityField& d_other = pyramid.scales[r][1 - s];
      const double n_px = static_cast<double>(target.height) * target.width;
      const double n_el = n_px * target.channels;

      const ScalarField alpha = adaptive_weights(target, recon, w.c);
      const ScalarField lambda = edge_weights(target, w.edge_sigma);

      Image g_ph, g_st;
      ScalarField g_sm, g_bc, g_cycled;
      if (grads != nullptr) {
        g_ph = Image(target.height, target.width, target.channels, 0.0);
        g_st = g_ph;
        g_sm = ScalarField(target.height, target.width, 0.0);
        g_bc = g_sm;
        g_cycled = g_sm;
      }

      const double ph = photometric_loss(target, recon, grads ? &g_ph : nullptr);
      const double st = structural_loss(target, recon, grads ? &g_st : nullptr);
      const double sm = smoothness_loss(d_self, alpha, lambda, grads ? &g_sm : nullptr);
      const CyclicReconstruction cyc = cyclic_reconstruct(d_self, d_other);
      const double bc = bilateral_cyclic_loss(d_self, cyc.reconstructed, alpha,
                                              grads ? &g_bc : nullptr,
                                              grads ? &g_cycled : nullptr);

      bd.photometric[r][s] = ph / n_el;
      bd.structural[r][s] = st / n_px;
      bd.smoothness[r][s] = sm / n_px;
      bd.cyclic[r][s] = bc / n_px;
      double alpha_sum = 0.0;
      for (double a : alpha.data) alpha_sum += a;
      bd.mean_alpha[r][s] = alpha_sum / n_px;

      bd.weighted_photometric += w.w_ph * ph / n_el;
      bd.weighted_structural += w.w_st * st / n_px;
      bd.weighted_smoothness += w.w_sm * decay * sm / n_px;
      bd.weighted_cyclic += w.w_bc * bc / n_px;

      if (grads != nullptr) {
        ScalarField& g_self = grads->scales[r][s];
        ScalarField& g_other = grads->scales[r][1 - s];

        Image g_recon(target.height, target.width, target.channels, 0.0);
        axpy(w.w_ph / n_el, g_ph, g_recon);
        axpy(w.w_st / n_px, g_st, g_recon);
        horizontal_resample_backward(source, d_self.field, sample_direction(side), g_recon,
                                     nullptr, &g_self);

        axpy(w.w_sm * decay / n_px, g_sm, g_self);
        axpy(w.w_bc / n_px, g_bc, g_self);

        ScalarField g_cycled_scaled(target.height, target.width, 0.0);
        axpy(w.w_bc / n_px, g_cycled, g_cycled_scaled);
        cyclic_reconstruct_backward(d_self, d_other, g_cycled_scaled, &g_self, &g_other);
      }
    }
  }

  bd.total = bd.weighted_photometric + bd.weighted_structural + bd.weighted_smoothness +
             bd.weighted_cyclic;
  return bd;
}

LossBreakdown init_loss_pyramid(const StereoSample& pair, const DisparityPyramid& pyramid,
                                const LossWeights& w, PyramidGradients* grads) {
  w.validate();
  pair.validate();
  const auto chain = image_chain(pair, w.pyramid_levels);
  check_pyramid(pyramid, chain, "init_loss_pyramid");

  LossBreakdown bd;
  init_breakdown(bd, w.pyramid_levels);
  if (grads != nullptr) init_gradients(*grads, pyramid);

  for (int r = 0; r < w.pyramid_levels; ++r) {
    const auto [recon_l, recon_r] =
        reconstruct_images(chain[r][0], chain[r][1], pyramid.scales[r][0], pyramid.scales[r][1]);
    for (int s = 0; s < 2; ++s) {
      const Image& target = chain[r][s];
      const Image& source = chain[r][1 - s];
      const Image& recon = s == 0 ? recon_l : recon_r;
      const double n_px = static_cast<double>(target.height) * target.width;
      const double n_el = n_px * target.channels;

      Image g_ph, g_st;
      if (grads != nullptr) {
        g_ph = Image(target.height, target.width, target.channels, 0.0);
        g_st = g_ph;
      }
      const double ph = photometric_loss(target, recon, grads ? &g_ph : nullptr);
      const double st = structural_loss(target, recon, grads ? &g_st : nullptr);

      bd.photometric[r][s] = ph / n_el;
      bd.structural[r][s] = st / n_px;
      bd.weighted_photometric += w.w_ph * ph / n_el;
      bd.weighted_structural += w.w_st * st / n_px;

      if (grads != nullptr) {
        Image g_recon(target.height, target.width, target.channels, 0.0);
        axpy(w.w_ph / n_el, g_ph, g_recon);
        axpy(w.w_st / n_px, g_st, g_recon);
        horizontal_resample_backward(source, pyramid.scales[r][s].field,
                                     sample_direction(static_cast<Side>(s)), g_recon, nullptr,
                                     &grads->scales[r][s]);
      }
    }
  }

  bd.total = bd.weighted_photometric + bd.weighted_structural;
  bd.weighted_init = bd.total;
  return bd;
}

ScalarField numeric_gradient(const std::function<double(const ScalarField&)>& f,
                             const ScalarField& at, double step) {
  check_input(step > 0.0, "numeric_gradient: step must be positive");
  ScalarField probe = at;
  ScalarField out(at.height, at.width, 0.0);
  for (std::size_t i = 0; i < at.data.size(); ++i) {
    const double saved = probe.data[i];
    probe.data[i] = saved + step;
    const double hi = f(probe);
    probe.data[i] = saved - step;
    const double lo = f(probe);
    probe.data[i] = saved;
    out.data[i] = (hi - lo) / (2.0 * step);
  }
  return out;
}

Image numeric_gradient(const std::function<double(const Image&)>& f, const Image& at,
                       double step) {
  check_input(step > 0.0, "numeric_gradient: step must be positive");
  Image probe = at;
  Image out(at.height, at.width, at.channels, 0.0);
  for (std::size_t i = 0; i < at.data.size(); ++i) {
    const double saved = probe.data[i];
    probe.data[i] = saved + step;
    const double hi = f(probe);
    probe.data[i] = saved - step;
    const double lo = f(probe);
    probe.data[i] = saved;
    out.data[i] = (hi - lo) / (2.0 * step);
  }
  return out;
}

}  // namespace dispkit
