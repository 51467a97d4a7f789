#pragma once

#include <array>
#include <functional>
#include <vector>

#include "dispkit/raster.hpp"
#include "dispkit/sample.hpp"

namespace dispkit {

/// Weights and knobs of the training objective.
struct LossWeights {
  double w_ph = 0.15;       // photometric (L1) weight
  double w_st = 0.425;      // structural (SSIM) weight
  double w_sm = 0.10;       // disparity smoothness weight
  double w_bc = 1.05;       // bilateral cyclic consistency weight
  double c = 5.0;           // residual sensitivity of the adaptive weights
  double edge_sigma = 1.0;  // Gaussian blur applied before the edge-weight Laplacian
  int pyramid_levels = 4;

  void validate() const {
    check_input(w_ph >= 0 && w_st >= 0 && w_sm >= 0 && w_bc >= 0,
                "LossWeights: weights must be non-negative");
    check_input(c >= 0, "LossWeights: c must be non-negative");
    check_input(edge_sigma > 0, "LossWeights: edge_sigma must be positive");
    check_input(pyramid_levels >= 1, "LossWeights: pyramid_levels must be >= 1");
  }
};

/// Everything total_loss reports about one evaluation. Per-term vectors are
/// indexed [scale][side] and hold per-pixel means of the raw (unweighted)
/// terms; the weighted_* scalars are the contributions actually summed into
/// `total`, including the per-scale smoothness decay.
struct LossBreakdown {
  std::vector<std::array<double, 2>> photometric;
  std::vector<std::array<double, 2>> structural;
  std::vector<std::array<double, 2>> smoothness;
  std::vector<std::array<double, 2>> cyclic;
  std::vector<std::array<double, 2>> mean_alpha;

  double weighted_photometric = 0;
  double weighted_structural = 0;
  double weighted_smoothness = 0;
  double weighted_cyclic = 0;
  double weighted_init = 0;  // initial-branch data terms (two-branch training); 0 otherwise
  double total = 0;
};

// Granular terms. Each returns the raw sum over pixels (and channels where
// applicable); the pyramid aggregators apply normalization and weights.
// Gradient outputs are accumulated into, never overwritten, and may be null.

/// Sum of absolute differences over all pixels and channels.
double photometric_loss(const Image& target, const Image& recon, Image* grad_recon = nullptr);

/// Per-pixel SSIM between two images: 3x3 replicate-padded mean-filter
/// statistics, stabilizers 1e-4 and 9e-4, averaged over channels.
ScalarField ssim(const Image& a, const Image& b);

/// Sum over pixels of (1 - SSIM).
double structural_loss(const Image& target, const Image& recon, Image* grad_recon = nullptr);

/// Residual-adaptive regularization weights: alpha = exp(-c * rho * mu) with
/// rho the per-pixel channel-mean absolute residual and mu its spatial mean.
/// Treated as a constant by every gradient in this module.
ScalarField adaptive_weights(const Image& target, const Image& recon, double c);

/// Edge-aware weights: lambda = exp(-|Laplacian(blur(img, sigma))|).
ScalarField edge_weights(const Image& img, double blur_sigma = 1.0);

/// Sum over pixels of alpha * lambda * (|dx disp| + |dy disp|) with
/// forward-difference gradients.
double smoothness_loss(const DisparityField& disp, const ScalarField& alpha,
                       const ScalarField& lambda, ScalarField* grad_disp = nullptr);

/// Sum over pixels of alpha * |disp - cycled|.
double bilateral_cyclic_loss(const DisparityField& disp, const DisparityField& cycled,
                             const ScalarField& alpha, ScalarField* grad_disp = nullptr,
                             ScalarField* grad_cycled = nullptr);

/// Data terms only, both sides: w_ph * photometric + w_st * structural.
double init_loss(const Image& left, const Image& right, const Image& recon_left,
                 const Image& recon_right, const LossWeights& w,
                 Image* grad_recon_left = nullptr, Image* grad_recon_right = nullptr);

/// Full objective over the image pyramid. Per scale and side, the photometric
/// term is normalized by pixels * channels and the others by pixels; the
/// smoothness contribution additionally decays by 2^-scale. Gradients with
/// respect to every disparity field are written to `grads` when given.
LossBreakdown total_loss(const StereoSample& pair, const DisparityPyramid& pyramid,
                         const LossWeights& w, PyramidGradients* grads = nullptr);

/// Pyramid aggregation of init_loss for the initial-prediction branch:
/// photometric and structural terms only, same normalization as total_loss.
/// The result's `total` (== weighted_init) is what the two-branch objective
/// adds on top of the refined branch's total_loss.
LossBreakdown init_loss_pyramid(const StereoSample& pair, const DisparityPyramid& pyramid,
                                const LossWeights& w, PyramidGradients* grads = nullptr);

/// Central-difference gradient of an arbitrary scalar functional, evaluated
/// element by element at `at`. The verification reference for every analytic
/// gradient in this library.
ScalarField numeric_gradient(const std::function<double(const ScalarField&)>& f,
                             const ScalarField& at, double step);
Image numeric_gradient(const std::function<double(const Image&)>& f, const Image& at,
                       double step);

}  // namespace dispkit
