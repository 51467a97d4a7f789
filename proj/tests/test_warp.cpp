#include "dispkit/warp.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "dispkit/losses.hpp"
#include "test_util.hpp"

using namespace dispkit;
using namespace testutil;

namespace {
constexpr double kFdStep = 1e-6;
constexpr double kFdTol = 1e-4;
}  // namespace

TEST_CASE("zero disparity reproduces the source exactly") {
  const Image src = random_image(5, 9, 3, 101);
  const ScalarField zero(5, 9, 0.0);
  for (int dir : {-1, +1}) {
    const Image out = horizontal_resample(src, zero, dir);
    for (std::size_t i = 0; i < src.data.size(); ++i) CHECK(out.data[i] == src.data[i]);
  }
}

TEST_CASE("unit disparity shifts a row, clamping at the border") {
  ScalarField src(1, 4);
  for (int x = 0; x < 4; ++x) src.at(0, x) = x;
  const ScalarField one(1, 4, 1.0);
  const ScalarField out = horizontal_resample(src, one, -1);
  CHECK(out.at(0, 0) == 0.0);  // x* = -1 clamps to column 0
  CHECK(out.at(0, 1) == 0.0);
  CHECK(out.at(0, 2) == 1.0);
  CHECK(out.at(0, 3) == 2.0);
}

TEST_CASE("half-pixel disparity interpolates linearly") {
  ScalarField src(1, 3);
  src.at(0, 0) = 0.0;
  src.at(0, 1) = 1.0;
  src.at(0, 2) = 0.4;
  const ScalarField half(1, 3, 0.5);
  const ScalarField out = horizontal_resample(src, half, -1);
  CHECK(out.at(0, 0) == 0.0);
  CHECK(out.at(0, 1) == Catch::Approx(0.5).epsilon(1e-12));
  CHECK(out.at(0, 2) == Catch::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("outputs stay within the source value range for any disparity") {
  const Image src = random_image(4, 16, 1, 7);
  const ScalarField wild = random_field(4, 16, 8, -30.0, 30.0);
  const Image out = horizontal_resample(src, wild, +1);
  double lo = 1e9, hi = -1e9;
  for (double v : src.data) lo = std::min(lo, v), hi = std::max(hi, v);
  for (double v : out.data) {
    CHECK(std::isfinite(v));
    CHECK(v >= lo - 1e-12);
    CHECK(v <= hi + 1e-12);
  }
}

TEST_CASE("resample argument validation") {
  const ScalarField src(3, 4);
  CHECK_THROWS_AS(horizontal_resample(src, ScalarField(3, 4), 0), InvalidInputError);
  CHECK_THROWS_AS(horizontal_resample(src, ScalarField(3, 4), 2), InvalidInputError);
  CHECK_THROWS_AS(horizontal_resample(src, ScalarField(3, 5), -1), InvalidInputError);
  CHECK_THROWS_AS(horizontal_resample(ScalarField(3, 1), ScalarField(3, 1), -1),
                  InvalidInputError);
}

TEST_CASE("clamped samples carry no disparity gradient") {
  const ScalarField src = random_field(2, 5, 9);
  ScalarField disp(2, 5, 10.0);  // everything clamps
  ScalarField grad_disp(2, 5, 0.0);
  const ScalarField ones(2, 5, 1.0);
  horizontal_resample_backward(src, disp, -1, ones, nullptr, &grad_disp);
  for (double g : grad_disp.data) CHECK(g == 0.0);
}

TEST_CASE("resample gradients match finite differences") {
  const int h = 5, w = 12, c = 3;
  const Image src = random_image(h, w, c, 301);
  const DisparityField disp = smooth_disparity(h, w, Side::kLeft, 302);
  // Linear probe functional; weight zero in the first column, where the
  // leftward sample coordinate clamps.
  Image probe = random_image(h, w, c, 303);
  for (auto& v : probe.data) v = 2.0 * v - 1.0;
  for (int y = 0; y < h; ++y)
    for (int ch = 0; ch < c; ++ch) probe.at(y, 0, ch) = 0.0;

  const int dir = sample_direction(disp.side);
  Image grad_src(h, w, c, 0.0);
  ScalarField grad_disp(h, w, 0.0);
  horizontal_resample_backward(src, disp.field, dir, probe, &grad_src, &grad_disp);

  const auto objective_src = [&](const Image& s) {
    const Image out = horizontal_resample(s, disp.field, dir);
    double acc = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) acc += probe.data[i] * out.data[i];
    return acc;
  };
  const auto objective_disp = [&](const ScalarField& d) {
    const Image out = horizontal_resample(src, d, dir);
    double acc = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) acc += probe.data[i] * out.data[i];
    return acc;
  };

  const Image fd_src = numeric_gradient(objective_src, src, kFdStep);
  const ScalarField fd_disp = numeric_gradient(objective_disp, disp.field, kFdStep);
  CHECK(max_rel_error(grad_src, fd_src) < kFdTol);
  CHECK(max_rel_error(grad_disp, fd_disp) < kFdTol);
}

TEST_CASE("reconstruct_images matches direct resampling and validates tags") {
  const int h = 4, w = 10;
  const Image left = random_image(h, w, 3, 401);
  const Image right = random_image(h, w, 3, 402);
  const DisparityField dl = smooth_disparity(h, w, Side::kLeft, 403);
  const DisparityField dr = smooth_disparity(h, w, Side::kRight, 404);

  const auto [recon_l, recon_r] = reconstruct_images(left, right, dl, dr);
  const Image expect_l = horizontal_resample(right, dl.field, -1);
  const Image expect_r = horizontal_resample(left, dr.field, +1);
  for (std::size_t i = 0; i < expect_l.data.size(); ++i) {
    CHECK(recon_l.data[i] == expect_l.data[i]);
    CHECK(recon_r.data[i] == expect_r.data[i]);
  }

  CHECK_THROWS_AS(reconstruct_images(left, right, dr, dl), InvalidInputError);
  CHECK_THROWS_AS(reconstruct_images(left, right, dl, dl), InvalidInputError);
}

TEST_CASE("project_disparity keeps the querying side and rejects same-side input") {
  const DisparityField dl = smooth_disparity(3, 8, Side::kLeft, 501);
  const DisparityField dr = smooth_disparity(3, 8, Side::kRight, 502);
  const DisparityField p = project_disparity(dl, dr);
  CHECK(p.side == Side::kLeft);
  CHECK(p.height() == 3);
  CHECK_THROWS_AS(project_disparity(dl, dl), InvalidInputError);
}

TEST_CASE("a consistent constant pair cycles back to itself") {
  const int h = 3, w = 12;
  const DisparityField dl(h, w, Side::kLeft, 2.0);
  const DisparityField dr(h, w, Side::kRight, 2.0);
  for (const auto* self : {&dl, &dr}) {
    const auto& other = (self == &dl) ? dr : dl;
    const CyclicReconstruction cyc = cyclic_reconstruct(*self, other);
    CHECK(cyc.reconstructed.side == self->side);
    for (std::size_t i = 0; i < cyc.reconstructed.field.data.size(); ++i)
      CHECK(cyc.reconstructed.field.data[i] == Catch::Approx(2.0).margin(1e-12));
  }
}

TEST_CASE("cyclic reconstruction gradients match finite differences") {
  const int h = 4, w = 14;
  const DisparityField dl = smooth_disparity(h, w, Side::kLeft, 601);
  const DisparityField dr = smooth_disparity(h, w, Side::kRight, 602);

  // Probe weights vanish near the vertical borders so no clamped coordinate
  // participates in the objective.
  ScalarField probe = random_field(h, w, 603, -1.0, 1.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (x < 3 || x >= w - 3) probe.at(y, x) = 0.0;

  for (int side = 0; side < 2; ++side) {
    const DisparityField& d_self = side == 0 ? dl : dr;
    const DisparityField& d_other = side == 0 ? dr : dl;

    ScalarField grad_self(h, w, 0.0), grad_other(h, w, 0.0);
    cyclic_reconstruct_backward(d_self, d_other, probe, &grad_self, &grad_other);

    const auto objective = [&](const ScalarField& self_f, const ScalarField& other_f) {
      const DisparityField s(self_f, d_self.side), o(other_f, d_other.side);
      const ScalarField rec = cyclic_reconstruct(s, o).reconstructed.field;
      double acc = 0.0;
      for (std::size_t i = 0; i < rec.data.size(); ++i) acc += probe.data[i] * rec.data[i];
      return acc;
    };
    const ScalarField fd_self = numeric_gradient(
        [&](const ScalarField& f) { return objective(f, d_other.field); }, d_self.field, kFdStep);
    const ScalarField fd_other = numeric_gradient(
        [&](const ScalarField& f) { return objective(d_self.field, f); }, d_other.field, kFdStep);

    CHECK(max_rel_error(grad_self, fd_self) < kFdTol);
    CHECK(max_rel_error(grad_other, fd_other) < kFdTol);
  }
}
