#include "dispkit/imaging.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "dispkit/rng.hpp"

using namespace dispkit;

namespace {

Image random_image(int h, int w, int c, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Image img(h, w, c);
  for (auto& v : img.data) v = rng.uniform();
  return img;
}

}  // namespace

TEST_CASE("grad_x on a short row") {
  ScalarField f(1, 3);
  f.at(0, 0) = 0.0;
  f.at(0, 1) = 1.0;
  f.at(0, 2) = 3.0;
  const ScalarField g = grad_x(f);
  CHECK(g.at(0, 0) == 1.0);
  CHECK(g.at(0, 1) == 2.0);
  CHECK(g.at(0, 2) == 0.0);
}

TEST_CASE("grad_y mirrors grad_x on the transpose") {
  ScalarField f(3, 1);
  f.at(0, 0) = 0.0;
  f.at(1, 0) = 1.0;
  f.at(2, 0) = 3.0;
  const ScalarField g = grad_y(f);
  CHECK(g.at(0, 0) == 1.0);
  CHECK(g.at(1, 0) == 2.0);
  CHECK(g.at(2, 0) == 0.0);
}

TEST_CASE("gradients reject degenerate sizes") {
  CHECK_THROWS_AS(grad_x(ScalarField(3, 1)), InvalidInputError);
  CHECK_THROWS_AS(grad_y(ScalarField(1, 3)), InvalidInputError);
}

TEST_CASE("laplacian of a centered delta") {
  Image img(3, 3, 1, 0.0);
  img.at(1, 1, 0) = 1.0;
  const ScalarField l = laplacian(img);
  CHECK(l.at(1, 1) == -4.0);
  CHECK(l.at(0, 1) == 1.0);
  CHECK(l.at(1, 0) == 1.0);
  CHECK(l.at(1, 2) == 1.0);
  CHECK(l.at(2, 1) == 1.0);
  CHECK(l.at(0, 0) == 0.0);
  CHECK(l.at(2, 2) == 0.0);
}

TEST_CASE("laplacian vanishes on constant and linear-in-x images") {
  Image flat(4, 5, 2, 0.37);
  for (double v : laplacian(flat).data) CHECK(v == 0.0);

  // A ramp is harmonic away from the replicated borders.
  Image ramp(5, 6, 1);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 6; ++x) ramp.at(y, x, 0) = 0.1 * x;
  const ScalarField l = laplacian(ramp);
  for (int y = 1; y < 4; ++y)
    for (int x = 1; x < 5; ++x) CHECK(l.at(y, x) == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("laplacian averages channels first") {
  Image img(3, 3, 2, 0.0);
  img.at(1, 1, 0) = 1.0;  // second channel stays zero
  const ScalarField l = laplacian(img);
  CHECK(l.at(1, 1) == -2.0);
  CHECK(l.at(0, 1) == 0.5);
}

TEST_CASE("gaussian_blur is linear") {
  const Image a = random_image(7, 9, 3, 11);
  const Image b = random_image(7, 9, 3, 22);
  Image combo(7, 9, 3);
  for (std::size_t i = 0; i < combo.data.size(); ++i)
    combo.data[i] = 2.0 * a.data[i] + 0.5 * b.data[i];

  const Image ba = gaussian_blur(a, 1.0);
  const Image bb = gaussian_blur(b, 1.0);
  const Image bc = gaussian_blur(combo, 1.0);
  for (std::size_t i = 0; i < bc.data.size(); ++i)
    CHECK(bc.data[i] == Catch::Approx(2.0 * ba.data[i] + 0.5 * bb.data[i]).margin(1e-10));
}

TEST_CASE("gaussian_blur conserves mass on constants") {
  Image flat(6, 8, 1, 0.42);
  const Image blurred = gaussian_blur(flat, 1.7);
  for (double v : blurred.data) CHECK(v == Catch::Approx(0.42).margin(1e-6));
}

TEST_CASE("gaussian_blur with tiny sigma approaches the identity") {
  const Image img = random_image(5, 5, 1, 33);
  const Image blurred = gaussian_blur(img, 1e-3);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    CHECK(blurred.data[i] == Catch::Approx(img.data[i]).margin(1e-3));
}

TEST_CASE("gaussian_blur rejects non-positive sigma") {
  CHECK_THROWS_AS(gaussian_blur(Image(3, 3, 1), 0.0), InvalidInputError);
  CHECK_THROWS_AS(gaussian_blur(Image(3, 3, 1), -1.0), InvalidInputError);
}

TEST_CASE("downsample_half averages 2x2 blocks") {
  Image img(2, 2, 1);
  img.at(0, 0, 0) = 0.0;
  img.at(0, 1, 0) = 1.0;
  img.at(1, 0, 0) = 1.0;
  img.at(1, 1, 0) = 0.0;
  const Image half = downsample_half(img);
  REQUIRE(half.height == 1);
  REQUIRE(half.width == 1);
  CHECK(half.at(0, 0, 0) == 0.5);
}

TEST_CASE("downsample_half rejects odd dimensions") {
  CHECK_THROWS_AS(downsample_half(Image(3, 4, 1)), InvalidInputError);
  CHECK_THROWS_AS(downsample_half(Image(4, 5, 1)), InvalidInputError);
}

TEST_CASE("downsample_half preserves the mean") {
  const Image img = random_image(8, 12, 3, 44);
  const Image half = downsample_half(img);
  double m0 = 0.0, m1 = 0.0;
  for (double v : img.data) m0 += v;
  for (double v : half.data) m1 += v;
  CHECK(m1 / half.data.size() == Catch::Approx(m0 / img.data.size()).margin(1e-12));
}

TEST_CASE("resize_bilinear preserves constants and hits exact sizes") {
  ScalarField f(3, 4, 0.77);
  const ScalarField up = resize_bilinear(f, 7, 9);
  REQUIRE(up.height == 7);
  REQUIRE(up.width == 9);
  for (double v : up.data) CHECK(v == Catch::Approx(0.77).margin(1e-12));
}

TEST_CASE("resize_bilinear identity when sizes match") {
  SplitMix64 rng(5);
  ScalarField f(4, 6);
  for (auto& v : f.data) v = rng.uniform();
  const ScalarField same = resize_bilinear(f, 4, 6);
  for (std::size_t i = 0; i < f.data.size(); ++i)
    CHECK(same.data[i] == Catch::Approx(f.data[i]).margin(1e-12));
}

TEST_CASE("resize_nearest replicates blocks on integer upscale") {
  ScalarField f(1, 2);
  f.at(0, 0) = 1.0;
  f.at(0, 1) = 2.0;
  const ScalarField up = resize_nearest(f, 2, 4);
  CHECK(up.at(0, 0) == 1.0);
  CHECK(up.at(0, 1) == 1.0);
  CHECK(up.at(0, 2) == 2.0);
  CHECK(up.at(0, 3) == 2.0);
  CHECK(up.at(1, 0) == 1.0);
  CHECK(up.at(1, 3) == 2.0);
}
