#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "warpfool/rng.hpp"
#include "warpfool/warp.hpp"

using namespace warpfool;

namespace {

ImageTensor random_image(Rng& rng, int c = 1, int h = 28, int w = 28) {
  ImageTensor img = ImageTensor::zeros(c, h, w);
  for (double& v : img.data) v = rng.uniform();
  return img;
}

Homography translation(double tx, double ty) {
  Homography h;
  h.m = {1, 0, tx, 0, 1, ty, 0, 0, 1};
  return h;
}

}  // namespace

TEST_CASE("identity homography is a bitwise identity warp", "[warp]") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const ImageTensor img = random_image(rng);
    for (PaddingMode mode : {PaddingMode::ZeroPad, PaddingMode::BorderExtrapolate}) {
      const ImageTensor out = warp_image(img, Homography::identity(), mode);
      REQUIRE(out.data == img.data);
    }
  }
}

TEST_CASE("integer translation matches direct shifting", "[warp]") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const ImageTensor img = random_image(rng);
    const ImageTensor zero_pad = warp_image(img, translation(3, 0), PaddingMode::ZeroPad);
    const ImageTensor border =
        warp_image(img, translation(3, 0), PaddingMode::BorderExtrapolate);
    for (int y = 0; y < 28; ++y) {
      for (int x = 0; x < 28; ++x) {
        if (x >= 3) {
          REQUIRE(zero_pad.at(0, y, x) == img.at(0, y, x - 3));
          REQUIRE(border.at(0, y, x) == img.at(0, y, x - 3));
        } else {
          REQUIRE(zero_pad.at(0, y, x) == 0.0);
          REQUIRE(border.at(0, y, x) == img.at(0, y, 0));
        }
      }
    }
  }
}

TEST_CASE("random integer translations shift exactly in both axes", "[warp]") {
  Rng rng(3);
  for (int trial = 0; trial < 60; ++trial) {
    const ImageTensor img = random_image(rng);
    const int tx = int(rng.uniform_int(11)) - 5;
    const int ty = int(rng.uniform_int(11)) - 5;
    const ImageTensor out =
        warp_image(img, translation(tx, ty), PaddingMode::ZeroPad);
    for (int y = 0; y < 28; ++y)
      for (int x = 0; x < 28; ++x) {
        const int sx = x - tx, sy = y - ty;
        const double expect =
            (sx >= 0 && sx < 28 && sy >= 0 && sy < 28) ? img.at(0, sy, sx) : 0.0;
        REQUIRE(out.at(0, y, x) == expect);
      }
  }
}

TEST_CASE("warp output stays within [0,1]", "[warp]") {
  Rng rng(4);
  const ImageTensor img = random_image(rng);
  const ImageTensor out = transform_with_triple(
      img, {0.4, 0.7, 0.9}, {}, PaddingMode::BorderExtrapolate);
  for (double v : out.data) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
  }
}

TEST_CASE("zero-pad mean equals in-bounds fraction on all-ones input", "[warp]") {
  ImageTensor ones = ImageTensor::zeros(1, 28, 28);
  for (double& v : ones.data) v = 1.0;
  const auto cs = correspondences({0.5, 0.6, 0.7}, 28, 28);
  const Homography h = fit_homography(cs);
  const ImageTensor out = warp_image(ones, h, PaddingMode::ZeroPad);

  // Oracle: count output pixels whose pre-image falls inside the frame.
  const Homography hinv = invert(h);
  int inside = 0;
  for (int y = 0; y < 28; ++y)
    for (int x = 0; x < 28; ++x) {
      const PixelPoint s = apply_point(hinv, {double(x), double(y)});
      if (s.x >= 0 && s.x <= 27 && s.y >= 0 && s.y <= 27) ++inside;
    }
  REQUIRE(out.mean() == Catch::Approx(double(inside) / (28.0 * 28.0)).margin(1e-9));
  REQUIRE(out.mean() < 1.0);  // the warp contracts
}

TEST_CASE("bilinear sampling at lattice points reproduces input", "[warp]") {
  Rng rng(5);
  const ImageTensor img = random_image(rng);
  for (int y = 0; y < 28; ++y)
    for (int x = 0; x < 28; ++x)
      REQUIRE(detail::bilinear_clamped(img, 0, double(x), double(y)) ==
              img.at(0, y, x));
}

TEST_CASE("warp is homogeneous in H", "[warp]") {
  Rng rng(6);
  const ImageTensor img = random_image(rng);
  const Homography h = fit_homography(correspondences({0.5, 0.8, 0.6}, 28, 28));
  Homography scaled = h;
  for (double& x : scaled.m) x *= 2.5;
  const ImageTensor a = warp_image(img, h, PaddingMode::ZeroPad);
  const ImageTensor b = warp_image(img, scaled, PaddingMode::ZeroPad);
  for (std::size_t i = 0; i < a.data.size(); ++i)
    REQUIRE(a.data[i] == Catch::Approx(b.data[i]).margin(1e-12));
}

TEST_CASE("transform_with_triple is deterministic", "[warp]") {
  Rng rng(7);
  const ImageTensor img = random_image(rng);
  const ImageTensor a =
      transform_with_triple(img, {0.3, 0.5, 0.7}, {}, PaddingMode::ZeroPad);
  const ImageTensor b =
      transform_with_triple(img, {0.3, 0.5, 0.7}, {}, PaddingMode::ZeroPad);
  REQUIRE(a.data == b.data);
}

TEST_CASE("strong shrink darkens the zero-padded border", "[warp]") {
  Rng rng(8);
  ImageTensor img = random_image(rng);
  for (double& v : img.data) v = 0.5 + v * 0.5;  // bright everywhere
  const ImageTensor out =
      transform_with_triple(img, {0.2, 0.2, 0.2}, {}, PaddingMode::ZeroPad);
  // Border ring must be fully padded after a strong contraction.
  for (int x = 0; x < 28; ++x) {
    REQUIRE(out.at(0, 0, x) == 0.0);
    REQUIRE(out.at(0, 27, x) == 0.0);
  }
  REQUIRE(out.mean() < img.mean());
}

TEST_CASE("total transform succeeds on the degenerate band", "[warp]") {
  Rng rng(9);
  const ImageTensor img = random_image(rng);
  // alpha = 3*gamma exactly: plain transform throws, total variant nudges.
  const ScaleTriple bad{0.6, 0.5, 0.2};
  REQUIRE_THROWS_AS(transform_with_triple(img, bad, {}, PaddingMode::ZeroPad),
                    geometry_error);
  ScaleTriple used;
  const ImageTensor out =
      transform_with_triple_total(img, bad, {}, PaddingMode::ZeroPad, &used);
  REQUIRE(out.data.size() == img.data.size());
  used.validate();
  // The nudge is microscopic.
  REQUIRE(std::abs(used.alpha - bad.alpha) + std::abs(used.beta - bad.beta) +
              std::abs(used.gamma - bad.gamma) <
          0.01);
}
