#pragma once

// Applies a homography to an image by inverse mapping with bilinear
// sampling. Pixel centers sit at integer coordinates and the valid
// image domain is [0, w-1] x [0, h-1], so the identity homography is
// exactly the identity warp.

#include <cmath>

#include "warpfool/geometry.hpp"
#include "warpfool/imagecore.hpp"

namespace warpfool {

enum class PaddingMode {
  ZeroPad,            // out-of-frame pre-images read as black
  BorderExtrapolate,  // pre-images clamped to the frame before sampling
};

inline const char* to_string(PaddingMode m) {
  return m == PaddingMode::ZeroPad ? "zero" : "border";
}

namespace detail {

inline double bilinear_clamped(const ImageTensor& img, int c, double sx, double sy) {
  const int x0 = int(std::floor(sx));
  const int y0 = int(std::floor(sy));
  const double fx = sx - x0;
  const double fy = sy - y0;
  auto px = [&](int x, int y) {
    x = std::clamp(x, 0, img.width - 1);
    y = std::clamp(y, 0, img.height - 1);
    return img.at(c, y, x);
  };
  const double top = px(x0, y0) * (1.0 - fx) + px(x0 + 1, y0) * fx;
  const double bot = px(x0, y0 + 1) * (1.0 - fx) + px(x0 + 1, y0 + 1) * fx;
  return top * (1.0 - fy) + bot * fy;
}

}  // namespace detail

// For each output pixel center, the source location is H^-1 (x, y);
// the value is the bilinear sample there, with out-of-frame locations
// handled per the padding mode. Output is clamped to [0, 1].
inline ImageTensor warp_image(const ImageTensor& img, const Homography& h,
                              PaddingMode mode) {
  const Homography hinv = invert(h);
  ImageTensor out = ImageTensor::zeros(img.channels, img.height, img.width);
  const double xmax = double(img.width - 1);
  const double ymax = double(img.height - 1);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double z = hinv.m[6] * x + hinv.m[7] * y + hinv.m[8];
      if (std::abs(z) < 1e-12) continue;  // pre-image at infinity: off-frame
      double sx = (hinv.m[0] * x + hinv.m[1] * y + hinv.m[2]) / z;
      double sy = (hinv.m[3] * x + hinv.m[4] * y + hinv.m[5]) / z;
      if (mode == PaddingMode::ZeroPad) {
        if (sx < 0.0 || sx > xmax || sy < 0.0 || sy > ymax) continue;
      } else {
        sx = std::clamp(sx, 0.0, xmax);
        sy = std::clamp(sy, 0.0, ymax);
      }
      for (int c = 0; c < img.channels; ++c)
        out.at(c, y, x) =
            std::clamp(detail::bilinear_clamped(img, c, sx, sy), 0.0, 1.0);
    }
  }
  return out;
}

// End-to-end deformation for one triple: correspondences -> homography
// fit -> warp. Deterministic. Propagates degenerate-geometry errors.
inline ImageTensor transform_with_triple(const ImageTensor& img, const ScaleTriple& t,
                                         const AuxConfig& cfg, PaddingMode mode) {
  const auto cs = correspondences(t, double(img.width), double(img.height), cfg);
  return warp_image(img, fit_homography(cs), mode);
}

// Total-on-bounds variant for optimizer and random-sampling callers.
// The correspondence check rejects a measure-zero band of triples
// (alpha ~ 3*gamma puts f on a horizontal ac side); instead of failing
// there, retry with a microscopic deterministic nudge. The warp changes
// by a negligible amount and every in-bounds triple gets an image.
inline ImageTensor transform_with_triple_total(const ImageTensor& img,
                                               const ScaleTriple& t,
                                               const AuxConfig& cfg, PaddingMode mode,
                                               ScaleTriple* used = nullptr) {
  constexpr double kNudge[] = {2e-3, -2e-3, 5e-3, -5e-3};
  ScaleTriple attempt = t;
  for (int round = 0; round < 13; ++round) {
    try {
      ImageTensor out = transform_with_triple(img, attempt, cfg, mode);
      if (used != nullptr) *used = attempt;
      return out;
    } catch (const geometry_error&) {
      const int which = round % 3;          // gamma, alpha, beta
      const double d = kNudge[(round / 3) % 4];
      attempt = t;
      if (which == 0) attempt.gamma += d;
      else if (which == 1) attempt.alpha += d;
      else attempt.beta += d;
      attempt = clamp_triple(attempt);
    }
  }
  return transform_with_triple(img, attempt, cfg, mode);  // let it throw
}

}  // namespace warpfool
