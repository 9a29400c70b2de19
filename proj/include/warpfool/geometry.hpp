#pragma once

// Maps the three scale parameters to six point correspondences and fits
// the homography between them. The construction: the image is split by
// three borderlines meeting at the center O; their intersections with
// the image border give main source points A, B, C. Each destination
// a, b, c slides along its borderline, its distance to O scaled by one
// of alpha, beta, gamma. Three auxiliary pairs (corner/edge sources to
// near-midpoint destinations, shifted by a 1-2 px bias) make the fit
// well-posed. All functions here are pure.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "warpfool/error.hpp"

namespace warpfool {

inline constexpr double kScaleMin = 0.2;
inline constexpr double kScaleMax = 1.0;

// The attack's three trainable parameters, each in [0.2, 1].
struct ScaleTriple {
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;

  void validate() const {
    for (double s : {alpha, beta, gamma})
      if (!(s >= kScaleMin && s <= kScaleMax))
        throw std::invalid_argument("ScaleTriple: scale outside [0.2, 1.0]");
  }

  double mean() const { return (alpha + beta + gamma) / 3.0; }
};

inline ScaleTriple clamp_triple(const ScaleTriple& t, double lo = kScaleMin,
                                double hi = kScaleMax) {
  return {std::clamp(t.alpha, lo, hi), std::clamp(t.beta, lo, hi),
          std::clamp(t.gamma, lo, hi)};
}

// Continuous pixel coordinates, origin at the upper-left corner.
struct PixelPoint {
  double x = 0.0;
  double y = 0.0;
};

enum class AuxFormula {
  // Auxiliary destinations exactly as printed in the source construction.
  // The f point's y-coordinate there is off the ac connecting line.
  PaperVerbatim,
  // Auxiliary destinations on the exact side midpoints of triangle abc
  // before the bias shift. Default; consistent with the intercept-theorem
  // construction the verbatim d and e already follow.
  MidpointConsistent,
};

struct AuxConfig {
  int bias_px = 1;
  AuxFormula formula = AuxFormula::MidpointConsistent;

  void validate() const {
    if (bias_px != 1 && bias_px != 2)
      throw std::invalid_argument("AuxConfig: bias_px must be 1 or 2");
  }
};

// 3x3 projective matrix, row-major. Normalized so m[8] == 1 after
// estimation.
struct Homography {
  std::array<double, 9> m = {1, 0, 0, 0, 1, 0, 0, 0, 1};

  double at(int r, int c) const { return m[std::size_t(3 * r + c)]; }
  double& at(int r, int c) { return m[std::size_t(3 * r + c)]; }

  static Homography identity() { return {}; }
};

inline double determinant(const Homography& h) {
  const auto& a = h.m;
  return a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) +
         a[2] * (a[3] * a[7] - a[4] * a[6]);
}

// Projective action on a point. Throws if the point maps to infinity.
inline PixelPoint apply_point(const Homography& h, const PixelPoint& p) {
  const double z = h.m[6] * p.x + h.m[7] * p.y + h.m[8];
  if (std::abs(z) < 1e-12) throw geometry_error("apply_point: point at infinity");
  return {(h.m[0] * p.x + h.m[1] * p.y + h.m[2]) / z,
          (h.m[3] * p.x + h.m[4] * p.y + h.m[5]) / z};
}

inline Homography invert(const Homography& h) {
  const double det = determinant(h);
  if (std::abs(det) < 1e-12) throw geometry_error("invert: singular homography");
  const auto& a = h.m;
  Homography out;
  out.m = {(a[4] * a[8] - a[5] * a[7]) / det, (a[2] * a[7] - a[1] * a[8]) / det,
           (a[1] * a[5] - a[2] * a[4]) / det, (a[5] * a[6] - a[3] * a[8]) / det,
           (a[0] * a[8] - a[2] * a[6]) / det, (a[2] * a[3] - a[0] * a[5]) / det,
           (a[3] * a[7] - a[4] * a[6]) / det, (a[1] * a[6] - a[0] * a[7]) / det,
           (a[0] * a[4] - a[1] * a[3]) / det};
  return out;
}

// ---------------------------------------------------------------------------
// Source points and destination formulas

// Fixed source points: main A, B, C on the borderline/border
// intersections, auxiliary D, E, F on corners and edges.
inline std::array<PixelPoint, 6> source_points(double w, double h) {
  return {PixelPoint{0.0, 2.0 * h / 3.0},  // A
          PixelPoint{2.0 * w / 3.0, 0.0},  // B
          PixelPoint{w, h},                // C
          PixelPoint{0.0, 0.0},            // D
          PixelPoint{w, h / 3.0},          // E
          PixelPoint{w / 3.0, h}};         // F
}

// Main destinations: distances to the image center scaled by the triple.
//   a = ((1-alpha)w/2, (alpha+3)h/6)
//   b = ((3+beta)w/6,  (1-beta)h/2)
//   c = ((1+gamma)w/2, (1+gamma)h/2)
inline std::array<PixelPoint, 3> main_destinations(const ScaleTriple& t, double w,
                                                   double h) {
  t.validate();
  if (w < 8 || h < 8)
    throw std::invalid_argument("main_destinations: frame must be >= 8 px");
  return {PixelPoint{(1.0 - t.alpha) * w / 2.0, (t.alpha + 3.0) * h / 6.0},
          PixelPoint{(3.0 + t.beta) * w / 6.0, (1.0 - t.beta) * h / 2.0},
          PixelPoint{(1.0 + t.gamma) * w / 2.0, (1.0 + t.gamma) * h / 2.0}};
}

// Auxiliary destinations d, e, f near the side midpoints of triangle
// abc, biased in x (signs -, +, + in the order d, e, f).
inline std::array<PixelPoint, 3> aux_destinations(const ScaleTriple& t,
                                                  [[maybe_unused]] double w, double h,
                                                  const AuxConfig& cfg,
                                                  const std::array<PixelPoint, 3>& abc) {
  cfg.validate();
  const double b = double(cfg.bias_px);
  const auto& [pa, pb, pc] = abc;
  PixelPoint d{(pa.x + pb.x) / 2.0 - b, (pa.y + pb.y) / 2.0};
  PixelPoint e{(pb.x + pc.x) / 2.0 + b, (pb.y + pc.y) / 2.0};
  PixelPoint f{(pa.x + pc.x) / 2.0 + b, (pa.y + pc.y) / 2.0};
  if (cfg.formula == AuxFormula::PaperVerbatim) {
    // d and e match the midpoints above identically; f's y-coordinate
    // is the printed (3*gamma + 3*alpha + 6)h/12 instead.
    f.y = (3.0 * t.gamma + 3.0 * t.alpha + 6.0) * h / 12.0;
  }
  return {d, e, f};
}

// ---------------------------------------------------------------------------
// Correspondence set

struct CorrespondenceSet {
  std::array<PixelPoint, 6> src;  // A, B, C, D, E, F
  std::array<PixelPoint, 6> dst;  // a, b, c, d, e, f
  double frame_w = 0.0;
  double frame_h = 0.0;

  // Smallest |triangle area| over all triples of destination points.
  double min_dst_triple_area() const {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 6; ++i)
      for (int j = i + 1; j < 6; ++j)
        for (int k = j + 1; k < 6; ++k) {
          const double ax = dst[j].x - dst[i].x, ay = dst[j].y - dst[i].y;
          const double bx = dst[k].x - dst[i].x, by = dst[k].y - dst[i].y;
          best = std::min(best, std::abs(ax * by - ay * bx) / 2.0);
        }
    return best;
  }

  bool dst_in_general_position() const {
    return min_dst_triple_area() > 1e-6 * frame_w * frame_h;
  }
};

// Assembles the six pairs for one triple and validates that no three
// destination points are collinear. Note the x-bias cannot lift f off
// the ac line when that side is exactly horizontal (alpha == 3*gamma in
// MidpointConsistent mode), so a degenerate-geometry error is reachable
// there; optimizer-facing callers go through the *_total warp entry
// point which sidesteps that measure-zero band.
inline CorrespondenceSet correspondences(const ScaleTriple& t, double w, double h,
                                         const AuxConfig& cfg = {}) {
  const auto abc = main_destinations(t, w, h);
  const auto def = aux_destinations(t, w, h, cfg, abc);
  CorrespondenceSet cs;
  cs.src = source_points(w, h);
  cs.dst = {abc[0], abc[1], abc[2], def[0], def[1], def[2]};
  cs.frame_w = w;
  cs.frame_h = h;
  if (!cs.dst_in_general_position())
    throw geometry_error("correspondences: three destination points collinear");
  return cs;
}

// ---------------------------------------------------------------------------
// Homography estimation: normalized direct linear transform

namespace detail {

// Cyclic Jacobi eigendecomposition of a symmetric n x n matrix (n <= 9).
// Returns eigenvalues and eigenvectors (columns of V).
inline void jacobi_eigen_sym(double* a, int n, double* eigvals, double* v) {
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) v[i * n + j] = (i == j) ? 1.0 : 0.0;

  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += a[i * n + j] * a[i * n + j];
    if (off < 1e-300) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double app = a[p * n + p];
        const double aqq = a[q * n + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double sign = theta >= 0.0 ? 1.0 : -1.0;
        const double tt = sign / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(tt * tt + 1.0);
        const double s = tt * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a[k * n + p];
          const double akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a[p * n + k];
          const double aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v[k * n + p];
          const double vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  for (int i = 0; i < n; ++i) eigvals[i] = a[i * n + i];
}

struct NormalizeResult {
  std::vector<PixelPoint> pts;
  // Similarity transform T: p_norm = s * (p - mu).
  double s = 1.0, mux = 0.0, muy = 0.0;
};

inline NormalizeResult normalize_points(std::span<const PixelPoint> pts) {
  NormalizeResult out;
  const double n = double(pts.size());
  for (const auto& p : pts) {
    out.mux += p.x;
    out.muy += p.y;
  }
  out.mux /= n;
  out.muy /= n;
  double rms2 = 0.0;
  for (const auto& p : pts) {
    const double dx = p.x - out.mux;
    const double dy = p.y - out.muy;
    rms2 += dx * dx + dy * dy;
  }
  rms2 /= n;
  if (rms2 < 1e-20) throw geometry_error("fit_homography: coincident points");
  out.s = std::sqrt(2.0 / rms2);
  out.pts.reserve(pts.size());
  for (const auto& p : pts)
    out.pts.push_back({out.s * (p.x - out.mux), out.s * (p.y - out.muy)});
  return out;
}

}  // namespace detail

// Least-squares homography from n >= 4 point pairs: both sets are
// translated/scaled to centroid 0 and RMS distance sqrt(2), the 2n x 9
// system is solved for its null direction via the normal matrix, and
// the result is denormalized and scaled so H[2][2] = 1.
inline Homography fit_homography(std::span<const PixelPoint> src,
                                 std::span<const PixelPoint> dst) {
  if (src.size() != dst.size())
    throw std::invalid_argument("fit_homography: src/dst size mismatch");
  if (src.size() < 4)
    throw std::invalid_argument("fit_homography: need at least 4 pairs");

  const auto ns = detail::normalize_points(src);
  const auto nd = detail::normalize_points(dst);

  // Accumulate M = A^T A directly; rows of A are the two standard DLT
  // equations per pair.
  double m[81] = {};
  auto accumulate = [&](const std::array<double, 9>& row) {
    for (int i = 0; i < 9; ++i)
      for (int j = i; j < 9; ++j) m[i * 9 + j] += row[std::size_t(i)] * row[std::size_t(j)];
  };
  for (std::size_t i = 0; i < ns.pts.size(); ++i) {
    const double x = ns.pts[i].x, y = ns.pts[i].y;
    const double u = nd.pts[i].x, v = nd.pts[i].y;
    accumulate({-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u});
    accumulate({0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v});
  }
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < i; ++j) m[i * 9 + j] = m[j * 9 + i];

  double eigvals[9];
  double vecs[81];
  detail::jacobi_eigen_sym(m, 9, eigvals, vecs);

  int idx_min = 0, idx_second = -1;
  double lam_max = eigvals[0];
  for (int i = 1; i < 9; ++i) {
    if (eigvals[i] < eigvals[idx_min]) idx_min = i;
    lam_max = std::max(lam_max, eigvals[i]);
  }
  for (int i = 0; i < 9; ++i) {
    if (i == idx_min) continue;
    if (idx_second < 0 || eigvals[i] < eigvals[idx_second]) idx_second = i;
  }
  // Two near-null directions mean the pairs do not pin down a unique H.
  if (!(eigvals[idx_second] > 1e-12 * std::max(lam_max, 1.0)))
    throw geometry_error("fit_homography: rank-deficient system");

  // Denormalize: H = T_dst^-1 * Hn * T_src.
  double hn[9];
  for (int i = 0; i < 9; ++i) hn[i] = vecs[i * 9 + idx_min];
  const double ss = ns.s, sx = ns.mux, sy = ns.muy;
  const double ds = nd.s, dx = nd.mux, dy = nd.muy;
  // T_src maps p -> ss*(p - mu_s); T_dst^-1 maps q -> q/ds + mu_d.
  double t1[9] = {ss, 0, -ss * sx, 0, ss, -ss * sy, 0, 0, 1};
  double t2[9] = {1.0 / ds, 0, dx, 0, 1.0 / ds, dy, 0, 0, 1};
  auto matmul3 = [](const double* a, const double* b, double* out) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = 0; k < 3; ++k) acc += a[r * 3 + k] * b[k * 3 + c];
        out[r * 3 + c] = acc;
      }
  };
  double tmp[9], hd[9];
  matmul3(hn, t1, tmp);
  matmul3(t2, tmp, hd);

  if (std::abs(hd[8]) < 1e-12)
    throw geometry_error("fit_homography: H[2][2] vanishes");
  Homography h;
  for (int i = 0; i < 9; ++i) h.m[std::size_t(i)] = hd[i] / hd[8];
  if (std::abs(determinant(h)) < 1e-12)
    throw geometry_error("fit_homography: singular result");
  return h;
}

inline Homography fit_homography(const CorrespondenceSet& cs) {
  return fit_homography(std::span<const PixelPoint>(cs.src),
                        std::span<const PixelPoint>(cs.dst));
}

// RMS reprojection error of H over the pairs (in destination pixels).
// Six pairs over-determine the 8 DOF, so this is generically nonzero.
inline double reprojection_rms(const CorrespondenceSet& cs, const Homography& h) {
  double acc = 0.0;
  for (int i = 0; i < 6; ++i) {
    const PixelPoint p = apply_point(h, cs.src[std::size_t(i)]);
    const double dx = p.x - cs.dst[std::size_t(i)].x;
    const double dy = p.y - cs.dst[std::size_t(i)].y;
    acc += dx * dx + dy * dy;
  }
  return std::sqrt(acc / 6.0);
}

}  // namespace warpfool
