// File: geometry.hpp
// Description: planar homographies, normalized DLT, RANSAC estimation, box transfer.
#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

#include "hrp/common.hpp"

namespace hrp {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double dist(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

// Axis-aligned box in normalized image coordinates.
struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;
  bool is_empty = false;

  static Box empty() { return Box{0, 0, 0, 0, true}; }
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  Vec2 center() const { return {0.5 * (x1 + x2), 0.5 * (y1 + y2)}; }
  bool contains(Vec2 p) const {
    return !is_empty && p.x >= x1 && p.x <= x2 && p.y >= y1 && p.y <= y2;
  }
};

struct Homography {
  // row-major 3x3, normalized so m[2][2] == 1 whenever that entry is nonzero
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Homography identity() { return {}; }

  static Homography translation(double tx, double ty) {
    Homography h;
    h.m = {1, 0, tx, 0, 1, ty, 0, 0, 1};
    return h;
  }

  double operator()(int r, int c) const { return m[static_cast<std::size_t>(r) * 3 + c]; }
  double& operator()(int r, int c) { return m[static_cast<std::size_t>(r) * 3 + c]; }

  Eigen::Matrix3d mat() const {
    Eigen::Matrix3d e;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) e(r, c) = (*this)(r, c);
    return e;
  }

  static Homography from_mat(const Eigen::Matrix3d& e) {
    Homography h;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) h(r, c) = e(r, c);
    h.renormalize();
    return h;
  }

  void renormalize() {
    double w = m[8];
    if (std::abs(w) > 1e-14)
      for (auto& v : m) v /= w;
  }

  Vec2 apply(Vec2 p) const {
    double w = m[6] * p.x + m[7] * p.y + m[8];
    if (std::abs(w) < 1e-12)
      throw std::runtime_error("Homography::apply: point maps to infinity");
    return {(m[0] * p.x + m[1] * p.y + m[2]) / w,
            (m[3] * p.x + m[4] * p.y + m[5]) / w};
  }
};

// compose(a, b) maps like b after a: x -> b(a(x))
inline Homography compose(const Homography& a, const Homography& b) {
  return Homography::from_mat(b.mat() * a.mat());
}

inline Homography inverse(const Homography& h) {
  Eigen::Matrix3d m = h.mat();
  double det = m.determinant();
  if (!std::isfinite(det) || std::abs(det) < 1e-15)
    throw std::runtime_error("Homography inverse: singular matrix");
  return Homography::from_mat(m.inverse().eval());
}

struct PointMatch {
  Vec2 src;
  Vec2 dst;
};

struct ProjectedPoints {
  std::vector<Vec2> points;
  std::vector<bool> outside;  // true where the mapped point left [0,1]^2
  bool any_outside = false;
};

inline ProjectedPoints project_points(const Homography& h, const std::vector<Vec2>& pts) {
  ProjectedPoints out;
  out.points.reserve(pts.size());
  out.outside.reserve(pts.size());
  for (const Vec2& p : pts) {
    Vec2 q = h.apply(p);
    bool off = q.x < 0.0 || q.x > 1.0 || q.y < 0.0 || q.y > 1.0;
    out.points.push_back(q);
    out.outside.push_back(off);
    out.any_outside = out.any_outside || off;
  }
  return out;
}

// Projects the four corners, takes the bounding box, clips to [0,1]^2.
inline Box project_box(const Homography& h, const Box& b) {
  if (b.is_empty) return Box::empty();
  std::vector<Vec2> corners = {{b.x1, b.y1}, {b.x2, b.y1}, {b.x2, b.y2}, {b.x1, b.y2}};
  double x1 = 1e300, y1 = 1e300, x2 = -1e300, y2 = -1e300;
  for (const Vec2& c : corners) {
    Vec2 q = h.apply(c);
    x1 = std::min(x1, q.x);
    y1 = std::min(y1, q.y);
    x2 = std::max(x2, q.x);
    y2 = std::max(y2, q.y);
  }
  x1 = std::max(0.0, x1);
  y1 = std::max(0.0, y1);
  x2 = std::min(1.0, x2);
  y2 = std::min(1.0, y2);
  if (x1 >= x2 || y1 >= y2) return Box::empty();
  return Box{x1, y1, x2, y2, false};
}

namespace detail {

struct Similarity {
  double cx, cy, s;  // x' = s * (x - c)
  Vec2 apply(Vec2 p) const { return {s * (p.x - cx), s * (p.y - cy)}; }
  Eigen::Matrix3d mat() const {
    Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
    t(0, 0) = s;
    t(1, 1) = s;
    t(0, 2) = -s * cx;
    t(1, 2) = -s * cy;
    return t;
  }
};

inline Similarity normalizer(const std::vector<PointMatch>& ms, bool src) {
  double cx = 0, cy = 0;
  for (const auto& m : ms) {
    const Vec2& p = src ? m.src : m.dst;
    cx += p.x;
    cy += p.y;
  }
  cx /= static_cast<double>(ms.size());
  cy /= static_cast<double>(ms.size());
  double d = 0;
  for (const auto& m : ms) {
    const Vec2& p = src ? m.src : m.dst;
    d += std::hypot(p.x - cx, p.y - cy);
  }
  d /= static_cast<double>(ms.size());
  if (d < 1e-12) throw std::runtime_error("estimate_dlt: degenerate configuration (coincident points)");
  return {cx, cy, std::sqrt(2.0) / d};
}

}  // namespace detail

// Hartley-normalized direct linear transform. Throws on rank-deficient designs.
inline Homography estimate_dlt(const std::vector<PointMatch>& matches) {
  const std::size_t n = matches.size();
  if (n < 4) throw std::invalid_argument("estimate_dlt: needs at least 4 correspondences");
  for (const auto& m : matches)
    if (!std::isfinite(m.src.x) || !std::isfinite(m.src.y) || !std::isfinite(m.dst.x) ||
        !std::isfinite(m.dst.y))
      throw std::invalid_argument("estimate_dlt: non-finite correspondence");

  detail::Similarity ts = detail::normalizer(matches, true);
  detail::Similarity td = detail::normalizer(matches, false);

  Eigen::MatrixXd a(2 * static_cast<Eigen::Index>(n), 9);
  for (std::size_t i = 0; i < n; ++i) {
    Vec2 p = ts.apply(matches[i].src);
    Vec2 q = td.apply(matches[i].dst);
    Eigen::Index r = 2 * static_cast<Eigen::Index>(i);
    a.row(r) << -p.x, -p.y, -1, 0, 0, 0, q.x * p.x, q.x * p.y, q.x;
    a.row(r + 1) << 0, 0, 0, -p.x, -p.y, -1, q.y * p.x, q.y * p.y, q.y;
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // the exact-solution direction always contributes one vanishing singular
  // value; a second one means the configuration is degenerate
  double smax = sv(0);
  if (!(smax > 0.0)) throw std::runtime_error("estimate_dlt: degenerate configuration (zero design)");
  int null_dim = 9 - static_cast<int>(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) / smax < 1e-9) ++null_dim;
  if (null_dim >= 2)
    throw std::runtime_error("estimate_dlt: degenerate configuration (rank-deficient design)");

  Eigen::VectorXd hvec = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << hvec(0), hvec(1), hvec(2), hvec(3), hvec(4), hvec(5), hvec(6), hvec(7), hvec(8);
  Eigen::Matrix3d h = td.mat().inverse() * hn * ts.mat();
  return Homography::from_mat(h);
}

inline double reprojection_error(const Homography& h, const PointMatch& m) {
  Vec2 q = h.apply(m.src);
  return std::hypot(q.x - m.dst.x, q.y - m.dst.y);
}

struct RansacConfig {
  double inlier_threshold = 0.005;
  int max_iterations = 500;
  double min_inlier_fraction = 0.5;
  double confidence = 0.999;  // adaptive stop; set to 1.0 to always run max_iterations
  std::uint64_t seed = 0;
};

struct RansacResult {
  Homography h;
  std::vector<std::size_t> inliers;
  int iterations = 0;
};

namespace detail {

inline bool collinear(Vec2 a, Vec2 b, Vec2 c) {
  double cr = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
  return std::abs(cr) < 1e-9;
}

inline bool degenerate_sample(const std::vector<PointMatch>& ms) {
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      for (int k = j + 1; k < 4; ++k)
        if (collinear(ms[static_cast<std::size_t>(i)].src, ms[static_cast<std::size_t>(j)].src,
                      ms[static_cast<std::size_t>(k)].src) ||
            collinear(ms[static_cast<std::size_t>(i)].dst, ms[static_cast<std::size_t>(j)].dst,
                      ms[static_cast<std::size_t>(k)].dst))
          return true;
  return false;
}

}  // namespace detail

inline RansacResult estimate_ransac(const std::vector<PointMatch>& matches, const RansacConfig& cfg) {
  const std::size_t n = matches.size();
  if (n < 4) throw std::invalid_argument("estimate_ransac: needs at least 4 correspondences");
  if (!(cfg.inlier_threshold > 0.0)) throw std::invalid_argument("estimate_ransac: threshold must be positive");
  if (cfg.max_iterations < 1) throw std::invalid_argument("estimate_ransac: max_iterations must be >= 1");

  Rng rng(cfg.seed);
  std::size_t best_count = 0;
  double best_mean_err = 1e300;
  Homography best_h;
  bool have_best = false;
  double iters_needed = static_cast<double>(cfg.max_iterations);

  int it = 0;
  for (; it < cfg.max_iterations && it < iters_needed; ++it) {
    // sample 4 distinct indices
    std::size_t idx[4];
    for (int k = 0; k < 4;) {
      std::size_t cand = rng.bounded(n);
      bool dup = false;
      for (int j = 0; j < k; ++j) dup = dup || idx[j] == cand;
      if (!dup) idx[k++] = cand;
    }
    std::vector<PointMatch> sample = {matches[idx[0]], matches[idx[1]], matches[idx[2]],
                                      matches[idx[3]]};
    if (detail::degenerate_sample(sample)) continue;
    Homography h;
    try {
      h = estimate_dlt(sample);
    } catch (const std::runtime_error&) {
      continue;
    }
    std::size_t count = 0;
    double err_sum = 0.0;
    for (const auto& m : matches) {
      double e = reprojection_error(h, m);
      if (e < cfg.inlier_threshold) {
        ++count;
        err_sum += e;
      }
    }
    if (count < 4) continue;
    double mean_err = err_sum / static_cast<double>(count);
    if (count > best_count || (count == best_count && mean_err < best_mean_err)) {
      best_count = count;
      best_mean_err = mean_err;
      best_h = h;
      have_best = true;
      if (cfg.confidence < 1.0) {
        double w = static_cast<double>(count) / static_cast<double>(n);
        double denom = std::log(std::max(1e-12, 1.0 - w * w * w * w));
        if (w >= 1.0 || denom == 0.0)
          iters_needed = static_cast<double>(it) + 1.0;
        else
          iters_needed = std::ceil(std::log(1.0 - cfg.confidence) / denom);
      }
    }
  }

  if (!have_best)
    throw std::runtime_error("estimate_ransac: no model found within iteration budget");
  double frac = static_cast<double>(best_count) / static_cast<double>(n);
  if (frac < cfg.min_inlier_fraction)
    throw std::runtime_error("estimate_ransac: inlier fraction " + std::to_string(frac) +
                             " below minimum " + std::to_string(cfg.min_inlier_fraction));

  // refit on the full inlier set
  std::vector<PointMatch> inl;
  std::vector<std::size_t> inl_idx;
  for (std::size_t i = 0; i < n; ++i) {
    if (reprojection_error(best_h, matches[i]) < cfg.inlier_threshold) {
      inl.push_back(matches[i]);
      inl_idx.push_back(i);
    }
  }
  Homography refined = best_h;
  if (inl.size() >= 4) {
    try {
      refined = estimate_dlt(inl);
    } catch (const std::runtime_error&) {
      refined = best_h;
    }
  }
  return RansacResult{refined, std::move(inl_idx), it};
}

}  // namespace hrp
