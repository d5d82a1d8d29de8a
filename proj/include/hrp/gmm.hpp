// File: gmm.hpp
// Description: diagonal-covariance Gaussian mixtures fit by EM.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "hrp/common.hpp"

namespace hrp {

struct GmmModel {
  // k modes over d dimensions; row-major [k][d] for means and variances
  int k = 0;
  int dim = 0;
  std::vector<double> weights;
  std::vector<double> means;
  std::vector<double> vars;

  double mean(int mode, int d) const { return means[static_cast<std::size_t>(mode) * dim + d]; }
  double var(int mode, int d) const { return vars[static_cast<std::size_t>(mode) * dim + d]; }
};

enum class GmmInit { KMeansPP, RandomPoints };

struct EmConfig {
  int max_iterations = 100;
  double tol = 1e-7;            // relative log-likelihood improvement
  double variance_floor = 1e-6;
  GmmInit init = GmmInit::KMeansPP;
  std::uint64_t seed = 0;
};

struct EmResult {
  GmmModel model;
  std::vector<double> ll_trace;  // total log-likelihood after each E step
  int iterations = 0;
};

inline double gmm_log_pdf(const GmmModel& g, const std::vector<double>& x) {
  if (static_cast<int>(x.size()) != g.dim) throw std::invalid_argument("gmm_log_pdf: dimension mismatch");
  constexpr double log2pi = 1.8378770664093454836;
  double lse = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(static_cast<std::size_t>(g.k));
  double mx = -std::numeric_limits<double>::infinity();
  for (int m = 0; m < g.k; ++m) {
    double lw = g.weights[static_cast<std::size_t>(m)] > 0.0
                    ? std::log(g.weights[static_cast<std::size_t>(m)])
                    : -std::numeric_limits<double>::infinity();
    double t = lw;
    for (int d = 0; d < g.dim; ++d) {
      double v = g.var(m, d);
      double r = x[static_cast<std::size_t>(d)] - g.mean(m, d);
      t += -0.5 * (log2pi + std::log(v) + r * r / v);
    }
    terms[static_cast<std::size_t>(m)] = t;
    mx = std::max(mx, t);
  }
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - mx);
  lse = mx + std::log(s);
  return lse;
}

// Rows of the mean matrix sorted lexicographically; ties keep input order.
inline std::vector<double> sorted_means(const GmmModel& g) {
  std::vector<int> order(static_cast<std::size_t>(g.k));
  for (int i = 0; i < g.k; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    for (int d = 0; d < g.dim; ++d) {
      double va = g.mean(a, d), vb = g.mean(b, d);
      if (va != vb) return va < vb;
    }
    return false;
  });
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(g.k) * g.dim);
  for (int i : order)
    for (int d = 0; d < g.dim; ++d) out.push_back(g.mean(i, d));
  return out;
}

inline std::vector<double> gmm_sample(const GmmModel& g, Rng& rng) {
  double u = rng.uniform();
  int mode = g.k - 1;
  double acc = 0.0;
  for (int m = 0; m < g.k; ++m) {
    acc += g.weights[static_cast<std::size_t>(m)];
    if (u < acc) {
      mode = m;
      break;
    }
  }
  std::vector<double> x(static_cast<std::size_t>(g.dim));
  for (int d = 0; d < g.dim; ++d)
    x[static_cast<std::size_t>(d)] = g.mean(mode, d) + std::sqrt(g.var(mode, d)) * rng.normal();
  return x;
}

namespace detail {

inline std::vector<double> kmeanspp_centers(const std::vector<double>& pts, std::size_t n, int dim,
                                            int k, Rng& rng) {
  std::vector<double> centers;
  centers.reserve(static_cast<std::size_t>(k) * dim);
  auto push_center = [&](std::size_t i) {
    for (int d = 0; d < dim; ++d) centers.push_back(pts[i * dim + static_cast<std::size_t>(d)]);
  };
  push_center(rng.bounded(n));
  std::vector<double> d2(n);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int m = 0; m < c; ++m) {
        double s = 0.0;
        for (int d = 0; d < dim; ++d) {
          double r = pts[i * dim + static_cast<std::size_t>(d)] -
                     centers[static_cast<std::size_t>(m) * dim + static_cast<std::size_t>(d)];
          s += r * r;
        }
        best = std::min(best, s);
      }
      d2[i] = best;
      total += best;
    }
    std::size_t pick;
    if (total <= 0.0) {
      pick = rng.bounded(n);
    } else {
      double u = rng.uniform() * total;
      pick = n - 1;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (u < acc) {
          pick = i;
          break;
        }
      }
    }
    push_center(pick);
  }
  return centers;
}

}  // namespace detail

// points: row-major [n][dim]
inline EmResult fit_em(const std::vector<double>& points, std::size_t n, int dim, int k,
                       const EmConfig& cfg = {}) {
  if (k < 1) throw std::invalid_argument("fit_em: k must be >= 1");
  if (dim < 1) throw std::invalid_argument("fit_em: dim must be >= 1");
  if (n < 1) throw std::invalid_argument("fit_em: empty point set");
  if (points.size() != n * static_cast<std::size_t>(dim))
    throw std::invalid_argument("fit_em: point buffer size mismatch");
  for (double v : points)
    if (!std::isfinite(v)) throw std::invalid_argument("fit_em: non-finite point");
  if (!(cfg.variance_floor > 0.0)) throw std::invalid_argument("fit_em: variance_floor must be positive");

  Rng rng(cfg.seed);
  GmmModel g;
  g.k = k;
  g.dim = dim;
  g.weights.assign(static_cast<std::size_t>(k), 1.0 / k);
  g.means.resize(static_cast<std::size_t>(k) * dim);
  g.vars.resize(static_cast<std::size_t>(k) * dim);

  // global per-dim variance seeds every mode's covariance
  std::vector<double> gmean(static_cast<std::size_t>(dim), 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (int d = 0; d < dim; ++d) gmean[static_cast<std::size_t>(d)] += points[i * dim + static_cast<std::size_t>(d)];
  for (auto& v : gmean) v /= static_cast<double>(n);
  std::vector<double> gvar(static_cast<std::size_t>(dim), 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (int d = 0; d < dim; ++d) {
      double r = points[i * dim + static_cast<std::size_t>(d)] - gmean[static_cast<std::size_t>(d)];
      gvar[static_cast<std::size_t>(d)] += r * r;
    }
  for (auto& v : gvar) v = std::max(cfg.variance_floor, v / static_cast<double>(n));

  if (n < static_cast<std::size_t>(k)) {
    // degenerate: seed from the points, duplicating with floor-scale noise
    for (int m = 0; m < k; ++m) {
      std::size_t src = static_cast<std::size_t>(m) < n ? static_cast<std::size_t>(m) : rng.bounded(n);
      for (int d = 0; d < dim; ++d)
        g.means[static_cast<std::size_t>(m) * dim + static_cast<std::size_t>(d)] =
            points[src * dim + static_cast<std::size_t>(d)] +
            std::sqrt(cfg.variance_floor) * rng.normal();
    }
  } else if (cfg.init == GmmInit::KMeansPP) {
    g.means = detail::kmeanspp_centers(points, n, dim, k, rng);
  } else {
    // RandomPoints: k distinct indices
    std::vector<std::size_t> perm = rng.permutation(n);
    for (int m = 0; m < k; ++m)
      for (int d = 0; d < dim; ++d)
        g.means[static_cast<std::size_t>(m) * dim + static_cast<std::size_t>(d)] =
            points[perm[static_cast<std::size_t>(m)] * dim + static_cast<std::size_t>(d)];
  }
  for (int m = 0; m < k; ++m)
    for (int d = 0; d < dim; ++d)
      g.vars[static_cast<std::size_t>(m) * dim + static_cast<std::size_t>(d)] = gvar[static_cast<std::size_t>(d)];

  EmResult res;
  constexpr double log2pi = 1.8378770664093454836;
  std::vector<double> logresp(n * static_cast<std::size_t>(k));
  double prev_ll = -std::numeric_limits<double>::infinity();

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    // E step
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int m = 0; m < k; ++m) {
        double lw = g.weights[static_cast<std::size_t>(m)] > 0.0
                        ? std::log(g.weights[static_cast<std::size_t>(m)])
                        : -std::numeric_limits<double>::infinity();
        double t = lw;
        for (int d = 0; d < dim; ++d) {
          double v = g.var(m, d);
          double r = points[i * dim + static_cast<std::size_t>(d)] - g.mean(m, d);
          t += -0.5 * (log2pi + std::log(v) + r * r / v);
        }
        logresp[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(m)] = t;
        mx = std::max(mx, t);
      }
      double s = 0.0;
      for (int m = 0; m < k; ++m)
        s += std::exp(logresp[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(m)] - mx);
      double lse = mx + std::log(s);
      ll += lse;
      for (int m = 0; m < k; ++m) {
        auto& lr = logresp[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(m)];
        lr = std::exp(lr - lse);
      }
    }
    res.ll_trace.push_back(ll);
    res.iterations = iter + 1;
    if (iter > 0 && std::abs(ll - prev_ll) < cfg.tol * std::max(1.0, std::abs(ll))) {
      prev_ll = ll;
      break;
    }
    prev_ll = ll;

    // M step
    for (int m = 0; m < k; ++m) {
      double nk = 0.0;
      for (std::size_t i = 0; i < n; ++i) nk += logresp[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(m)];
      g.weights[static_cast<std::size_t>(m)] = nk / static_cast<double>(n);
      if (nk < 1e-12 * static_cast<double>(n)) continue;  // starved mode keeps its parameters
      for (int d = 0; d < dim; ++d) {
        double mu = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          mu += logresp[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(m)] *
                points[i * dim + static_cast<std::size_t>(d)];
        mu /= nk;
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          double r = points[i * dim + static_cast<std::size_t>(d)] - mu;
          var += logresp[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(m)] * r * r;
        }
        var = std::max(cfg.variance_floor, var / nk);
        g.means[static_cast<std::size_t>(m) * dim + static_cast<std::size_t>(d)] = mu;
        g.vars[static_cast<std::size_t>(m) * dim + static_cast<std::size_t>(d)] = var;
      }
    }
  }

  res.model = std::move(g);
  return res;
}

}  // namespace hrp
