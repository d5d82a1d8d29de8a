// File: numerics.hpp
// Description: ADAM optimizer, Savitzky-Golay smoothing, finite-difference gradient check.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hrp {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  AdamConfig cfg;
  long long step_count = 0;
  std::vector<double> m;
  std::vector<double> v;

  AdamState() = default;
  explicit AdamState(AdamConfig c) : cfg(c) {}
};

inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& st) {
  const AdamConfig& c = st.cfg;
  if (params.size() != grads.size())
    throw std::invalid_argument("adam_step: param/grad size mismatch");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0))
    throw std::invalid_argument("adam_step: betas must lie in [0, 1)");
  if (!(c.eps > 0.0)) throw std::invalid_argument("adam_step: eps must be positive");
  if (st.m.empty()) {
    st.m.assign(params.size(), 0.0);
    st.v.assign(params.size(), 0.0);
  }
  if (st.m.size() != params.size())
    throw std::invalid_argument("adam_step: moment size mismatch (state reused across shapes)");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i]))
      throw std::runtime_error("adam_step: non-finite gradient at index " + std::to_string(i));

  st.step_count += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.step_count));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double g = grads[i] + c.weight_decay * params[i];
    st.m[i] = c.beta1 * st.m[i] + (1.0 - c.beta1) * g;
    st.v[i] = c.beta2 * st.v[i] + (1.0 - c.beta2) * g * g;
    double mhat = st.m[i] / bc1;
    double vhat = st.v[i] / bc2;
    params[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
  }
}

struct SavGolConfig {
  int window_length = 7;
  int poly_order = 2;
};

// Least-squares polynomial smoothing coefficients: row of (A^T A)^-1 A^T that
// evaluates the fit at the window center.
inline std::vector<double> savgol_coefficients(const SavGolConfig& cfg) {
  const int w = cfg.window_length, p = cfg.poly_order;
  if (w < 3 || w % 2 == 0) throw std::invalid_argument("savgol: window_length must be odd and >= 3");
  if (p < 0 || p >= w) throw std::invalid_argument("savgol: poly_order must lie in [0, window_length)");
  const int h = w / 2;
  Eigen::MatrixXd a(w, p + 1);
  for (int r = 0; r < w; ++r) {
    double t = r - h, v = 1.0;
    for (int col = 0; col <= p; ++col) {
      a(r, col) = v;
      v *= t;
    }
  }
  Eigen::VectorXd e0 = Eigen::VectorXd::Zero(p + 1);
  e0(0) = 1.0;
  Eigen::VectorXd c = a * (a.transpose() * a).ldlt().solve(e0);
  return {c.data(), c.data() + w};
}

inline std::vector<double> savgol_smooth(std::span<const double> x, const SavGolConfig& cfg = {}) {
  const int n = static_cast<int>(x.size());
  if (n < cfg.window_length)
    throw std::invalid_argument("savgol: signal shorter than window");
  const std::vector<double> c = savgol_coefficients(cfg);
  const int h = cfg.window_length / 2;
  auto mirror = [n](int i) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
    return i;
  };
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = -h; j <= h; ++j) s += c[static_cast<std::size_t>(j + h)] * x[static_cast<std::size_t>(mirror(i + j))];
    out[static_cast<std::size_t>(i)] = s;
  }
  return out;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::vector<double> numeric;
};

// Central differences against a provided analytic gradient. Relative error per
// coordinate is |a - n| / max(|a|, |n|, denom_floor). Coordinates whose true
// gradient sits below the floor are effectively held to absolute agreement;
// pick the floor so that finite-difference roundoff (about eps*|f|/2h) stays
// well under floor * tolerance.
inline GradCheckResult grad_check(const std::function<double(std::span<const double>)>& f,
                                  std::span<const double> point,
                                  std::span<const double> analytic,
                                  double h = 1e-5, double denom_floor = 1e-8) {
  if (point.size() != analytic.size())
    throw std::invalid_argument("grad_check: point/gradient size mismatch");
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  if (!(denom_floor > 0.0)) throw std::invalid_argument("grad_check: floor must be positive");
  std::vector<double> x(point.begin(), point.end());
  GradCheckResult res;
  res.numeric.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    double fp = f(x);
    x[i] = x0 - h;
    double fm = f(x);
    x[i] = x0;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("grad_check: non-finite function value at index " + std::to_string(i));
    double num = (fp - fm) / (2.0 * h);
    res.numeric[i] = num;
    double rel = std::abs(analytic[i] - num) /
                 std::max({std::abs(analytic[i]), std::abs(num), denom_floor});
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst_index = i;
    }
  }
  return res;
}

}  // namespace hrp
