// File: test_numerics.cpp
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "hrp/numerics.hpp"

using namespace hrp;

namespace {

// Plain scalar ADAM written independently of the library, used as the oracle.
struct ScalarAdamOracle {
  double m = 0, v = 0;
  long long t = 0;
  double step(double p, double g, double lr, double b1, double b2, double eps, double wd) {
    g += wd * p;
    t += 1;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    double mh = m / (1 - std::pow(b1, static_cast<double>(t)));
    double vh = v / (1 - std::pow(b2, static_cast<double>(t)));
    return p - lr * mh / (std::sqrt(vh) + eps);
  }
};

}  // namespace

TEST_CASE("adam matches scalar oracle on a quadratic") {
  // minimize (x - 3)^2 from 0; oracle runs the same recipe independently
  ScalarAdamOracle oracle;
  double xo = 0.0;
  AdamState st;
  st.cfg.lr = 0.1;
  st.cfg.weight_decay = 0.0;
  std::vector<double> x{0.0};
  for (int i = 0; i < 100; ++i) {
    double g = 2.0 * (x[0] - 3.0);
    double go = 2.0 * (xo - 3.0);
    adam_step(x, std::vector<double>{g}, st);
    xo = oracle.step(xo, go, 0.1, 0.9, 0.999, 1e-8, 0.0);
    REQUIRE(x[0] == Catch::Approx(xo).margin(1e-15));
  }
  REQUIRE(std::abs(x[0] - 3.0) < 0.1);
}

TEST_CASE("adam first step moves by exactly lr against the gradient sign") {
  AdamState st;
  st.cfg.lr = 1e-3;
  std::vector<double> x{5.0, -2.0};
  adam_step(x, std::vector<double>{0.7, -0.3}, st);
  // bias correction makes mhat/sqrt(vhat) = sign(g) on step one, up to eps
  REQUIRE(x[0] == Catch::Approx(5.0 - 1e-3).margin(1e-9));
  REQUIRE(x[1] == Catch::Approx(-2.0 + 1e-3).margin(1e-9));
}

TEST_CASE("adam zero gradient is a no-op from fresh state") {
  AdamState st;
  std::vector<double> x{1.0, 2.0, 3.0};
  std::vector<double> before = x;
  adam_step(x, std::vector<double>{0.0, 0.0, 0.0}, st);
  REQUIRE(x == before);
}

TEST_CASE("adam weight decay enters the gradient before the moment update") {
  ScalarAdamOracle oracle;
  AdamState st;
  st.cfg.lr = 0.01;
  st.cfg.weight_decay = 0.1;
  std::vector<double> x{2.0};
  double xo = 2.0;
  for (int i = 0; i < 10; ++i) {
    adam_step(x, std::vector<double>{0.5}, st);
    xo = oracle.step(xo, 0.5, 0.01, 0.9, 0.999, 1e-8, 0.1);
  }
  REQUIRE(x[0] == Catch::Approx(xo).margin(1e-15));
}

TEST_CASE("adam validates inputs") {
  AdamState st;
  std::vector<double> x{1.0};
  REQUIRE_THROWS_AS(adam_step(x, std::vector<double>{1.0, 2.0}, st), std::invalid_argument);
  std::vector<double> bad{std::nan("")};
  REQUIRE_THROWS_AS(adam_step(x, bad, st), std::runtime_error);
  AdamState badcfg;
  badcfg.cfg.beta1 = 1.0;
  REQUIRE_THROWS_AS(adam_step(x, std::vector<double>{0.0}, badcfg), std::invalid_argument);
}

TEST_CASE("savgol window-7 order-2 coefficients match the closed form") {
  // classical quadratic smoothing weights: (-2, 3, 6, 7, 6, 3, -2) / 21
  auto c = savgol_coefficients({7, 2});
  std::vector<double> expect{-2, 3, 6, 7, 6, 3, -2};
  REQUIRE(c.size() == 7);
  for (int i = 0; i < 7; ++i) REQUIRE(c[static_cast<std::size_t>(i)] == Catch::Approx(expect[static_cast<std::size_t>(i)] / 21.0).margin(1e-12));
}

TEST_CASE("savgol preserves constant and linear signals") {
  std::vector<double> c(20, 4.2);
  auto sc = savgol_smooth(c, {7, 2});
  for (double v : sc) REQUIRE(v == Catch::Approx(4.2).margin(1e-12));

  // mirror padding bends a ramp at the boundary, so linearity is an interior property
  std::vector<double> lin(20);
  for (int i = 0; i < 20; ++i) lin[static_cast<std::size_t>(i)] = 0.3 * i - 1.0;
  auto sl = savgol_smooth(lin, {7, 2});
  for (int i = 3; i < 17; ++i) REQUIRE(sl[static_cast<std::size_t>(i)] == Catch::Approx(lin[static_cast<std::size_t>(i)]).margin(1e-10));
}

TEST_CASE("savgol matches a direct least-squares fit per window") {
  // oracle: fit a quadratic to each mirrored window by normal equations
  std::vector<double> x(25);
  for (int i = 0; i < 25; ++i) x[static_cast<std::size_t>(i)] = std::sin(0.4 * i) + 0.1 * i;
  const int w = 7, h = 3, p = 2;
  auto mirror = [&](int i) {
    int n = static_cast<int>(x.size());
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
    return i;
  };
  auto smoothed = savgol_smooth(x, {w, p});
  for (int i = 0; i < 25; ++i) {
    Eigen::MatrixXd a(w, p + 1);
    Eigen::VectorXd y(w);
    for (int j = -h; j <= h; ++j) {
      double t = j, v = 1;
      for (int col = 0; col <= p; ++col) {
        a(j + h, col) = v;
        v *= t;
      }
      y(j + h) = x[static_cast<std::size_t>(mirror(i + j))];
    }
    Eigen::VectorXd beta = (a.transpose() * a).ldlt().solve(a.transpose() * y);
    REQUIRE(smoothed[static_cast<std::size_t>(i)] == Catch::Approx(beta(0)).margin(1e-9));
  }
}

TEST_CASE("savgol smooths a step without overshooting the crossing frame") {
  std::vector<double> x(21, 0.0);
  for (int i = 10; i < 21; ++i) x[static_cast<std::size_t>(i)] = 1.0;
  auto s = savgol_smooth(x, {7, 2});
  // first index with value >= 0.5 stays at the step location
  int first = -1;
  for (int i = 0; i < 21; ++i)
    if (s[static_cast<std::size_t>(i)] >= 0.5) {
      first = i;
      break;
    }
  REQUIRE(first == 10);
}

TEST_CASE("savgol validates configuration") {
  std::vector<double> x(10, 0.0);
  REQUIRE_THROWS_AS(savgol_smooth(x, {6, 2}), std::invalid_argument);
  REQUIRE_THROWS_AS(savgol_smooth(x, {7, 7}), std::invalid_argument);
  std::vector<double> tiny(3, 0.0);
  REQUIRE_THROWS_AS(savgol_smooth(tiny, {7, 2}), std::invalid_argument);
}

TEST_CASE("grad_check accepts an exact gradient and flags a corrupted one") {
  // f(x) = sum_i (i + 1) * x_i^2
  auto f = [](std::span<const double> v) {
    double s = 0;
    for (std::size_t i = 0; i < v.size(); ++i) s += (static_cast<double>(i) + 1.0) * v[i] * v[i];
    return s;
  };
  std::vector<double> x{0.3, -0.7, 1.2, 0.05};
  std::vector<double> g(4);
  for (std::size_t i = 0; i < 4; ++i) g[i] = 2.0 * (static_cast<double>(i) + 1.0) * x[i];

  auto ok = grad_check(f, x, g, 1e-5);
  REQUIRE(ok.max_rel_error < 1e-7);

  auto bad = g;
  bad[2] *= 2.0;  // relative error becomes |a-n|/max(|a|,|n|) = 0.5
  auto res = grad_check(f, x, bad, 1e-5);
  REQUIRE(res.worst_index == 2);
  REQUIRE(res.max_rel_error == Catch::Approx(0.5).margin(1e-4));
}

TEST_CASE("grad_check reports non-finite function values") {
  auto f = [](std::span<const double> v) { return std::log(v[0]); };
  std::vector<double> x{1e-6};
  std::vector<double> g{1e6};
  REQUIRE_THROWS_AS(grad_check(f, x, g, 1e-3), std::runtime_error);
}
