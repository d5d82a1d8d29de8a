// File: common.hpp
// Description: seeded RNG with pinned distributions, thread helper, image buffer.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace hrp {

inline constexpr const char* kVersion = "0.1.0";

// Stateless mix used to derive independent child seeds from a parent seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream) {
  return splitmix64(parent ^ splitmix64(stream));
}

// mt19937_64 supplies raw bits; every distribution on top is implemented by
// hand so streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // uniform double in [0, 1) with 53 random bits
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) {
    if (!(lo <= hi)) throw std::invalid_argument("Rng::uniform: lo > hi");
    return lo + (hi - lo) * uniform();
  }

  // Lemire's method, unbiased bounded integer in [0, n)
  std::uint64_t bounded(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::bounded: n == 0");
    std::uint64_t x = eng_();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto lo = static_cast<std::uint64_t>(m);
    if (lo < n) {
      std::uint64_t t = (-n) % n;
      while (lo < t) {
        x = eng_();
        m = static_cast<__uint128_t>(x) * n;
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  int uniform_int(int lo, int hi) {  // inclusive range
    if (lo > hi) throw std::invalid_argument("Rng::uniform_int: lo > hi");
    return lo + static_cast<int>(bounded(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  // Box-Muller without caching the second value; one normal consumes two uniforms.
  double normal() {
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

  template <class T>
  void shuffle(std::vector<T>& v) {  // Fisher-Yates, never std::shuffle
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = bounded(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    shuffle(p);
    return p;
  }

 private:
  std::mt19937_64 eng_;
};

inline int thread_count(int requested = 0) {
  if (requested <= 0) {
    if (const char* env = std::getenv("HRP_THREADS")) requested = std::atoi(env);
  }
  if (requested <= 0) requested = static_cast<int>(std::thread::hardware_concurrency());
  return std::max(1, requested);
}

// Static block partition; results must not depend on the thread count, so
// callers reduce in index order themselves.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body,
                         int threads = 0) {
  int tc = thread_count(threads);
  if (tc <= 1 || n < 2) {
    body(0, n);
    return;
  }
  std::size_t chunk = (n + tc - 1) / tc;
  std::vector<std::thread> pool;
  for (int t = 0; t < tc; ++t) {
    std::size_t lo = static_cast<std::size_t>(t) * chunk;
    if (lo >= n) break;
    std::size_t hi = std::min(n, lo + chunk);
    pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  for (auto& th : pool) th.join();
}

// Row-major interleaved image, values in [0, 1], channel count fixed at 3.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> data;  // (y * width + x) * 3 + c

  Image() = default;
  Image(int h, int w, double fill = 0.0) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, fill) {}

  double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::size_t size() const { return data.size(); }
};

}  // namespace hrp
