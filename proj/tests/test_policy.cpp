// File: test_policy.cpp
// Description: Mixture-policy tests: NLL closed forms, analytic gradients vs
// finite differences, dropout and augmentation behavior, sampling statistics,
// and a behavior-cloning training smoke run on expert demos.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "hrp/policy.hpp"
#include "hrp/simenv.hpp"

using namespace hrp;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("hrp_policy_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

PolicyConfig small_cfg(int k) {
  PolicyConfig c;
  c.gmm_modes = k;
  c.hidden = 10;
  c.dropout = 0.0;
  return c;
}

PolicyMlp random_mlp(int embed_dim, const PolicyConfig& cfg, std::uint64_t seed) {
  PolicyMlp m = init_policy(embed_dim, cfg, seed);
  Rng rng(derive_seed(seed, 99));
  auto jiggle = [&](Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += rng.normal(0.0, 0.3);
  };
  jiggle(m.b1);
  jiggle(m.b2);
  jiggle(m.b3);
  return m;
}

Eigen::VectorXd random_vec(Eigen::Index n, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal(0.0, scale);
  return v;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

double logged_nll_mean(const fs::path& trace, bool head, int take) {
  std::ifstream is(trace);
  REQUIRE(is.good());
  std::vector<double> vals;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto j = json::parse(line);
    if (j.contains("nll")) vals.push_back(j["nll"].get<double>());
  }
  REQUIRE(vals.size() >= static_cast<std::size_t>(2 * take));
  double sum = 0.0;
  for (int i = 0; i < take; ++i)
    sum += head ? vals[static_cast<std::size_t>(i)] : vals[vals.size() - 1 - static_cast<std::size_t>(i)];
  return sum / take;
}

}  // namespace

TEST_CASE("single-mode nll matches the diagonal gaussian closed form") {
  PolicyConfig cfg = small_cfg(1);
  Eigen::VectorXd out(7);
  out << 1.3, 0.02, -0.01, 0.7, -2.0, -1.5, -0.4;
  Eigen::Vector3d a(0.03, 0.01, 0.55);

  double expected = 0.0;
  for (int d = 0; d < 3; ++d) {
    double mu = out(1 + d), s = out(4 + d);
    double z = (a(d) - mu) / std::exp(s);
    expected += 0.5 * z * z + s + 0.5 * std::log(2.0 * M_PI);
  }
  CHECK_THAT(policy_nll(out, a, cfg), Catch::Matchers::WithinAbs(expected, 1e-12));
}

TEST_CASE("two-mode nll matches a log-sum-exp oracle") {
  PolicyConfig cfg = small_cfg(2);
  Eigen::VectorXd out(14);
  out << 0.4, 0.02, -0.03, 0.8, -1.0, -1.2, -0.8,
      -0.9, -0.04, 0.01, 0.1, -2.2, -0.5, -1.7;
  Eigen::Vector3d a(0.0, -0.02, 0.4);

  auto log_gauss = [&](int j) {
    double acc = 0.0;
    for (int d = 0; d < 3; ++d) {
      double mu = out(7 * j + 1 + d), s = out(7 * j + 4 + d);
      double z = (a(d) - mu) / std::exp(s);
      acc += -0.5 * z * z - s - 0.5 * std::log(2.0 * M_PI);
    }
    return acc;
  };
  double lw0 = out(0), lw1 = out(7);
  double norm = std::log(std::exp(lw0) + std::exp(lw1));
  double c0 = lw0 - norm + log_gauss(0);
  double c1 = lw1 - norm + log_gauss(1);
  double expected = -std::log(std::exp(c0) + std::exp(c1));
  CHECK_THAT(policy_nll(out, a, cfg), Catch::Matchers::WithinAbs(expected, 1e-12));
}

TEST_CASE("nll gradient matches finite differences including clamped log-stds") {
  PolicyConfig cfg = small_cfg(3);
  Eigen::VectorXd out = random_vec(21, 411, 0.8);
  out(4) = 2.7;    // above log_std_max, gradient must vanish
  out(11) = -6.0;  // below log_std_min
  Eigen::Vector3d a(0.04, -0.02, 0.7);

  Eigen::VectorXd dout;
  policy_nll(out, a, cfg, &dout);
  CHECK(dout(4) == 0.0);
  CHECK(dout(11) == 0.0);

  std::vector<double> point(out.data(), out.data() + out.size());
  std::vector<double> analytic(dout.data(), dout.data() + dout.size());
  auto f = [&](std::span<const double> x) {
    Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    return policy_nll(v, a, cfg);
  };
  auto res = grad_check(f, point, analytic);
  CHECK(res.max_rel_error < 1e-5);
}

TEST_CASE("trunk parameter gradients match finite differences") {
  PolicyConfig cfg = small_cfg(2);
  const int d_in = 6;
  PolicyMlp mlp = random_mlp(d_in, cfg, 21);
  Eigen::VectorXd z = random_vec(d_in, 22);
  Eigen::Vector3d a(0.01, -0.03, 0.6);

  PolicyCache cache;
  Eigen::VectorXd out = policy_forward(mlp, z, cfg, nullptr, &cache);
  Eigen::VectorXd dout;
  policy_nll(out, a, cfg, &dout);
  PolicyGrads grads = PolicyGrads::zeros_like(mlp);
  Eigen::VectorXd dz = policy_backward(mlp, cache, dout, grads);

  std::vector<double> theta;
  detail::policy_flatten(mlp, theta);
  PolicyMlp gm;
  gm.w1 = grads.w1;
  gm.b1 = grads.b1;
  gm.w2 = grads.w2;
  gm.b2 = grads.b2;
  gm.w3 = grads.w3;
  gm.b3 = grads.b3;
  std::vector<double> analytic;
  detail::policy_flatten(gm, analytic);

  PolicyMlp probe = mlp;
  auto f = [&](std::span<const double> x) {
    detail::policy_unflatten(probe, std::vector<double>(x.begin(), x.end()));
    return policy_nll(policy_forward(probe, z, cfg), a, cfg);
  };
  auto res = grad_check(f, theta, analytic);
  CHECK(res.max_rel_error < 1e-4);

  SECTION("input gradient too") {
    std::vector<double> zp(z.data(), z.data() + z.size());
    std::vector<double> dz_v(dz.data(), dz.data() + dz.size());
    auto fz = [&](std::span<const double> x) {
      Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
      return policy_nll(policy_forward(mlp, v, cfg), a, cfg);
    };
    auto rz = grad_check(fz, zp, dz_v);
    CHECK(rz.max_rel_error < 1e-4);
  }
}

TEST_CASE("gradients stay correct with dropout masks held fixed") {
  PolicyConfig cfg = small_cfg(2);
  cfg.dropout = 0.4;
  const int d_in = 6;
  PolicyMlp mlp = random_mlp(d_in, cfg, 31);
  Eigen::VectorXd z = random_vec(d_in, 32);
  Eigen::Vector3d a(0.0, 0.02, 0.3);

  PolicyCache cache;
  Rng rng(7777);
  Eigen::VectorXd out = policy_forward(mlp, z, cfg, &rng, &cache);
  Eigen::VectorXd dout;
  policy_nll(out, a, cfg, &dout);
  PolicyGrads grads = PolicyGrads::zeros_like(mlp);
  policy_backward(mlp, cache, dout, grads);

  std::vector<double> theta;
  detail::policy_flatten(mlp, theta);
  PolicyMlp gm;
  gm.w1 = grads.w1;
  gm.b1 = grads.b1;
  gm.w2 = grads.w2;
  gm.b2 = grads.b2;
  gm.w3 = grads.w3;
  gm.b3 = grads.b3;
  std::vector<double> analytic;
  detail::policy_flatten(gm, analytic);

  // dropped units must zero their exact gradient rows
  bool saw_dropped = false;
  for (Eigen::Index i = 0; i < cache.m2.size(); ++i)
    if (cache.m2(i) == 0.0) {
      saw_dropped = true;
      CHECK(grads.w3.row(i).isZero(0.0));
      CHECK(grads.b2(i) == 0.0);
    }
  CHECK(saw_dropped);

  PolicyMlp probe = mlp;
  auto f = [&](std::span<const double> x) {
    detail::policy_unflatten(probe, std::vector<double>(x.begin(), x.end()));
    Rng r(7777);  // same masks every evaluation
    return policy_nll(policy_forward(probe, z, cfg, &r), a, cfg);
  };
  auto res = grad_check(f, theta, analytic);
  // exact zeros from masks and clamps leave only finite-difference noise in
  // the numeric estimate, so near-zero coordinates get an absolute criterion
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    double denom = std::max({std::abs(analytic[i]), std::abs(res.numeric[i]), 1e-4});
    worst = std::max(worst, std::abs(analytic[i] - res.numeric[i]) / denom);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("dropout is inverted, seeded, and off at eval") {
  PolicyConfig cfg = small_cfg(1);
  cfg.hidden = 2000;
  cfg.dropout = 0.5;
  const int d_in = 4;
  PolicyMlp mlp = init_policy(d_in, cfg, 41);
  Eigen::VectorXd z = random_vec(d_in, 42);

  PolicyCache cache;
  Rng rng(900);
  policy_forward(mlp, z, cfg, &rng, &cache);

  int zeros = 0;
  for (Eigen::Index i = 0; i < cache.m1.size(); ++i) {
    bool keep = cache.m1(i) == 2.0;  // 1 / (1 - 0.5)
    bool drop = cache.m1(i) == 0.0;
    REQUIRE((keep || drop));
    zeros += drop ? 1 : 0;
  }
  double frac = static_cast<double>(zeros) / static_cast<double>(cache.m1.size());
  CHECK_THAT(frac, Catch::Matchers::WithinAbs(0.5, 0.05));
  CHECK_THAT(cache.m1.mean(), Catch::Matchers::WithinAbs(1.0, 0.06));

  Rng rng_a(901), rng_b(901);
  Eigen::VectorXd oa = policy_forward(mlp, z, cfg, &rng_a);
  Eigen::VectorXd ob = policy_forward(mlp, z, cfg, &rng_b);
  CHECK(oa == ob);

  // eval path ignores dropout entirely
  PolicyCache ec;
  Eigen::VectorXd eval_out = policy_forward(mlp, z, cfg, nullptr, &ec);
  CHECK(ec.m1 == Eigen::VectorXd::Ones(ec.m1.size()));
  Eigen::VectorXd manual = mlp.w3.transpose() *
                               (mlp.w2.transpose() * (mlp.w1.transpose() * z + mlp.b1).cwiseMax(0.0) + mlp.b2)
                                   .cwiseMax(0.0) +
                           mlp.b3;
  CHECK((eval_out - manual).lpNorm<Eigen::Infinity>() < 1e-12);

  // keep probability zero blanks the trunk, leaving only the output bias
  PolicyConfig all = cfg;
  all.dropout = 1.0;
  Rng rng_c(902);
  Eigen::VectorXd blank = policy_forward(mlp, z, all, &rng_c);
  CHECK(blank == mlp.b3);
}

TEST_CASE("sampling follows mixture weights and component spreads") {
  PolicyConfig cfg = small_cfg(2);
  Eigen::VectorXd out(14);
  // weights (0.9, 0.1); tight components far apart in x
  out << std::log(9.0), 0.5, 0.0, 0.2, -4.0, -4.0, -4.0,
      0.0, -0.5, 0.3, 0.9, -4.0, -4.0, -4.0;

  Rng rng(1234);
  int first = 0;
  Eigen::Vector3d sum0 = Eigen::Vector3d::Zero();
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    Eigen::Vector3d s = policy_sample(out, cfg, rng);
    if (std::abs(s(0) - 0.5) < std::abs(s(0) + 0.5)) {
      ++first;
      sum0 += s;
    }
  }
  double frac = static_cast<double>(first) / n;
  CHECK_THAT(frac, Catch::Matchers::WithinAbs(0.9, 0.02));
  Eigen::Vector3d mean0 = sum0 / first;
  CHECK_THAT(mean0(0), Catch::Matchers::WithinAbs(0.5, 0.005));
  CHECK_THAT(mean0(2), Catch::Matchers::WithinAbs(0.2, 0.005));

  Rng ra(55), rb(55);
  for (int i = 0; i < 10; ++i) CHECK(policy_sample(out, cfg, ra) == policy_sample(out, cfg, rb));
}

TEST_CASE("mean action takes the dominant mode and the policy fn clamps it") {
  PolicyConfig cfg = small_cfg(3);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(21);
  out(0) = 0.2;
  out(7) = 1.5;  // winner
  out(14) = -0.3;
  out.segment(8, 3) << 0.2, -0.3, 1.7;
  Eigen::Vector3d m = policy_mean_action(out, cfg);
  CHECK(m == Eigen::Vector3d(0.2, -0.3, 1.7));

  EncoderConfig ec;
  ec.image_size = 16;
  ec.patch_size = 4;
  ec.embed_dim = 8;
  ec.depth = 1;
  ec.heads = 2;
  ec.mlp_ratio = 2.0;
  EncoderParams enc = init_encoder(ec, 7);
  PolicyMlp mlp = init_policy(ec.embed_dim + kProprioDim, cfg, 8);
  mlp.w3.setZero();  // output is exactly b3
  mlp.b3.setZero();
  mlp.b3(7) = 50.0;  // mode 1 takes essentially all the weight
  mlp.b3.segment(8, 3) << 0.2, -0.3, 1.7;
  mlp.b3.segment(11, 3).setConstant(-5.0);  // spread tight enough that samples stay past the clamp

  SimConfig sc;
  sc.render_size = 16;
  SimEnv env(sc);
  env.reset(3);
  Image obs = env.render();
  SimAction a = make_policy_fn(enc, mlp, cfg, sc, 99)(obs, env.state());
  CHECK(a.dx == sc.max_step);
  CHECK(a.dy == -sc.max_step);
  CHECK(a.g == 1.0);

  // acting samples from the mixture, but identically so under one seed
  PolicyFn fa = make_policy_fn(enc, mlp, cfg, sc, 5);
  PolicyFn fb = make_policy_fn(enc, mlp, cfg, sc, 5);
  for (int i = 0; i < 4; ++i) {
    SimAction sa = fa(obs, env.state());
    SimAction sb = fb(obs, env.state());
    CHECK(sa.dx == sb.dx);
    CHECK(sa.dy == sb.dy);
    CHECK(sa.g == sb.g);
  }
}

TEST_CASE("the mixture view reproduces the nll through the gmm density") {
  PolicyConfig cfg = small_cfg(3);
  Eigen::VectorXd out = random_vec(21, 515, 0.9);
  out(4) = 2.9;  // clamps to log_std_max in both views
  GmmModel g = policy_mixture(out, cfg);
  REQUIRE(g.k == 3);
  REQUIRE(g.dim == 3);
  double wsum = 0.0;
  for (double w : g.weights) wsum += w;
  CHECK_THAT(wsum, Catch::Matchers::WithinAbs(1.0, 1e-12));
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::VectorXd a = random_vec(3, 600 + static_cast<std::uint64_t>(trial), 0.5);
    std::vector<double> av(a.data(), a.data() + 3);
    CHECK_THAT(policy_nll(out, Eigen::Vector3d(a), cfg),
               Catch::Matchers::WithinAbs(-gmm_log_pdf(g, av), 1e-12));
  }
}

TEST_CASE("pad-crop shifting replicates borders and centers to identity") {
  Image img(8, 8);
  Rng rng(66);
  for (auto& v : img.data) v = rng.uniform();

  Image same = shift_pad_crop(img, 3, 3, 3);
  CHECK(same.data == img.data);

  Image spike(8, 8, 0.0);
  spike.at(5, 4, 1) = 1.0;
  Image shifted = shift_pad_crop(spike, 2, 4, 2);  // samples from x+2
  CHECK(shifted.at(3, 4, 1) == 1.0);
  CHECK(shifted.at(5, 4, 1) == 0.0);

  Image flat(8, 8, 0.7);
  Image still_flat = shift_pad_crop(flat, 4, 0, 8);
  for (double v : still_flat.data) CHECK(v == 0.7);

  CHECK_THROWS_AS(shift_pad_crop(img, 2, 5, 0), std::invalid_argument);
}

TEST_CASE("gaussian blur keeps constants, matches a separable oracle, and smooths noise") {
  Image flat(8, 8, 0.3);
  Image bf = gaussian_blur(flat, 1.3);
  for (double v : bf.data) CHECK_THAT(v, Catch::Matchers::WithinAbs(0.3, 1e-12));

  // a centred spike reproduces the outer product of the 1d kernel with itself
  const double sigma = 1.0;
  const int radius = 3;
  Image spike(9, 9, 0.0);
  spike.at(4, 4, 0) = 1.0;
  Image bs = gaussian_blur(spike, sigma);
  std::vector<double> k(2 * radius + 1);
  double ksum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    ksum += k[static_cast<std::size_t>(i + radius)];
  }
  for (double& v : k) v /= ksum;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      CHECK_THAT(bs.at(4 + dx, 4 + dy, 0),
                 Catch::Matchers::WithinAbs(k[static_cast<std::size_t>(dx + radius)] *
                                                k[static_cast<std::size_t>(dy + radius)],
                                            1e-12));
  double total = 0.0;
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 9; ++x) total += bs.at(x, y, 0);
  CHECK_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-12));

  CHECK_THROWS_AS(gaussian_blur(flat, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_blur(flat, -1.0), std::invalid_argument);

  // white noise always loses variance
  auto var_of = [](const Image& im) {
    double mean = 0.0;
    for (double v : im.data) mean += v;
    mean /= static_cast<double>(im.data.size());
    double acc = 0.0;
    for (double v : im.data) acc += (v - mean) * (v - mean);
    return acc / static_cast<double>(im.data.size());
  };
  for (std::uint64_t s = 0; s < 20; ++s) {
    Image noise(12, 12);
    Rng nrng(derive_seed(1000, s));
    for (auto& v : noise.data) v = nrng.uniform();
    CHECK(var_of(gaussian_blur(noise, 2.0)) < var_of(noise));
  }

  PolicyConfig cfg;
  cfg.pad = 2;
  cfg.blur_prob = 1.0;
  Image src(8, 8);
  Rng rng(77);
  for (auto& v : src.data) v = rng.uniform();
  Rng a1(500), a2(500);
  Image ia = augment_image(src, cfg, a1);
  Image ib = augment_image(src, cfg, a2);
  CHECK(ia.data == ib.data);
  double lo = *std::min_element(src.data.begin(), src.data.end());
  double hi = *std::max_element(src.data.begin(), src.data.end());
  for (double v : ia.data) {
    CHECK(v >= lo - 1e-12);
    CHECK(v <= hi + 1e-12);
  }

  PolicyConfig ident;
  ident.pad = 0;
  ident.blur_prob = 0.0;
  Rng a3(501);
  Image ic = augment_image(src, ident, a3);
  CHECK(ic.data == src.data);
}

TEST_CASE("demo dataset loads trajectories written by the collector") {
  fs::path dir = fresh_dir("demos");
  SimConfig sc;
  sc.render_size = 16;
  json manifest = collect_demos(dir, sc, 3, 17, "test");

  DemoDataset data = DemoDataset::load(dir);
  CHECK(data.size() == manifest["counts"]["steps"].get<std::size_t>());

  auto steps = read_jsonl<DemoStep>(dir / "demos" / (std::string(traj_stem(0)) + ".jsonl"),
                                    &demo_step_from);
  REQUIRE(!steps.empty());
  CHECK(data.action(0).dx == steps[0].action.dx);
  CHECK(data.action(0).g == steps[0].action.g);
  Image obs = data.image(0);
  CHECK(obs.height == 16);
  CHECK(obs.width == 16);

  // the proprioceptive vector is the pre-action hand pose and gripper
  Eigen::Vector3d st = data.state(0);
  CHECK(st(0) == steps[0].state.hand.x);
  CHECK(st(1) == steps[0].state.hand.y);
  CHECK(st(2) == steps[0].state.gripper);
}

TEST_CASE("behavior cloning lowers the mixture nll and round trips") {
  fs::path demo_dir = fresh_dir("bc_demos");
  SimConfig sc;
  sc.render_size = 16;
  collect_demos(demo_dir, sc, 6, 23, "test");
  DemoDataset data = DemoDataset::load(demo_dir);
  REQUIRE(data.size() > 50);

  EncoderConfig ec;
  ec.image_size = 16;
  ec.patch_size = 4;
  ec.embed_dim = 8;
  ec.depth = 1;
  ec.heads = 2;
  ec.mlp_ratio = 2.0;
  EncoderParams enc = init_encoder(ec, 11);

  PolicyConfig pc;
  pc.gmm_modes = 2;
  pc.hidden = 32;
  pc.dropout = 0.1;
  pc.adam.lr = 3e-3;
  pc.batch_size = 16;
  pc.steps = 120;
  pc.log_every = 10;
  pc.pad = 2;
  pc.seed = 91;

  fs::path out_a = fresh_dir("bc_a");
  BcResult res = bc_train(data, enc, pc, out_a, "test");
  CHECK_FALSE(res.aborted);
  CHECK(res.steps_done == pc.steps);
  REQUIRE(fs::exists(res.checkpoint));

  double head = logged_nll_mean(out_a / "bc_trace.jsonl", true, 3);
  double tail = logged_nll_mean(out_a / "bc_trace.jsonl", false, 3);
  CHECK(tail < head);

  LoadedPolicy lp = load_policy_checkpoint(res.checkpoint);
  CHECK(lp.cfg.gmm_modes == pc.gmm_modes);
  CHECK(lp.cfg.hidden == pc.hidden);
  CHECK(lp.encoder.cfg.embed_dim == ec.embed_dim);
  // training is end to end, so the stored encoder has moved off its start
  double moved = 0.0;
  for (const auto& r : tensor_refs(enc)) {
    auto rs = tensor_refs(lp.encoder);
    const TensorRef* match = nullptr;
    for (const auto& cand : rs)
      if (cand.name == r.name) match = &cand;
    REQUIRE(match != nullptr);
    REQUIRE(match->size == r.size);
    for (std::size_t i = 0; i < r.size; ++i)
      moved = std::max(moved, std::abs(match->data[i] - r.data[i]));
  }
  CHECK(moved > 0.0);

  SimEnv env(sc);
  PolicyFn fn = make_policy_fn(lp.encoder, lp.mlp, lp.cfg, sc, 17);
  env.reset(4);
  Image obs = env.render();
  SimAction a = fn(obs, env.state());
  CHECK(std::abs(a.dx) <= sc.max_step);
  CHECK(std::abs(a.dy) <= sc.max_step);
  CHECK(a.g >= 0.0);
  CHECK(a.g <= 1.0);

  SECTION("training is byte deterministic") {
    fs::path out_b = fresh_dir("bc_b");
    BcResult res_b = bc_train(data, enc, pc, out_b, "test");
    CHECK_FALSE(res_b.aborted);
    CHECK(slurp(out_a / "policy.hrpt") == slurp(out_b / "policy.hrpt"));
    CHECK(slurp(out_a / "bc_trace.jsonl") == slurp(out_b / "bc_trace.jsonl"));
  }
}

TEST_CASE("a single pair is overfit and the dominant mode lands on the action") {
  EncoderConfig ec;
  ec.image_size = 16;
  ec.patch_size = 4;
  ec.embed_dim = 8;
  ec.depth = 1;
  ec.heads = 2;
  ec.mlp_ratio = 2.0;
  EncoderParams enc = init_encoder(ec, 3);

  SimConfig sc;
  sc.render_size = 16;
  SimEnv env(sc);
  env.reset(9);
  std::vector<Image> imgs{env.render()};
  std::vector<SimAction> acts{{0.03, -0.02, 1.0}};
  std::vector<Eigen::Vector3d> sts{proprio_state(env.state())};
  DemoDataset data = DemoDataset::in_memory(imgs, acts, sts);

  PolicyConfig pc;
  pc.gmm_modes = 2;
  pc.hidden = 16;
  pc.dropout = 0.0;
  pc.augment = false;
  pc.adam.lr = 1e-3;
  pc.adam.weight_decay = 0.0;
  pc.batch_size = 1;
  pc.steps = 500;
  pc.log_every = 1;
  pc.seed = 12;

  fs::path out = fresh_dir("bc_overfit");
  BcResult res = bc_train(data, enc, pc, out, "test");
  REQUIRE_FALSE(res.aborted);

  // nll means over consecutive 100-step windows fall monotonically
  std::ifstream is(out / "bc_trace.jsonl");
  REQUIRE(is.good());
  std::vector<double> nll;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto j = json::parse(line);
    if (j.contains("nll")) nll.push_back(j["nll"].get<double>());
  }
  REQUIRE(nll.size() == 500);
  double prev = std::numeric_limits<double>::infinity();
  for (int w = 0; w < 5; ++w) {
    double m = 0.0;
    for (int i = 0; i < 100; ++i) m += nll[static_cast<std::size_t>(w * 100 + i)];
    m /= 100.0;
    CHECK(m < prev);
    prev = m;
  }

  LoadedPolicy lp = load_policy_checkpoint(res.checkpoint);
  Eigen::VectorXd z = encoder_forward(lp.encoder, imgs[0]);
  Eigen::VectorXd head = policy_forward(lp.mlp, policy_input(z, sts[0]), lp.cfg);
  Eigen::Vector3d mean = policy_mean_action(head, lp.cfg);
  CHECK(std::abs(mean(0) - acts[0].dx) < 0.05);
  CHECK(std::abs(mean(1) - acts[0].dy) < 0.05);
  CHECK(std::abs(mean(2) - acts[0].g) < 0.05);
}

TEST_CASE("policy config round trips and rejects bad values") {
  PolicyConfig c;
  c.gmm_modes = 4;
  c.hidden = 64;
  c.dropout = 0.3;
  c.adam.lr = 2e-4;
  c.adam.weight_decay = 5e-4;
  c.batch_size = 8;
  c.steps = 77;
  c.log_every = 5;
  c.augment = false;
  c.pad = 3;
  c.blur_prob = 0.25;
  c.blur_sigma_min = 0.2;
  c.blur_sigma_max = 1.5;
  c.seed = 999;
  PolicyConfig back = PolicyConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());

  PolicyConfig bad = c;
  bad.dropout = 1.0;  // legal degenerate case: the trunk reduces to its biases
  CHECK_NOTHROW(bad.validate());
  bad = c;
  bad.dropout = 1.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = c;
  bad.log_std_min = 3.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = c;
  bad.blur_prob = 1.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = c;
  bad.blur_sigma_min = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = c;
  bad.blur_sigma_max = 0.1;  // below the lower end of the range
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  SECTION("train guards") {
    EncoderConfig ec;
    ec.image_size = 16;
    ec.patch_size = 4;
    ec.embed_dim = 8;
    ec.depth = 1;
    ec.heads = 2;
    ec.mlp_ratio = 2.0;
    EncoderParams enc = init_encoder(ec, 1);
    PolicyConfig pc;
    CHECK_THROWS_AS(bc_train(DemoDataset(), enc, pc, fresh_dir("bc_empty"), "t"),
                    std::invalid_argument);
    std::vector<Image> imgs{Image(8, 8)};
    std::vector<SimAction> acts{{0.0, 0.0, 0.0}};
    std::vector<Eigen::Vector3d> sts{Eigen::Vector3d::Zero()};
    auto tiny = DemoDataset::in_memory(imgs, acts, sts);
    CHECK_THROWS_AS(bc_train(tiny, enc, pc, fresh_dir("bc_badsize"), "t"),
                    std::invalid_argument);
  }
}
