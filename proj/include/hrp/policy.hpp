// File: policy.hpp
// Description: Gaussian-mixture behavior cloning trained end to end. The
// encoder embedding is concatenated with the proprioceptive state, a two-layer
// ReLU trunk with inverted dropout emits per-mode weight logits, means and
// log-stds over the 3d action, and NLL gradients flow back into the encoder.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "hrp/common.hpp"
#include "hrp/encoder.hpp"
#include "hrp/gmm.hpp"
#include "hrp/numerics.hpp"
#include "hrp/simenv.hpp"

namespace hrp {

// proprioceptive slice of the sim state: own hand pose and gripper command
constexpr int kProprioDim = 3;

inline Eigen::Vector3d proprio_state(const SimState& st) {
  return {st.hand.x, st.hand.y, st.gripper};
}

struct PolicyConfig {
  int gmm_modes = 5;
  int hidden = 128;
  double dropout = 0.2;
  double log_std_min = -5.0;
  double log_std_max = 2.0;
  AdamConfig adam;  // lr 1e-4, weight decay 1e-4
  int batch_size = 32;
  int steps = 5000;
  int log_every = 25;
  bool augment = true;
  int pad = 4;
  double blur_prob = 0.5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;
  std::uint64_t seed = 0;

  PolicyConfig() { adam.weight_decay = 1e-4; }

  int out_dim() const { return gmm_modes * 7; }  // logit + 3 means + 3 log-stds

  void validate() const {
    if (gmm_modes < 1) throw std::invalid_argument("policy: gmm_modes must be >= 1");
    if (hidden < 1) throw std::invalid_argument("policy: hidden must be >= 1");
    if (dropout < 0.0 || dropout > 1.0) throw std::invalid_argument("policy: dropout must be in [0, 1]");
    if (!(log_std_min < log_std_max)) throw std::invalid_argument("policy: log_std bounds out of order");
    if (batch_size < 1) throw std::invalid_argument("policy: batch_size must be >= 1");
    if (steps < 1) throw std::invalid_argument("policy: steps must be >= 1");
    if (log_every < 1) throw std::invalid_argument("policy: log_every must be >= 1");
    if (pad < 0) throw std::invalid_argument("policy: pad must be >= 0");
    if (blur_prob < 0.0 || blur_prob > 1.0) throw std::invalid_argument("policy: blur_prob must be in [0, 1]");
    if (!(blur_sigma_min > 0.0) || blur_sigma_max < blur_sigma_min)
      throw std::invalid_argument("policy: blur sigma range out of order");
  }

  json to_json() const {
    return {{"gmm_modes", gmm_modes},
            {"hidden", hidden},
            {"dropout", dropout},
            {"log_std_min", log_std_min},
            {"log_std_max", log_std_max},
            {"lr", adam.lr},
            {"weight_decay", adam.weight_decay},
            {"batch_size", batch_size},
            {"steps", steps},
            {"log_every", log_every},
            {"augment", augment},
            {"pad", pad},
            {"blur_prob", blur_prob},
            {"blur_sigma_min", blur_sigma_min},
            {"blur_sigma_max", blur_sigma_max},
            {"seed", seed}};
  }

  static PolicyConfig from_json(const json& j) {
    PolicyConfig c;
    c.gmm_modes = j.value("gmm_modes", c.gmm_modes);
    c.hidden = j.value("hidden", c.hidden);
    c.dropout = j.value("dropout", c.dropout);
    c.log_std_min = j.value("log_std_min", c.log_std_min);
    c.log_std_max = j.value("log_std_max", c.log_std_max);
    c.adam.lr = j.value("lr", c.adam.lr);
    c.adam.weight_decay = j.value("weight_decay", c.adam.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.steps = j.value("steps", c.steps);
    c.log_every = j.value("log_every", c.log_every);
    c.augment = j.value("augment", c.augment);
    c.pad = j.value("pad", c.pad);
    c.blur_prob = j.value("blur_prob", c.blur_prob);
    c.blur_sigma_min = j.value("blur_sigma_min", c.blur_sigma_min);
    c.blur_sigma_max = j.value("blur_sigma_max", c.blur_sigma_max);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }
};

struct PolicyMlp {
  Eigen::MatrixXd w1;  // [D, H]
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // [H, H]
  Eigen::VectorXd b2;
  Eigen::MatrixXd w3;  // [H, out]
  Eigen::VectorXd b3;
};

struct PolicyGrads {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;
  Eigen::MatrixXd w3;
  Eigen::VectorXd b3;

  static PolicyGrads zeros_like(const PolicyMlp& m) {
    PolicyGrads g;
    g.w1 = Eigen::MatrixXd::Zero(m.w1.rows(), m.w1.cols());
    g.b1 = Eigen::VectorXd::Zero(m.b1.size());
    g.w2 = Eigen::MatrixXd::Zero(m.w2.rows(), m.w2.cols());
    g.b2 = Eigen::VectorXd::Zero(m.b2.size());
    g.w3 = Eigen::MatrixXd::Zero(m.w3.rows(), m.w3.cols());
    g.b3 = Eigen::VectorXd::Zero(m.b3.size());
    return g;
  }

  void zero() {
    w1.setZero();
    b1.setZero();
    w2.setZero();
    b2.setZero();
    w3.setZero();
    b3.setZero();
  }
};

namespace detail {

inline void policy_flatten(const PolicyMlp& m, std::vector<double>& out) {
  out.clear();
  auto push = [&](const double* p, std::size_t n) { out.insert(out.end(), p, p + n); };
  push(m.w1.data(), static_cast<std::size_t>(m.w1.size()));
  push(m.b1.data(), static_cast<std::size_t>(m.b1.size()));
  push(m.w2.data(), static_cast<std::size_t>(m.w2.size()));
  push(m.b2.data(), static_cast<std::size_t>(m.b2.size()));
  push(m.w3.data(), static_cast<std::size_t>(m.w3.size()));
  push(m.b3.data(), static_cast<std::size_t>(m.b3.size()));
}

inline void policy_unflatten(PolicyMlp& m, const std::vector<double>& flat) {
  std::size_t at = 0;
  auto pull = [&](double* p, std::size_t n) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(at),
              flat.begin() + static_cast<std::ptrdiff_t>(at + n), p);
    at += n;
  };
  pull(m.w1.data(), static_cast<std::size_t>(m.w1.size()));
  pull(m.b1.data(), static_cast<std::size_t>(m.b1.size()));
  pull(m.w2.data(), static_cast<std::size_t>(m.w2.size()));
  pull(m.b2.data(), static_cast<std::size_t>(m.b2.size()));
  pull(m.w3.data(), static_cast<std::size_t>(m.w3.size()));
  pull(m.b3.data(), static_cast<std::size_t>(m.b3.size()));
  if (at != flat.size()) throw std::invalid_argument("policy_unflatten: size mismatch");
}

}  // namespace detail

struct PolicyCache {
  Eigen::VectorXd z;
  Eigen::VectorXd a1, h1;  // pre-activation, post-relu-and-dropout
  Eigen::VectorXd m1;
  Eigen::VectorXd a2, h2;
  Eigen::VectorXd m2;
};

// Dropout masks are drawn only when rng is given (training mode); inverted
// scaling keeps the eval pass mask-free.
inline Eigen::VectorXd policy_forward(const PolicyMlp& m, const Eigen::VectorXd& z,
                                      const PolicyConfig& cfg, Rng* rng = nullptr,
                                      PolicyCache* cache = nullptr) {
  PolicyCache local;
  PolicyCache& c = cache ? *cache : local;
  c.z = z;
  auto dropout_mask = [&](Eigen::Index n) {
    Eigen::VectorXd mask = Eigen::VectorXd::Ones(n);
    if (rng && cfg.dropout > 0.0) {
      double keep = 1.0 - cfg.dropout;
      if (keep == 0.0) return Eigen::VectorXd::Zero(n).eval();
      for (Eigen::Index i = 0; i < n; ++i)
        mask(i) = rng->uniform() < keep ? 1.0 / keep : 0.0;
    }
    return mask;
  };
  c.a1 = m.w1.transpose() * z + m.b1;
  c.m1 = dropout_mask(c.a1.size());
  c.h1 = c.a1.cwiseMax(0.0).cwiseProduct(c.m1);
  c.a2 = m.w2.transpose() * c.h1 + m.b2;
  c.m2 = dropout_mask(c.a2.size());
  c.h2 = c.a2.cwiseMax(0.0).cwiseProduct(c.m2);
  return m.w3.transpose() * c.h2 + m.b3;
}

// returns d loss / d input; its embedding slice feeds the encoder backward pass
inline Eigen::VectorXd policy_backward(const PolicyMlp& m, const PolicyCache& c,
                                       const Eigen::VectorXd& dout, PolicyGrads& g) {
  g.w3.noalias() += c.h2 * dout.transpose();
  g.b3 += dout;
  Eigen::VectorXd dh2 = m.w3 * dout;
  Eigen::VectorXd da2 =
      dh2.cwiseProduct(c.m2).cwiseProduct((c.a2.array() > 0.0).cast<double>().matrix());
  g.w2.noalias() += c.h1 * da2.transpose();
  g.b2 += da2;
  Eigen::VectorXd dh1 = m.w2 * da2;
  Eigen::VectorXd da1 =
      dh1.cwiseProduct(c.m1).cwiseProduct((c.a1.array() > 0.0).cast<double>().matrix());
  g.w1.noalias() += c.z * da1.transpose();
  g.b1 += da1;
  return m.w1 * da1;
}

// Mixture negative log-likelihood of one action. Output layout per mode:
// [weight logit, mean x3, log-std x3]. Log-stds act through a clamp, so the
// gradient of a saturated entry is zero.
inline double policy_nll(const Eigen::VectorXd& out, const Eigen::Vector3d& action,
                         const PolicyConfig& cfg, Eigen::VectorXd* dout = nullptr) {
  const int k = cfg.gmm_modes;
  if (out.size() != 7 * k) throw std::invalid_argument("policy_nll: bad output size");
  constexpr double kLog2Pi = 1.8378770664093453;

  Eigen::VectorXd logits(k), log_comp(k);
  Eigen::MatrixXd mu(k, 3), s_clamped(k, 3);
  for (int j = 0; j < k; ++j) {
    logits(j) = out(7 * j);
    for (int d = 0; d < 3; ++d) {
      mu(j, d) = out(7 * j + 1 + d);
      s_clamped(j, d) = std::clamp(out(7 * j + 4 + d), cfg.log_std_min, cfg.log_std_max);
    }
  }
  double lmax = logits.maxCoeff();
  double lse_logits = lmax + std::log((logits.array() - lmax).exp().sum());
  for (int j = 0; j < k; ++j) {
    double acc = logits(j) - lse_logits;
    for (int d = 0; d < 3; ++d) {
      double sd = s_clamped(j, d);
      double zd = (action(d) - mu(j, d)) * std::exp(-sd);
      acc += -0.5 * zd * zd - sd - 0.5 * kLog2Pi;
    }
    log_comp(j) = acc;
  }
  double cmax = log_comp.maxCoeff();
  double lse = cmax + std::log((log_comp.array() - cmax).exp().sum());
  if (!dout) return -lse;

  Eigen::VectorXd resp = (log_comp.array() - lse).exp();
  Eigen::VectorXd w = (logits.array() - lse_logits).exp();
  dout->setZero(out.size());
  for (int j = 0; j < k; ++j) {
    (*dout)(7 * j) = w(j) - resp(j);
    for (int d = 0; d < 3; ++d) {
      double sd = s_clamped(j, d);
      double inv_var = std::exp(-2.0 * sd);
      double diff = action(d) - mu(j, d);
      (*dout)(7 * j + 1 + d) = -resp(j) * diff * inv_var;
      double raw = out(7 * j + 4 + d);
      bool saturated = raw <= cfg.log_std_min || raw >= cfg.log_std_max;
      (*dout)(7 * j + 4 + d) = saturated ? 0.0 : -resp(j) * (diff * diff * inv_var - 1.0);
    }
  }
  return -lse;
}

// Trunk output interpreted as the gmm module's mixture type; log-stds pass
// through the same clamp the likelihood uses.
inline GmmModel policy_mixture(const Eigen::VectorXd& out, const PolicyConfig& cfg) {
  const int k = cfg.gmm_modes;
  if (out.size() != 7 * k) throw std::invalid_argument("policy_mixture: bad output size");
  GmmModel g;
  g.k = k;
  g.dim = 3;
  g.weights.resize(static_cast<std::size_t>(k));
  g.means.resize(static_cast<std::size_t>(k) * 3);
  g.vars.resize(static_cast<std::size_t>(k) * 3);
  Eigen::VectorXd logits(k);
  for (int j = 0; j < k; ++j) logits(j) = out(7 * j);
  double lmax = logits.maxCoeff();
  Eigen::VectorXd w = (logits.array() - lmax).exp();
  w /= w.sum();
  for (int j = 0; j < k; ++j) {
    g.weights[static_cast<std::size_t>(j)] = w(j);
    for (int d = 0; d < 3; ++d) {
      double s = std::clamp(out(7 * j + 4 + d), cfg.log_std_min, cfg.log_std_max);
      g.means[static_cast<std::size_t>(j) * 3 + d] = out(7 * j + 1 + d);
      g.vars[static_cast<std::size_t>(j) * 3 + d] = std::exp(2.0 * s);
    }
  }
  return g;
}

inline Eigen::Vector3d policy_sample(const Eigen::VectorXd& out, const PolicyConfig& cfg,
                                     Rng& rng) {
  const int k = cfg.gmm_modes;
  Eigen::VectorXd logits(k);
  for (int j = 0; j < k; ++j) logits(j) = out(7 * j);
  double lmax = logits.maxCoeff();
  Eigen::VectorXd w = (logits.array() - lmax).exp();
  w /= w.sum();
  double u = rng.uniform();
  int pick = k - 1;
  double acc = 0.0;
  for (int j = 0; j < k; ++j) {
    acc += w(j);
    if (u < acc) {
      pick = j;
      break;
    }
  }
  Eigen::Vector3d a;
  for (int d = 0; d < 3; ++d) {
    double s = std::clamp(out(7 * pick + 4 + d), cfg.log_std_min, cfg.log_std_max);
    a(d) = out(7 * pick + 1 + d) + std::exp(s) * rng.normal();
  }
  return a;
}

// deterministic action: mean of the highest-weight mode
inline Eigen::Vector3d policy_mean_action(const Eigen::VectorXd& out, const PolicyConfig& cfg) {
  int best = 0;
  for (int j = 1; j < cfg.gmm_modes; ++j)
    if (out(7 * j) > out(7 * best)) best = j;
  return {out(7 * best + 1), out(7 * best + 2), out(7 * best + 3)};
}

// replicate-pad by `pad`, then crop at offset (ox, oy) in [0, 2*pad]
inline Image shift_pad_crop(const Image& img, int pad, int ox, int oy) {
  if (ox < 0 || oy < 0 || ox > 2 * pad || oy > 2 * pad)
    throw std::invalid_argument("shift_pad_crop: offset out of range");
  Image out(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      int sx = std::clamp(x + ox - pad, 0, img.width - 1);
      int sy = std::clamp(y + oy - pad, 0, img.height - 1);
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(sx, sy, c);
    }
  return out;
}

// separable gaussian blur, replicate borders; kernel radius grows with sigma
inline Image gaussian_blur(const Image& img, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_blur: sigma must be positive");
  int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kern(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kern[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += kern[static_cast<std::size_t>(i + radius)];
  }
  for (double& v : kern) v /= sum;

  Image tmp(img.height, img.width), out(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += kern[static_cast<std::size_t>(i + radius)] *
                 img.at(std::clamp(x + i, 0, img.width - 1), y, c);
        tmp.at(x, y, c) = acc;
      }
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += kern[static_cast<std::size_t>(i + radius)] *
                 tmp.at(x, std::clamp(y + i, 0, img.height - 1), c);
        out.at(x, y, c) = acc;
      }
  return out;
}

// draw order per image: crop offsets, blur coin, then sigma only if it fires
inline Image augment_image(const Image& img, const PolicyConfig& cfg, Rng& rng) {
  int ox = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(2 * cfg.pad + 1)));
  int oy = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(2 * cfg.pad + 1)));
  Image out = shift_pad_crop(img, cfg.pad, ox, oy);
  if (rng.uniform() < cfg.blur_prob)
    out = gaussian_blur(out, rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max));
  return out;
}

// Demonstration steps with observations fetched lazily per trajectory.
class DemoDataset {
 public:
  DemoDataset() = default;

  static DemoDataset load(const std::filesystem::path& demos_dir) {
    DemoDataset d;
    json manifest = read_manifest(demos_dir);
    if (!manifest.contains("episodes")) throw std::runtime_error("demo manifest has no episodes");
    for (const auto& entry : manifest["episodes"]) {
      auto steps = read_jsonl<DemoStep>(demos_dir / entry.at("trajectory").get<std::string>(),
                                        &demo_step_from);
      if (steps.empty()) continue;
      d.trajs_.emplace_back((demos_dir / entry.at("images").get<std::string>()).string());
      for (std::size_t s = 0; s < steps.size(); ++s)
        d.entries_.push_back({static_cast<int>(d.trajs_.size()) - 1, static_cast<int>(s), -1,
                              steps[s].action, proprio_state(steps[s].state)});
    }
    return d;
  }

  static DemoDataset in_memory(std::vector<Image> images, std::vector<SimAction> actions,
                               std::vector<Eigen::Vector3d> states) {
    if (images.size() != actions.size() || images.size() != states.size())
      throw std::invalid_argument("in_memory demos: images, actions and states must pair up");
    DemoDataset d;
    d.images_ = std::move(images);
    for (std::size_t i = 0; i < actions.size(); ++i)
      d.entries_.push_back({-1, -1, static_cast<int>(i), actions[i], states[i]});
    return d;
  }

  std::size_t size() const { return entries_.size(); }

  Image image(std::size_t i) const {
    const Entry& e = entries_.at(i);
    if (e.traj < 0) return images_.at(static_cast<std::size_t>(e.mem));
    return read_clip_frame(trajs_.at(static_cast<std::size_t>(e.traj)), e.step);
  }

  const SimAction& action(std::size_t i) const { return entries_.at(i).action; }
  const Eigen::Vector3d& state(std::size_t i) const { return entries_.at(i).state; }

 private:
  struct Entry {
    int traj;
    int step;
    int mem;
    SimAction action;
    Eigen::Vector3d state;
  };
  std::vector<ContainerIndex> trajs_;
  std::vector<Image> images_;
  std::vector<Entry> entries_;
};

// input_dim covers the encoder embedding plus the proprioceptive slice
inline PolicyMlp init_policy(int input_dim, const PolicyConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, 0x706f6c));
  PolicyMlp m;
  auto fill = [&](Eigen::MatrixXd& w, int rows, int cols) {
    w.resize(rows, cols);
    double std = std::sqrt(2.0 / static_cast<double>(rows + cols));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal(0.0, std);
  };
  fill(m.w1, input_dim, cfg.hidden);
  m.b1 = Eigen::VectorXd::Zero(cfg.hidden);
  fill(m.w2, cfg.hidden, cfg.hidden);
  m.b2 = Eigen::VectorXd::Zero(cfg.hidden);
  fill(m.w3, cfg.hidden, cfg.out_dim());
  m.b3 = Eigen::VectorXd::Zero(cfg.out_dim());
  // start log-stds near -1 instead of 0 for a gentler first epoch
  for (int j = 0; j < cfg.gmm_modes; ++j)
    for (int d = 0; d < 3; ++d) m.b3(7 * j + 4 + d) = -1.0;
  return m;
}

inline void save_policy_checkpoint(const std::filesystem::path& path, const EncoderParams& enc,
                                   const PolicyMlp& mlp, const PolicyConfig& cfg,
                                   json extra_meta = json::object()) {
  Container c;
  auto add_ref = [&](const TensorRef& r) {
    TensorEntry t;
    t.name = r.name;
    t.dims = r.dims;
    t.data.resize(r.size);
    for (std::size_t i = 0; i < r.size; ++i) t.data[i] = static_cast<float>(r.data[i]);
    c.tensors.push_back(std::move(t));
  };
  for (const auto& r : tensor_refs(const_cast<EncoderParams&>(enc))) add_ref(r);
  auto add_mat = [&](const std::string& name, const Eigen::MatrixXd& wm) {
    TensorEntry t;
    t.name = name;
    t.dims = {static_cast<std::uint64_t>(wm.rows()), static_cast<std::uint64_t>(wm.cols())};
    t.data.resize(static_cast<std::size_t>(wm.size()));
    for (Eigen::Index i = 0; i < wm.size(); ++i) t.data[static_cast<std::size_t>(i)] = static_cast<float>(wm.data()[i]);
    c.tensors.push_back(std::move(t));
  };
  auto add_vec = [&](const std::string& name, const Eigen::VectorXd& v) {
    TensorEntry t;
    t.name = name;
    t.dims = {static_cast<std::uint64_t>(v.size())};
    t.data.resize(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) t.data[static_cast<std::size_t>(i)] = static_cast<float>(v(i));
    c.tensors.push_back(std::move(t));
  };
  add_mat("policy.w1", mlp.w1);
  add_vec("policy.b1", mlp.b1);
  add_mat("policy.w2", mlp.w2);
  add_vec("policy.b2", mlp.b2);
  add_mat("policy.w3", mlp.w3);
  add_vec("policy.b3", mlp.b3);
  c.meta = std::move(extra_meta);
  c.meta["kind"] = "policy";
  c.meta["encoder_config"] = enc.cfg.to_json();
  c.meta["policy_config"] = cfg.to_json();
  write_container(path, c);
}

struct LoadedPolicy {
  EncoderParams encoder;
  PolicyMlp mlp;
  PolicyConfig cfg;
  json meta;
};

inline LoadedPolicy load_policy_checkpoint(const std::filesystem::path& path) {
  Container c = read_container(path);
  if (c.meta.value("kind", std::string()) != "policy")
    throw std::runtime_error("not a policy checkpoint: " + path.string());
  LoadedPolicy out;
  out.meta = c.meta;
  out.cfg = PolicyConfig::from_json(c.meta.at("policy_config"));
  out.encoder = init_encoder(EncoderConfig::from_json(c.meta.at("encoder_config")), 0);
  for (const auto& r : tensor_refs(out.encoder)) {
    const TensorEntry* t = c.find(r.name);
    if (!t) throw std::runtime_error("policy checkpoint missing tensor '" + r.name + "'");
    if (t->elems() != r.size) throw std::runtime_error("bad tensor size for '" + r.name + "'");
    for (std::size_t i = 0; i < r.size; ++i) r.data[i] = static_cast<double>(t->data[i]);
  }
  out.mlp = init_policy(out.encoder.cfg.embed_dim + kProprioDim, out.cfg, 0);
  auto pull_mat = [&](const std::string& name, Eigen::MatrixXd& wm) {
    const TensorEntry* t = c.find(name);
    if (!t || t->elems() != static_cast<std::size_t>(wm.size()))
      throw std::runtime_error("policy checkpoint missing tensor '" + name + "'");
    for (Eigen::Index i = 0; i < wm.size(); ++i) wm.data()[i] = static_cast<double>(t->data[static_cast<std::size_t>(i)]);
  };
  auto pull_vec = [&](const std::string& name, Eigen::VectorXd& v) {
    const TensorEntry* t = c.find(name);
    if (!t || t->elems() != static_cast<std::size_t>(v.size()))
      throw std::runtime_error("policy checkpoint missing tensor '" + name + "'");
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = static_cast<double>(t->data[static_cast<std::size_t>(i)]);
  };
  pull_mat("policy.w1", out.mlp.w1);
  pull_vec("policy.b1", out.mlp.b1);
  pull_mat("policy.w2", out.mlp.w2);
  pull_vec("policy.b2", out.mlp.b2);
  pull_mat("policy.w3", out.mlp.w3);
  pull_vec("policy.b3", out.mlp.b3);
  return out;
}

inline Eigen::VectorXd policy_input(const Eigen::VectorXd& z, const Eigen::Vector3d& state) {
  Eigen::VectorXd x(z.size() + kProprioDim);
  x.head(z.size()) = z;
  x.tail(kProprioDim) = state;
  return x;
}

// Execution-time policy: encode, concatenate proprioception, sample an action
// from the mixture and clip it into the action box. The sample stream is owned
// by the closure and fixed by act_seed.
inline PolicyFn make_policy_fn(const EncoderParams& enc, const PolicyMlp& mlp,
                               const PolicyConfig& cfg, const SimConfig& sim,
                               std::uint64_t act_seed) {
  auto rng = std::make_shared<Rng>(derive_seed(act_seed, 0x616374));
  return [&enc, mlp, cfg, sim, rng](const Image& obs, const SimState& st) {
    Eigen::VectorXd z = encoder_forward(enc, obs);
    Eigen::VectorXd out = policy_forward(mlp, policy_input(z, proprio_state(st)), cfg);
    Eigen::Vector3d a = policy_sample(out, cfg, *rng);
    return SimAction{std::clamp(a(0), -sim.max_step, sim.max_step),
                     std::clamp(a(1), -sim.max_step, sim.max_step), std::clamp(a(2), 0.0, 1.0)};
  };
}

struct BcResult {
  double initial_nll = 0.0;
  double final_nll = 0.0;
  int steps_done = 0;
  bool aborted = false;
  std::filesystem::path checkpoint;
};

// Behavior cloning against expert demos, optimized end to end: NLL gradients
// update the mixture trunk and every encoder tensor under one ADAM state.
inline BcResult bc_train(const DemoDataset& data, const EncoderParams& init_encoder_params,
                         const PolicyConfig& cfg, const std::filesystem::path& out_dir,
                         const std::string& command) {
  cfg.validate();
  if (data.size() == 0) throw std::invalid_argument("bc_train: empty dataset");
  {
    Image probe = data.image(0);
    if (probe.height != init_encoder_params.cfg.image_size ||
        probe.width != init_encoder_params.cfg.image_size)
      throw std::invalid_argument("bc_train: demo image size does not match encoder config");
  }
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  EncoderParams encoder = init_encoder_params;
  ParamPartition part{PartitionMode::Full};
  GradSet egs = make_grad_set(encoder, nullptr, part);

  PolicyMlp mlp = init_policy(encoder.cfg.embed_dim + kProprioDim, cfg, cfg.seed);
  PolicyGrads grads = PolicyGrads::zeros_like(mlp);

  std::vector<double> theta = flatten_trainable(encoder, nullptr, part);
  const std::size_t enc_n = theta.size();
  std::vector<double> mtheta, g, mg, enc_theta;
  detail::policy_flatten(mlp, mtheta);
  theta.insert(theta.end(), mtheta.begin(), mtheta.end());
  AdamState opt;
  opt.cfg = cfg.adam;

  Rng sampler(derive_seed(cfg.seed, 0x62630000));
  Rng augrng(derive_seed(cfg.seed, 0x61756700));
  Rng droprng(derive_seed(cfg.seed, 0x64726f70));
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  sampler.shuffle(order);
  std::size_t pos = 0;

  std::ofstream trace(out_dir / "bc_trace.jsonl", std::ios::trunc);
  if (!trace) throw std::runtime_error("cannot write bc trace in " + out_dir.string());

  BcResult res;
  const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
  for (int step = 1; step <= cfg.steps; ++step) {
    grads.zero();
    egs.zero();
    double batch_nll = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (pos == order.size()) {
        sampler.shuffle(order);
        pos = 0;
      }
      std::size_t i = order[pos++];
      Image obs = data.image(i);
      if (cfg.augment) obs = augment_image(obs, cfg, augrng);
      EncoderCache ecache;
      Eigen::VectorXd z = encoder_forward(encoder, obs, &ecache);
      PolicyCache cache;
      Eigen::VectorXd out =
          policy_forward(mlp, policy_input(z, data.state(i)), cfg, &droprng, &cache);
      const SimAction& act = data.action(i);
      Eigen::Vector3d a(act.dx, act.dy, act.g);
      Eigen::VectorXd dout;
      batch_nll += policy_nll(out, a, cfg, &dout) * inv_b;
      dout *= inv_b;
      Eigen::VectorXd dx = policy_backward(mlp, cache, dout, grads);
      Eigen::VectorXd dz = dx.head(encoder.cfg.embed_dim);
      encoder_backward(encoder, ecache, dz, part, egs);
    }
    if (step == 1) res.initial_nll = batch_nll;
    res.final_nll = batch_nll;
    res.steps_done = step;

    bool finite = std::isfinite(batch_nll);
    if (finite) {
      g = flatten_grads(egs);
      PolicyMlp gm;
      gm.w1 = grads.w1;
      gm.b1 = grads.b1;
      gm.w2 = grads.w2;
      gm.b2 = grads.b2;
      gm.w3 = grads.w3;
      gm.b3 = grads.b3;
      detail::policy_flatten(gm, mg);
      g.insert(g.end(), mg.begin(), mg.end());
      for (double v : g)
        if (!std::isfinite(v)) {
          finite = false;
          break;
        }
    }
    if (!finite) {
      res.aborted = true;
      res.checkpoint = out_dir / "policy_abort.hrpt";
      save_policy_checkpoint(res.checkpoint, encoder, mlp, cfg,
                             {{"stage", "abort"}, {"step", step}});
      trace << json({{"step", step}, {"aborted", true}}).dump() << "\n";
      break;
    }

    adam_step(theta, g, opt);
    enc_theta.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(enc_n));
    unflatten_trainable(encoder, nullptr, part, enc_theta);
    mtheta.assign(theta.begin() + static_cast<std::ptrdiff_t>(enc_n), theta.end());
    detail::policy_unflatten(mlp, mtheta);

    if (step == 1 || step == cfg.steps || step % cfg.log_every == 0)
      trace << json({{"step", step}, {"nll", batch_nll}}).dump() << "\n";
  }
  trace.close();

  if (!res.aborted) {
    res.checkpoint = out_dir / "policy.hrpt";
    save_policy_checkpoint(res.checkpoint, encoder, mlp, cfg,
                           {{"stage", "final"},
                            {"step", res.steps_done},
                            {"final_nll", res.final_nll}});
  }

  RunInfo info;
  info.kind = "bc_train";
  info.command = command;
  info.config = cfg.to_json();
  info.seed = cfg.seed;
  json manifest = manifest_base(info);
  manifest["artifacts"] = {{"policy", res.aborted ? "policy_abort.hrpt" : "policy.hrpt"},
                           {"trace", "bc_trace.jsonl"}};
  manifest["dataset_size"] = data.size();
  manifest["result"] = {{"initial_nll", res.initial_nll},
                        {"final_nll", res.final_nll},
                        {"steps_done", res.steps_done},
                        {"aborted", res.aborted}};
  write_manifest(out_dir, manifest);
  return res;
}

}  // namespace hrp
