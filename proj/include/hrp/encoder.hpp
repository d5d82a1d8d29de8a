// File: encoder.hpp
// Description: compact pre-LN patch transformer with hand-written forward and
// backward passes, a name-based trainable partition, and affordance heads.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "hrp/common.hpp"
#include "hrp/container.hpp"

namespace hrp {

struct EncoderConfig {
  int image_size = 64;
  int patch_size = 8;
  int embed_dim = 64;
  int depth = 4;
  int heads = 4;
  double mlp_ratio = 4.0;
  double ln_eps = 1e-5;

  int patches_per_side() const { return image_size / patch_size; }
  int n_patches() const { return patches_per_side() * patches_per_side(); }
  int tokens() const { return n_patches() + 1; }  // class token first
  int patch_dim() const { return patch_size * patch_size * 3; }
  int head_dim() const { return embed_dim / heads; }
  int mlp_hidden() const { return static_cast<int>(embed_dim * mlp_ratio); }

  void validate() const {
    if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
      throw std::invalid_argument("encoder: image_size must be a positive multiple of patch_size");
    if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0)
      throw std::invalid_argument("encoder: embed_dim must be a positive multiple of heads");
    if (depth <= 0) throw std::invalid_argument("encoder: depth must be positive");
    if (!(mlp_ratio > 0.0)) throw std::invalid_argument("encoder: mlp_ratio must be positive");
    if (!(ln_eps > 0.0)) throw std::invalid_argument("encoder: ln_eps must be positive");
  }

  nlohmann::json to_json() const {
    return {{"image_size", image_size}, {"patch_size", patch_size}, {"embed_dim", embed_dim},
            {"depth", depth},           {"heads", heads},           {"mlp_ratio", mlp_ratio},
            {"ln_eps", ln_eps}};
  }

  static EncoderConfig from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.image_size = j.value("image_size", c.image_size);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.depth = j.value("depth", c.depth);
    c.heads = j.value("heads", c.heads);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.ln_eps = j.value("ln_eps", c.ln_eps);
    c.validate();
    return c;
  }
};

struct LayerNormParams {
  Eigen::VectorXd gamma;
  Eigen::VectorXd beta;
};

struct BlockParams {
  LayerNormParams ln1, ln2;
  Eigen::MatrixXd wq, wk, wv, wo;  // [D, D], used as x * W
  Eigen::VectorXd bq, bv, bo;  // no key bias: softmax is invariant to row shifts
  Eigen::MatrixXd mlp_w1;  // [D, H]
  Eigen::VectorXd mlp_b1;
  Eigen::MatrixXd mlp_w2;  // [H, D]
  Eigen::VectorXd mlp_b2;
};

struct EncoderParams {
  EncoderConfig cfg;
  Eigen::MatrixXd patch_w;  // [patch_dim, D]
  Eigen::VectorXd patch_b;
  Eigen::MatrixXd pos;  // [tokens, D]
  Eigen::VectorXd cls;
  std::vector<BlockParams> blocks;
  LayerNormParams ln_final;
};

// Two-layer head with gelu, out = gelu(z w1 + b1) w2 + b2.
struct MlpHead {
  Eigen::MatrixXd w1;  // [D, D]
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // [D, out]
  Eigen::VectorXd b2;
};

struct AffordanceHeads {
  int gmm_modes = 5;
  MlpHead contact;  // 2 * gmm_modes outputs
  MlpHead hand;     // 2
  MlpHead object;   // 4
};

enum class PartitionMode { LayerNormOnly, Full, Frozen };

inline std::string to_string(PartitionMode m) {
  switch (m) {
    case PartitionMode::LayerNormOnly: return "layernorm_only";
    case PartitionMode::Full: return "full";
    case PartitionMode::Frozen: return "frozen";
  }
  throw std::logic_error("bad PartitionMode");
}

inline PartitionMode partition_mode_from(const std::string& s) {
  if (s == "layernorm_only") return PartitionMode::LayerNormOnly;
  if (s == "full") return PartitionMode::Full;
  if (s == "frozen") return PartitionMode::Frozen;
  throw std::runtime_error("unknown partition mode '" + s + "'");
}

// Decides trainability from the tensor name; head tensors are always trainable
// except under Frozen.
struct ParamPartition {
  PartitionMode mode = PartitionMode::LayerNormOnly;

  bool trainable(const std::string& name) const {
    switch (mode) {
      case PartitionMode::Frozen:
        return false;
      case PartitionMode::Full:
        return true;
      case PartitionMode::LayerNormOnly:
        return name.find(".ln1.") != std::string::npos || name.find(".ln2.") != std::string::npos ||
               name.rfind("ln_final.", 0) == 0 || name.rfind("head_", 0) == 0;
    }
    return false;
  }
};

struct TensorRef {
  std::string name;
  double* data;
  std::size_t size;
  std::vector<std::uint64_t> dims;  // payload is Eigen column-major
};

namespace detail {

inline void push_mat(std::vector<TensorRef>& v, const std::string& name, Eigen::MatrixXd& m) {
  v.push_back({name, m.data(), static_cast<std::size_t>(m.size()),
               {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())}});
}

inline void push_vec(std::vector<TensorRef>& v, const std::string& name, Eigen::VectorXd& x) {
  v.push_back({name, x.data(), static_cast<std::size_t>(x.size()), {static_cast<std::uint64_t>(x.size())}});
}

}  // namespace detail

inline std::vector<TensorRef> tensor_refs(EncoderParams& p) {
  std::vector<TensorRef> v;
  detail::push_mat(v, "patch_embed.w", p.patch_w);
  detail::push_vec(v, "patch_embed.b", p.patch_b);
  detail::push_mat(v, "pos_embed", p.pos);
  detail::push_vec(v, "cls_token", p.cls);
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    std::string pre = "blocks." + std::to_string(b);
    BlockParams& blk = p.blocks[b];
    detail::push_vec(v, pre + ".ln1.gamma", blk.ln1.gamma);
    detail::push_vec(v, pre + ".ln1.beta", blk.ln1.beta);
    detail::push_mat(v, pre + ".attn.wq", blk.wq);
    detail::push_vec(v, pre + ".attn.bq", blk.bq);
    detail::push_mat(v, pre + ".attn.wk", blk.wk);
    detail::push_mat(v, pre + ".attn.wv", blk.wv);
    detail::push_vec(v, pre + ".attn.bv", blk.bv);
    detail::push_mat(v, pre + ".attn.wo", blk.wo);
    detail::push_vec(v, pre + ".attn.bo", blk.bo);
    detail::push_vec(v, pre + ".ln2.gamma", blk.ln2.gamma);
    detail::push_vec(v, pre + ".ln2.beta", blk.ln2.beta);
    detail::push_mat(v, pre + ".mlp.w1", blk.mlp_w1);
    detail::push_vec(v, pre + ".mlp.b1", blk.mlp_b1);
    detail::push_mat(v, pre + ".mlp.w2", blk.mlp_w2);
    detail::push_vec(v, pre + ".mlp.b2", blk.mlp_b2);
  }
  detail::push_vec(v, "ln_final.gamma", p.ln_final.gamma);
  detail::push_vec(v, "ln_final.beta", p.ln_final.beta);
  return v;
}

inline std::vector<TensorRef> tensor_refs(AffordanceHeads& h) {
  std::vector<TensorRef> v;
  auto head = [&](const std::string& pre, MlpHead& m) {
    detail::push_mat(v, pre + ".w1", m.w1);
    detail::push_vec(v, pre + ".b1", m.b1);
    detail::push_mat(v, pre + ".w2", m.w2);
    detail::push_vec(v, pre + ".b2", m.b2);
  };
  head("head_contact", h.contact);
  head("head_hand", h.hand);
  head("head_object", h.object);
  return v;
}

inline std::size_t encoder_param_count(const EncoderParams& p) {
  std::size_t n = 0;
  for (const auto& r : tensor_refs(const_cast<EncoderParams&>(p))) n += r.size;
  return n;
}

// Encoder-side trainable parameter count; heads are accounted separately.
inline std::size_t count_trainable(const EncoderParams& p, const ParamPartition& part) {
  std::size_t n = 0;
  for (const auto& r : tensor_refs(const_cast<EncoderParams&>(p)))
    if (part.trainable(r.name)) n += r.size;
  return n;
}

// Gradient storage existing only for trainable tensors.
struct GradSet {
  std::vector<std::string> names;
  std::vector<std::vector<double>> data;
  std::unordered_map<std::string, std::size_t> index;

  double* find(const std::string& name) {
    auto it = index.find(name);
    return it == index.end() ? nullptr : data[it->second].data();
  }

  void zero() {
    for (auto& v : data) std::fill(v.begin(), v.end(), 0.0);
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& v : data) n += v.size();
    return n;
  }
};

inline GradSet make_grad_set(EncoderParams& p, AffordanceHeads* heads, const ParamPartition& part) {
  GradSet g;
  auto add = [&](const TensorRef& r) {
    if (!part.trainable(r.name)) return;
    g.index[r.name] = g.names.size();
    g.names.push_back(r.name);
    g.data.emplace_back(r.size, 0.0);
  };
  for (const auto& r : tensor_refs(p)) add(r);
  if (heads)
    for (const auto& r : tensor_refs(*heads)) add(r);
  return g;
}

inline std::vector<double> flatten_trainable(EncoderParams& p, AffordanceHeads* heads,
                                             const ParamPartition& part) {
  std::vector<double> out;
  auto add = [&](const TensorRef& r) {
    if (part.trainable(r.name)) out.insert(out.end(), r.data, r.data + r.size);
  };
  for (const auto& r : tensor_refs(p)) add(r);
  if (heads)
    for (const auto& r : tensor_refs(*heads)) add(r);
  return out;
}

inline void unflatten_trainable(EncoderParams& p, AffordanceHeads* heads, const ParamPartition& part,
                                const std::vector<double>& flat) {
  std::size_t at = 0;
  auto take = [&](const TensorRef& r) {
    if (!part.trainable(r.name)) return;
    if (at + r.size > flat.size()) throw std::invalid_argument("unflatten_trainable: buffer too small");
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(at),
              flat.begin() + static_cast<std::ptrdiff_t>(at + r.size), r.data);
    at += r.size;
  };
  for (const auto& r : tensor_refs(p)) take(r);
  if (heads)
    for (const auto& r : tensor_refs(*heads)) take(r);
  if (at != flat.size()) throw std::invalid_argument("unflatten_trainable: buffer size mismatch");
}

inline std::vector<double> flatten_grads(const GradSet& g) {
  std::vector<double> out;
  for (const auto& v : g.data) out.insert(out.end(), v.begin(), v.end());
  return out;
}

namespace detail {

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_grad(double x) {
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
}

// Row-wise layer norm. Caches xhat and 1/std per row.
inline void layer_norm_rows(const Eigen::MatrixXd& x, const LayerNormParams& ln, double eps,
                            Eigen::MatrixXd& out, Eigen::MatrixXd& xhat, Eigen::VectorXd& inv_std) {
  const Eigen::Index m = x.rows(), d = x.cols();
  out.resize(m, d);
  xhat.resize(m, d);
  inv_std.resize(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    double mean = x.row(r).mean();
    double var = (x.row(r).array() - mean).square().mean();
    double inv = 1.0 / std::sqrt(var + eps);
    inv_std(r) = inv;
    xhat.row(r) = (x.row(r).array() - mean) * inv;
    out.row(r) = xhat.row(r).array() * ln.gamma.transpose().array() + ln.beta.transpose().array();
  }
}

// dx = inv_std * (a - mean(a) - xhat * mean(a .* xhat)) with a = dy .* gamma
inline void layer_norm_backward_rows(const Eigen::MatrixXd& dy, const Eigen::MatrixXd& xhat,
                                     const Eigen::VectorXd& inv_std, const LayerNormParams& ln,
                                     Eigen::MatrixXd& dx, double* dgamma, double* dbeta) {
  const Eigen::Index m = dy.rows(), d = dy.cols();
  dx.resize(m, d);
  for (Eigen::Index r = 0; r < m; ++r) {
    Eigen::ArrayXd a = dy.row(r).transpose().array() * ln.gamma.array();
    double ma = a.mean();
    double max = (a * xhat.row(r).transpose().array()).mean();
    dx.row(r) = (inv_std(r) * (a - ma - xhat.row(r).transpose().array() * max)).transpose();
    if (dgamma)
      for (Eigen::Index c = 0; c < d; ++c) dgamma[c] += dy(r, c) * xhat(r, c);
    if (dbeta)
      for (Eigen::Index c = 0; c < d; ++c) dbeta[c] += dy(r, c);
  }
}

}  // namespace detail

struct BlockCache {
  Eigen::MatrixXd x_in;
  Eigen::MatrixXd ln1_out, ln1_xhat;
  Eigen::VectorXd ln1_inv;
  Eigen::MatrixXd q, k, v;                // [M, D]
  std::vector<Eigen::MatrixXd> attn;      // per head [M, M], post-softmax
  Eigen::MatrixXd attn_concat;            // [M, D]
  Eigen::MatrixXd x_mid;
  Eigen::MatrixXd ln2_out, ln2_xhat;
  Eigen::VectorXd ln2_inv;
  Eigen::MatrixXd mlp_pre;  // [M, H]
};

struct EncoderCache {
  Eigen::MatrixXd patch_mat;  // [n_patches, patch_dim]
  std::vector<BlockCache> blocks;
  Eigen::MatrixXd x_final;      // output of the last block
  Eigen::RowVectorXd fin_xhat;  // class row statistics for the final norm
  double fin_inv = 0.0;
};

// Image -> patch matrix, rows ordered by patch grid (row-major), entries
// ordered channel-major then y then x within the patch.
inline Eigen::MatrixXd patchify(const EncoderConfig& cfg, const Image& img) {
  if (img.height != cfg.image_size || img.width != cfg.image_size)
    throw std::invalid_argument("encoder: image size mismatch");
  const int ps = cfg.patch_size, side = cfg.patches_per_side();
  Eigen::MatrixXd m(cfg.n_patches(), cfg.patch_dim());
  for (int py = 0; py < side; ++py)
    for (int px = 0; px < side; ++px) {
      int row = py * side + px;
      for (int c = 0; c < 3; ++c)
        for (int dy = 0; dy < ps; ++dy)
          for (int dx = 0; dx < ps; ++dx)
            m(row, c * ps * ps + dy * ps + dx) = img.at(px * ps + dx, py * ps + dy, c);
    }
  return m;
}

inline Eigen::VectorXd encoder_forward(const EncoderParams& p, const Image& img,
                                       EncoderCache* cache = nullptr) {
  const EncoderConfig& cfg = p.cfg;
  const int m = cfg.tokens(), d = cfg.embed_dim, nh = cfg.heads, dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Eigen::MatrixXd patches = patchify(cfg, img);
  Eigen::MatrixXd x(m, d);
  x.row(0) = p.cls.transpose();
  x.bottomRows(m - 1) = patches * p.patch_w;
  x.bottomRows(m - 1).rowwise() += p.patch_b.transpose();
  x += p.pos;

  EncoderCache local;
  EncoderCache& cc = cache ? *cache : local;
  if (cache) {
    cc.patch_mat = std::move(patches);
    cc.blocks.assign(static_cast<std::size_t>(cfg.depth), BlockCache{});
  }

  for (int b = 0; b < cfg.depth; ++b) {
    const BlockParams& blk = p.blocks[static_cast<std::size_t>(b)];
    BlockCache scratch;
    BlockCache& bc = cache ? cc.blocks[static_cast<std::size_t>(b)] : scratch;
    bc.x_in = x;

    detail::layer_norm_rows(bc.x_in, blk.ln1, cfg.ln_eps, bc.ln1_out, bc.ln1_xhat, bc.ln1_inv);
    bc.q = bc.ln1_out * blk.wq;
    bc.q.rowwise() += blk.bq.transpose();
    bc.k = bc.ln1_out * blk.wk;
    bc.v = bc.ln1_out * blk.wv;
    bc.v.rowwise() += blk.bv.transpose();

    bc.attn.assign(static_cast<std::size_t>(nh), Eigen::MatrixXd());
    bc.attn_concat.resize(m, d);
    for (int h = 0; h < nh; ++h) {
      Eigen::MatrixXd s = scale * (bc.q.middleCols(h * dh, dh) * bc.k.middleCols(h * dh, dh).transpose());
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        double mx = s.row(r).maxCoeff();
        Eigen::ArrayXd e = (s.row(r).array() - mx).exp();
        s.row(r) = (e / e.sum()).transpose();
      }
      bc.attn[static_cast<std::size_t>(h)] = s;
      bc.attn_concat.middleCols(h * dh, dh) = s * bc.v.middleCols(h * dh, dh);
    }

    bc.x_mid = bc.x_in + bc.attn_concat * blk.wo;
    bc.x_mid.rowwise() += blk.bo.transpose();

    detail::layer_norm_rows(bc.x_mid, blk.ln2, cfg.ln_eps, bc.ln2_out, bc.ln2_xhat, bc.ln2_inv);
    bc.mlp_pre = bc.ln2_out * blk.mlp_w1;
    bc.mlp_pre.rowwise() += blk.mlp_b1.transpose();
    Eigen::MatrixXd act = bc.mlp_pre.unaryExpr([](double u) { return detail::gelu(u); });
    x = bc.x_mid + act * blk.mlp_w2;
    x.rowwise() += blk.mlp_b2.transpose();
  }

  // final layer norm on the class row only; other rows are unused downstream
  double mean = x.row(0).mean();
  double var = (x.row(0).array() - mean).square().mean();
  double inv = 1.0 / std::sqrt(var + cfg.ln_eps);
  Eigen::RowVectorXd xhat = (x.row(0).array() - mean) * inv;
  Eigen::VectorXd z =
      (xhat.transpose().array() * p.ln_final.gamma.array() + p.ln_final.beta.array()).matrix();
  if (cache) {
    cc.x_final = std::move(x);
    cc.fin_xhat = xhat;
    cc.fin_inv = inv;
  }
  return z;
}

// Accumulates parameter gradients for the trainable set into gs and optionally
// produces the input-image gradient.
inline void encoder_backward(const EncoderParams& p, const EncoderCache& cc,
                             const Eigen::VectorXd& dz, const ParamPartition& part, GradSet& gs,
                             Image* d_image = nullptr) {
  const EncoderConfig& cfg = p.cfg;
  const int m = cfg.tokens(), d = cfg.embed_dim, nh = cfg.heads, dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  (void)part;

  // final norm, class row only
  Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(m, d);
  {
    Eigen::ArrayXd a = dz.array() * p.ln_final.gamma.array();
    double ma = a.mean();
    double max = (a * cc.fin_xhat.transpose().array()).mean();
    dx.row(0) = (cc.fin_inv * (a - ma - cc.fin_xhat.transpose().array() * max)).transpose();
    if (double* dg = gs.find("ln_final.gamma"))
      for (int c = 0; c < d; ++c) dg[c] += dz(c) * cc.fin_xhat(c);
    if (double* db = gs.find("ln_final.beta"))
      for (int c = 0; c < d; ++c) db[c] += dz(c);
  }

  for (int b = cfg.depth - 1; b >= 0; --b) {
    const BlockParams& blk = p.blocks[static_cast<std::size_t>(b)];
    const BlockCache& bc = cc.blocks[static_cast<std::size_t>(b)];
    const std::string pre = "blocks." + std::to_string(b);

    // mlp half: x_out = x_mid + gelu(ln2_out * w1 + b1) * w2 + b2
    Eigen::MatrixXd act = bc.mlp_pre.unaryExpr([](double u) { return detail::gelu(u); });
    Eigen::MatrixXd d_act = dx * blk.mlp_w2.transpose();
    if (double* g = gs.find(pre + ".mlp.w2")) {
      Eigen::Map<Eigen::MatrixXd> gm(g, blk.mlp_w2.rows(), blk.mlp_w2.cols());
      gm.noalias() += act.transpose() * dx;
    }
    if (double* g = gs.find(pre + ".mlp.b2")) {
      Eigen::Map<Eigen::VectorXd> gv(g, blk.mlp_b2.size());
      gv += dx.colwise().sum().transpose();
    }
    Eigen::MatrixXd d_pre =
        d_act.array() * bc.mlp_pre.unaryExpr([](double u) { return detail::gelu_grad(u); }).array();
    if (double* g = gs.find(pre + ".mlp.w1")) {
      Eigen::Map<Eigen::MatrixXd> gm(g, blk.mlp_w1.rows(), blk.mlp_w1.cols());
      gm.noalias() += bc.ln2_out.transpose() * d_pre;
    }
    if (double* g = gs.find(pre + ".mlp.b1")) {
      Eigen::Map<Eigen::VectorXd> gv(g, blk.mlp_b1.size());
      gv += d_pre.colwise().sum().transpose();
    }
    Eigen::MatrixXd d_ln2_out = d_pre * blk.mlp_w1.transpose();
    Eigen::MatrixXd d_x_mid;
    detail::layer_norm_backward_rows(d_ln2_out, bc.ln2_xhat, bc.ln2_inv, blk.ln2, d_x_mid,
                                     gs.find(pre + ".ln2.gamma"), gs.find(pre + ".ln2.beta"));
    d_x_mid += dx;  // residual

    // attention half: x_mid = x_in + attn_concat * wo + bo
    Eigen::MatrixXd d_concat = d_x_mid * blk.wo.transpose();
    if (double* g = gs.find(pre + ".attn.wo")) {
      Eigen::Map<Eigen::MatrixXd> gm(g, blk.wo.rows(), blk.wo.cols());
      gm.noalias() += bc.attn_concat.transpose() * d_x_mid;
    }
    if (double* g = gs.find(pre + ".attn.bo")) {
      Eigen::Map<Eigen::VectorXd> gv(g, blk.bo.size());
      gv += d_x_mid.colwise().sum().transpose();
    }

    Eigen::MatrixXd dq(m, d), dk(m, d), dv(m, d);
    for (int h = 0; h < nh; ++h) {
      const Eigen::MatrixXd& pmat = bc.attn[static_cast<std::size_t>(h)];
      Eigen::MatrixXd d_oh = d_concat.middleCols(h * dh, dh);
      Eigen::MatrixXd d_p = d_oh * bc.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh).noalias() = pmat.transpose() * d_oh;
      // softmax rows: ds = p .* (dp - rowsum(dp .* p))
      Eigen::MatrixXd ds(m, m);
      for (Eigen::Index r = 0; r < m; ++r) {
        double dot = (d_p.row(r).array() * pmat.row(r).array()).sum();
        ds.row(r) = pmat.row(r).array() * (d_p.row(r).array() - dot);
      }
      dq.middleCols(h * dh, dh).noalias() = scale * (ds * bc.k.middleCols(h * dh, dh));
      dk.middleCols(h * dh, dh).noalias() = scale * (ds.transpose() * bc.q.middleCols(h * dh, dh));
    }

    Eigen::MatrixXd d_ln1_out = dq * blk.wq.transpose();
    d_ln1_out.noalias() += dk * blk.wk.transpose();
    d_ln1_out.noalias() += dv * blk.wv.transpose();
    auto weight_grad = [&](const std::string& nm, const Eigen::MatrixXd& dmat, bool bias) {
      if (double* g = gs.find(pre + ".attn.w" + nm)) {
        Eigen::Map<Eigen::MatrixXd> gm(g, d, d);
        gm.noalias() += bc.ln1_out.transpose() * dmat;
      }
      if (!bias) return;
      if (double* g = gs.find(pre + ".attn.b" + nm)) {
        Eigen::Map<Eigen::VectorXd> gv(g, d);
        gv += dmat.colwise().sum().transpose();
      }
    };
    weight_grad("q", dq, true);
    weight_grad("k", dk, false);
    weight_grad("v", dv, true);

    Eigen::MatrixXd d_x_in;
    detail::layer_norm_backward_rows(d_ln1_out, bc.ln1_xhat, bc.ln1_inv, blk.ln1, d_x_in,
                                     gs.find(pre + ".ln1.gamma"), gs.find(pre + ".ln1.beta"));
    dx = d_x_mid + d_x_in;
  }

  // embedding layer
  if (double* g = gs.find("pos_embed")) {
    Eigen::Map<Eigen::MatrixXd> gm(g, m, d);
    gm += dx;
  }
  if (double* g = gs.find("cls_token")) {
    Eigen::Map<Eigen::VectorXd> gv(g, d);
    gv += dx.row(0).transpose();
  }
  if (double* g = gs.find("patch_embed.w")) {
    Eigen::Map<Eigen::MatrixXd> gm(g, cfg.patch_dim(), d);
    gm.noalias() += cc.patch_mat.transpose() * dx.bottomRows(m - 1);
  }
  if (double* g = gs.find("patch_embed.b")) {
    Eigen::Map<Eigen::VectorXd> gv(g, d);
    gv += dx.bottomRows(m - 1).colwise().sum().transpose();
  }
  if (d_image) {
    *d_image = Image(cfg.image_size, cfg.image_size);
    Eigen::MatrixXd d_patches = dx.bottomRows(m - 1) * p.patch_w.transpose();
    const int ps = cfg.patch_size, side = cfg.patches_per_side();
    for (int py = 0; py < side; ++py)
      for (int px = 0; px < side; ++px) {
        int row = py * side + px;
        for (int c = 0; c < 3; ++c)
          for (int dyy = 0; dyy < ps; ++dyy)
            for (int dxx = 0; dxx < ps; ++dxx)
              d_image->at(px * ps + dxx, py * ps + dyy, c) = d_patches(row, c * ps * ps + dyy * ps + dxx);
      }
  }
}

struct HeadsCache {
  Eigen::VectorXd z;
  Eigen::VectorXd u_c, u_h, u_b;  // pre-activations
};

struct AffordancePred {
  Eigen::VectorXd contact;  // 2k
  Eigen::VectorXd hand;     // 2
  Eigen::VectorXd object;   // 4
};

namespace detail {

inline Eigen::VectorXd head_forward(const MlpHead& h, const Eigen::VectorXd& z, Eigen::VectorXd& u) {
  u = h.w1.transpose() * z + h.b1;
  Eigen::VectorXd a = u.unaryExpr([](double x) { return gelu(x); });
  return h.w2.transpose() * a + h.b2;
}

inline Eigen::VectorXd head_backward(const MlpHead& h, const Eigen::VectorXd& z,
                                     const Eigen::VectorXd& u, const Eigen::VectorXd& dout,
                                     const std::string& pre, GradSet& gs) {
  Eigen::VectorXd a = u.unaryExpr([](double x) { return gelu(x); });
  if (double* g = gs.find(pre + ".w2")) {
    Eigen::Map<Eigen::MatrixXd> gm(g, h.w2.rows(), h.w2.cols());
    gm.noalias() += a * dout.transpose();
  }
  if (double* g = gs.find(pre + ".b2")) {
    Eigen::Map<Eigen::VectorXd> gv(g, h.b2.size());
    gv += dout;
  }
  Eigen::VectorXd da = h.w2 * dout;
  Eigen::VectorXd du = da.array() * u.unaryExpr([](double x) { return gelu_grad(x); }).array();
  if (double* g = gs.find(pre + ".w1")) {
    Eigen::Map<Eigen::MatrixXd> gm(g, h.w1.rows(), h.w1.cols());
    gm.noalias() += z * du.transpose();
  }
  if (double* g = gs.find(pre + ".b1")) {
    Eigen::Map<Eigen::VectorXd> gv(g, h.b1.size());
    gv += du;
  }
  return h.w1 * du;
}

}  // namespace detail

inline AffordancePred heads_forward(const AffordanceHeads& h, const Eigen::VectorXd& z,
                                    HeadsCache* cache = nullptr) {
  HeadsCache local;
  HeadsCache& c = cache ? *cache : local;
  c.z = z;
  AffordancePred out;
  out.contact = detail::head_forward(h.contact, z, c.u_c);
  out.hand = detail::head_forward(h.hand, z, c.u_h);
  out.object = detail::head_forward(h.object, z, c.u_b);
  return out;
}

inline Eigen::VectorXd heads_backward(const AffordanceHeads& h, const HeadsCache& c,
                                      const Eigen::VectorXd& d_contact, const Eigen::VectorXd& d_hand,
                                      const Eigen::VectorXd& d_object, GradSet& gs) {
  Eigen::VectorXd dz = detail::head_backward(h.contact, c.z, c.u_c, d_contact, "head_contact", gs);
  dz += detail::head_backward(h.hand, c.z, c.u_h, d_hand, "head_hand", gs);
  dz += detail::head_backward(h.object, c.z, c.u_b, d_object, "head_object", gs);
  return dz;
}

inline EncoderParams init_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  EncoderParams p;
  p.cfg = cfg;
  Rng rng(derive_seed(seed, 0x656e63));
  const int d = cfg.embed_dim, pd = cfg.patch_dim(), hm = cfg.mlp_hidden();
  auto xavier = [&](Eigen::MatrixXd& w, int fan_in, int fan_out) {
    double std = std::sqrt(2.0 / (fan_in + fan_out));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal(0.0, std);
  };
  p.patch_w.resize(pd, d);
  xavier(p.patch_w, pd, d);
  p.patch_b = Eigen::VectorXd::Zero(d);
  p.pos.resize(cfg.tokens(), d);
  for (Eigen::Index i = 0; i < p.pos.size(); ++i) p.pos.data()[i] = rng.normal(0.0, 0.02);
  p.cls.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) p.cls(i) = rng.normal(0.0, 0.02);
  p.blocks.resize(static_cast<std::size_t>(cfg.depth));
  for (auto& blk : p.blocks) {
    blk.ln1.gamma = Eigen::VectorXd::Ones(d);
    blk.ln1.beta = Eigen::VectorXd::Zero(d);
    blk.ln2.gamma = Eigen::VectorXd::Ones(d);
    blk.ln2.beta = Eigen::VectorXd::Zero(d);
    blk.wq.resize(d, d);
    xavier(blk.wq, d, d);
    blk.wk.resize(d, d);
    xavier(blk.wk, d, d);
    blk.wv.resize(d, d);
    xavier(blk.wv, d, d);
    blk.wo.resize(d, d);
    xavier(blk.wo, d, d);
    blk.bq = Eigen::VectorXd::Zero(d);
    blk.bv = Eigen::VectorXd::Zero(d);
    blk.bo = Eigen::VectorXd::Zero(d);
    blk.mlp_w1.resize(d, hm);
    xavier(blk.mlp_w1, d, hm);
    blk.mlp_b1 = Eigen::VectorXd::Zero(hm);
    blk.mlp_w2.resize(hm, d);
    xavier(blk.mlp_w2, hm, d);
    blk.mlp_b2 = Eigen::VectorXd::Zero(d);
  }
  p.ln_final.gamma = Eigen::VectorXd::Ones(d);
  p.ln_final.beta = Eigen::VectorXd::Zero(d);
  return p;
}

inline AffordanceHeads init_heads(const EncoderConfig& cfg, int gmm_modes, std::uint64_t seed) {
  if (gmm_modes < 1) throw std::invalid_argument("init_heads: gmm_modes must be >= 1");
  AffordanceHeads h;
  h.gmm_modes = gmm_modes;
  Rng rng(derive_seed(seed, 0x68656164));
  const int d = cfg.embed_dim;
  auto make = [&](MlpHead& m, int out) {
    double s1 = std::sqrt(2.0 / (d + d)), s2 = std::sqrt(2.0 / (d + out));
    m.w1.resize(d, d);
    for (Eigen::Index i = 0; i < m.w1.size(); ++i) m.w1.data()[i] = rng.normal(0.0, s1);
    m.b1 = Eigen::VectorXd::Zero(d);
    m.w2.resize(d, out);
    for (Eigen::Index i = 0; i < m.w2.size(); ++i) m.w2.data()[i] = rng.normal(0.0, s2);
    m.b2 = Eigen::VectorXd::Zero(out);
  };
  make(h.contact, 2 * gmm_modes);
  make(h.hand, 2);
  make(h.object, 4);
  return h;
}

// Checkpoint IO. Tensor payloads are float32 in Eigen column-major order.
inline void save_encoder_checkpoint(const std::filesystem::path& path, const EncoderParams& p,
                                    const AffordanceHeads* heads,
                                    nlohmann::json extra_meta = nlohmann::json::object()) {
  Container c;
  auto add = [&](const TensorRef& r) {
    TensorEntry t;
    t.name = r.name;
    t.dims = r.dims;
    t.data.resize(r.size);
    for (std::size_t i = 0; i < r.size; ++i) t.data[i] = static_cast<float>(r.data[i]);
    c.tensors.push_back(std::move(t));
  };
  for (const auto& r : tensor_refs(const_cast<EncoderParams&>(p))) add(r);
  if (heads)
    for (const auto& r : tensor_refs(const_cast<AffordanceHeads&>(*heads))) add(r);
  c.meta = std::move(extra_meta);
  c.meta["kind"] = c.meta.value("kind", std::string("encoder"));
  c.meta["encoder_config"] = p.cfg.to_json();
  if (heads) c.meta["gmm_modes"] = heads->gmm_modes;
  write_container(path, c);
}

struct LoadedEncoder {
  EncoderParams params;
  std::optional<AffordanceHeads> heads;
  nlohmann::json meta;
};

inline LoadedEncoder load_encoder_checkpoint(const std::filesystem::path& path) {
  Container c = read_container(path);
  if (!c.meta.contains("encoder_config"))
    throw std::runtime_error("checkpoint missing encoder_config: " + path.string());
  LoadedEncoder out;
  EncoderConfig cfg = EncoderConfig::from_json(c.meta["encoder_config"]);
  out.meta = c.meta;

  // allocate shapes, then fill from entries by name
  out.params = init_encoder(cfg, 0);
  auto fill = [&](const TensorRef& r) {
    const TensorEntry* t = c.find(r.name);
    if (!t) throw std::runtime_error("checkpoint missing tensor '" + r.name + "' in " + path.string());
    if (t->elems() != r.size)
      throw std::runtime_error("checkpoint tensor '" + r.name + "' has wrong size in " + path.string());
    for (std::size_t i = 0; i < r.size; ++i) r.data[i] = static_cast<double>(t->data[i]);
  };
  for (const auto& r : tensor_refs(out.params)) fill(r);
  if (c.find("head_contact.w1")) {
    int k = c.meta.value("gmm_modes", 5);
    out.heads = init_heads(cfg, k, 0);
    for (const auto& r : tensor_refs(*out.heads)) fill(r);
  }
  return out;
}

}  // namespace hrp
