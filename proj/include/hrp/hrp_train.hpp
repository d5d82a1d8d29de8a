// File: hrp_train.hpp
// Description: encoder pretraining against mined affordance records. The
// loss is a masked sum of unsquared residual norms over the three heads;
// only the configured parameter partition receives updates.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "hrp/common.hpp"
#include "hrp/encoder.hpp"
#include "hrp/numerics.hpp"
#include "hrp/records.hpp"
#include "hrp/synthdata.hpp"

namespace hrp {

struct LossWeights {
  double contact = 0.005;
  double hand = 0.5;
  double object = 0.05;

  json to_json() const { return {{"contact", contact}, {"hand", hand}, {"object", object}}; }

  static LossWeights from_json(const json& j) {
    LossWeights w;
    w.contact = j.value("contact", w.contact);
    w.hand = j.value("hand", w.hand);
    w.object = j.value("object", w.object);
    return w;
  }
};

struct LossTerms {
  double contact = 0.0;
  double hand = 0.0;
  double object = 0.0;
  double total = 0.0;
};

namespace detail {

// weighted residual norm with its gradient wrt the prediction; the gradient
// at zero residual is the zero subgradient
inline double masked_norm_term(const Eigen::VectorXd& pred, const Eigen::VectorXd& label,
                               int mask, double weight, Eigen::VectorXd* grad) {
  if (grad) grad->setZero(pred.size());
  if (mask == 0) return 0.0;
  Eigen::VectorXd r = label - pred;
  double n = r.norm();
  if (grad && n > 0.0) *grad = weight * (pred - label) / n;
  return weight * n;
}

}  // namespace detail

// Loss for one record. `grad` (if given) receives d loss / d prediction.
inline double record_loss(const AffordancePred& pred, const AffordanceRecord& rec,
                          const LossWeights& w, LossTerms* terms = nullptr,
                          AffordancePred* grad = nullptr) {
  if (static_cast<std::size_t>(pred.contact.size()) != rec.contact.size())
    throw std::invalid_argument("record_loss: contact size mismatch");
  if (pred.hand.size() != 2 || pred.object.size() != 4)
    throw std::invalid_argument("record_loss: bad prediction shapes");
  Eigen::VectorXd lc = Eigen::Map<const Eigen::VectorXd>(rec.contact.data(),
                                                         static_cast<Eigen::Index>(rec.contact.size()));
  Eigen::VectorXd lh(2), lb(4);
  lh << rec.hand[0], rec.hand[1];
  lb << rec.object[0], rec.object[1], rec.object[2], rec.object[3];

  LossTerms t;
  t.contact = detail::masked_norm_term(pred.contact, lc, rec.m_c, w.contact,
                                       grad ? &grad->contact : nullptr);
  t.hand = detail::masked_norm_term(pred.hand, lh, rec.m_h, w.hand, grad ? &grad->hand : nullptr);
  t.object = detail::masked_norm_term(pred.object, lb, rec.m_b, w.object,
                                      grad ? &grad->object : nullptr);
  t.total = t.contact + t.hand + t.object;
  if (terms) *terms = t;
  return t.total;
}

// Training examples with frames fetched lazily from the per-clip containers.
class AffordanceDataset {
 public:
  AffordanceDataset() = default;

  static AffordanceDataset load(const std::filesystem::path& mined_dir) {
    AffordanceDataset d;
    json manifest = read_manifest(mined_dir);
    if (!manifest.contains("clips")) throw std::runtime_error("mined manifest has no clips");
    for (const auto& entry : manifest["clips"]) {
      auto records = read_affordance_records(mined_dir / entry.at("records").get<std::string>());
      if (records.empty()) continue;
      d.clips_.emplace_back(entry.at("images").get<std::string>());
      for (auto& r : records)
        d.entries_.push_back({static_cast<int>(d.clips_.size()) - 1, -1, std::move(r)});
    }
    return d;
  }

  static AffordanceDataset in_memory(std::vector<Image> images,
                                     std::vector<AffordanceRecord> records) {
    if (images.size() != records.size())
      throw std::invalid_argument("in_memory dataset: images and records must pair up");
    AffordanceDataset d;
    d.images_ = std::move(images);
    for (std::size_t i = 0; i < records.size(); ++i)
      d.entries_.push_back({-1, static_cast<int>(i), std::move(records[i])});
    return d;
  }

  std::size_t size() const { return entries_.size(); }

  const AffordanceRecord& record(std::size_t i) const { return entries_.at(i).rec; }

  Image image(std::size_t i) const {
    const Entry& e = entries_.at(i);
    if (e.clip < 0) return images_.at(static_cast<std::size_t>(e.mem));
    return read_clip_frame(clips_.at(static_cast<std::size_t>(e.clip)), e.rec.frame_index);
  }

 private:
  struct Entry {
    int clip;
    int mem;
    AffordanceRecord rec;
  };
  std::vector<ContainerIndex> clips_;
  std::vector<Image> images_;
  std::vector<Entry> entries_;
};

struct HrpTrainConfig {
  EncoderConfig encoder;
  int gmm_modes = 5;
  PartitionMode partition = PartitionMode::LayerNormOnly;
  AdamConfig adam;  // lr 1e-4, no weight decay
  int batch_size = 32;
  int steps = 2000;
  int log_every = 50;
  LossWeights weights;
  std::uint64_t seed = 0;

  void validate() const {
    encoder.validate();
    if (gmm_modes < 1) throw std::invalid_argument("train: gmm_modes must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (steps < 1) throw std::invalid_argument("train: steps must be >= 1");
    if (log_every < 1) throw std::invalid_argument("train: log_every must be >= 1");
  }

  json to_json() const {
    return {{"encoder", encoder.to_json()},
            {"gmm_modes", gmm_modes},
            {"partition", to_string(partition)},
            {"lr", adam.lr},
            {"weight_decay", adam.weight_decay},
            {"batch_size", batch_size},
            {"steps", steps},
            {"log_every", log_every},
            {"loss_weights", weights.to_json()},
            {"seed", seed}};
  }

  static HrpTrainConfig from_json(const json& j) {
    HrpTrainConfig c;
    if (j.contains("encoder")) c.encoder = EncoderConfig::from_json(j["encoder"]);
    c.gmm_modes = j.value("gmm_modes", c.gmm_modes);
    if (j.contains("partition")) c.partition = partition_mode_from(j["partition"].get<std::string>());
    c.adam.lr = j.value("lr", c.adam.lr);
    c.adam.weight_decay = j.value("weight_decay", c.adam.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.steps = j.value("steps", c.steps);
    c.log_every = j.value("log_every", c.log_every);
    if (j.contains("loss_weights")) c.weights = LossWeights::from_json(j["loss_weights"]);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }
};

struct HrpTrainResult {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int steps_done = 0;
  bool aborted = false;
  std::filesystem::path init_checkpoint;
  std::filesystem::path final_checkpoint;
};

// One optimization step over a batch of examples: forward, masked loss,
// backward into the gradient set. Returns the batch loss terms.
inline LossTerms hrp_train_step(const EncoderParams& params, const AffordanceHeads& heads,
                                const AffordanceDataset& data,
                                const std::vector<std::size_t>& batch, const LossWeights& w,
                                const ParamPartition& part, GradSet& gs) {
  gs.zero();
  LossTerms acc;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i : batch) {
    Image img = data.image(i);
    EncoderCache cache;
    Eigen::VectorXd z = encoder_forward(params, img, &cache);
    HeadsCache hc;
    AffordancePred pred = heads_forward(heads, z, &hc);
    LossTerms t;
    AffordancePred g;
    record_loss(pred, data.record(i), w, &t, &g);
    acc.contact += t.contact * inv_b;
    acc.hand += t.hand * inv_b;
    acc.object += t.object * inv_b;
    acc.total += t.total * inv_b;
    g.contact *= inv_b;
    g.hand *= inv_b;
    g.object *= inv_b;
    Eigen::VectorXd dz = heads_backward(heads, hc, g.contact, g.hand, g.object, gs);
    encoder_backward(params, cache, dz, part, gs);
  }
  return acc;
}

// Pretraining loop. Writes init.hrpt before the first step, final.hrpt after
// the last one (or abort.hrpt if the loss stops being finite), and a loss
// trace in JSONL form.
inline HrpTrainResult hrp_pretrain(const AffordanceDataset& data, const HrpTrainConfig& cfg,
                                   const std::filesystem::path& out_dir, const std::string& command,
                                   const EncoderParams* warm_params = nullptr,
                                   const AffordanceHeads* warm_heads = nullptr) {
  cfg.validate();
  if (data.size() == 0) throw std::invalid_argument("hrp_pretrain: empty dataset");
  {
    Image probe = data.image(0);
    if (probe.height != cfg.encoder.image_size || probe.width != cfg.encoder.image_size)
      throw std::invalid_argument("hrp_pretrain: image size does not match encoder config");
  }
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data.record(i).contact.size() != static_cast<std::size_t>(2 * cfg.gmm_modes))
      throw std::invalid_argument("hrp_pretrain: record contact size does not match gmm_modes");

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  EncoderParams params = warm_params ? *warm_params : init_encoder(cfg.encoder, cfg.seed);
  AffordanceHeads heads =
      warm_heads ? *warm_heads : init_heads(cfg.encoder, cfg.gmm_modes, cfg.seed);

  HrpTrainResult res;
  res.init_checkpoint = out_dir / "init.hrpt";
  save_encoder_checkpoint(res.init_checkpoint, params, &heads,
                          {{"kind", "hrp_checkpoint"},
                           {"stage", "init"},
                           {"step", 0},
                           {"partition", to_string(cfg.partition)}});

  ParamPartition part{cfg.partition};
  GradSet gs = make_grad_set(params, &heads, part);
  std::vector<double> theta = flatten_trainable(params, &heads, part);
  AdamState opt;
  opt.cfg = cfg.adam;

  Rng sampler(derive_seed(cfg.seed, 0x62617463));
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  sampler.shuffle(order);
  std::size_t pos = 0;

  std::ofstream trace(out_dir / "loss_trace.jsonl", std::ios::trunc);
  if (!trace) throw std::runtime_error("cannot write loss trace in " + out_dir.string());

  std::vector<std::size_t> batch(static_cast<std::size_t>(cfg.batch_size));
  for (int step = 1; step <= cfg.steps; ++step) {
    for (auto& b : batch) {
      if (pos == order.size()) {
        sampler.shuffle(order);
        pos = 0;
      }
      b = order[pos++];
    }
    LossTerms t = hrp_train_step(params, heads, data, batch, cfg.weights, part, gs);
    if (step == 1) res.initial_loss = t.total;
    res.final_loss = t.total;
    res.steps_done = step;

    bool finite = std::isfinite(t.total);
    std::vector<double> g;
    if (finite) {
      g = flatten_grads(gs);
      for (double v : g)
        if (!std::isfinite(v)) {
          finite = false;
          break;
        }
    }
    if (!finite) {
      res.aborted = true;
      res.final_checkpoint = out_dir / "abort.hrpt";
      save_encoder_checkpoint(res.final_checkpoint, params, &heads,
                              {{"kind", "hrp_checkpoint"},
                               {"stage", "abort"},
                               {"step", step},
                               {"partition", to_string(cfg.partition)}});
      trace << json({{"step", step}, {"aborted", true}}).dump() << "\n";
      break;
    }

    adam_step(theta, g, opt);
    unflatten_trainable(params, &heads, part, theta);

    if (step == 1 || step == cfg.steps || step % cfg.log_every == 0)
      trace << json({{"step", step},
                     {"total", t.total},
                     {"contact", t.contact},
                     {"hand", t.hand},
                     {"object", t.object}})
                   .dump()
            << "\n";
  }
  trace.close();

  if (!res.aborted) {
    res.final_checkpoint = out_dir / "final.hrpt";
    save_encoder_checkpoint(res.final_checkpoint, params, &heads,
                            {{"kind", "hrp_checkpoint"},
                             {"stage", "final"},
                             {"step", res.steps_done},
                             {"partition", to_string(cfg.partition)},
                             {"final_loss", res.final_loss}});
  }

  RunInfo info;
  info.kind = "hrp_pretrain";
  info.command = command;
  info.config = cfg.to_json();
  info.seed = cfg.seed;
  json manifest = manifest_base(info);
  manifest["artifacts"] = {{"init", "init.hrpt"},
                           {"final", res.aborted ? "abort.hrpt" : "final.hrpt"},
                           {"loss_trace", "loss_trace.jsonl"}};
  manifest["dataset_size"] = data.size();
  manifest["result"] = {{"initial_loss", res.initial_loss},
                        {"final_loss", res.final_loss},
                        {"steps_done", res.steps_done},
                        {"aborted", res.aborted}};
  write_manifest(out_dir, manifest);
  return res;
}

}  // namespace hrp
