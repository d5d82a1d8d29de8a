// File: hrp_cli.cpp
// Description: Pipeline driver. One binary with subcommands for synthetic
// corpus generation, affordance label mining, encoder pretraining, expert demo
// collection, behavior cloning, policy evaluation, loss ablations, and
// analytic-gradient verification. Exit codes: 0 success, 1 runtime or data
// failure, 2 usage error.
#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "hrp/common.hpp"
#include "hrp/encoder.hpp"
#include "hrp/hrp_train.hpp"
#include "hrp/mining.hpp"
#include "hrp/policy.hpp"
#include "hrp/records.hpp"
#include "hrp/simenv.hpp"
#include "hrp/synthdata.hpp"

namespace {

using namespace hrp;
namespace fs = std::filesystem;

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

std::string join_command(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

json load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config file: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("bad config file " + path + ": " + e.what());
  }
  return j;
}

void stamp_wall_clock(const fs::path& dir, double seconds) {
  json m = read_manifest(dir);
  m["wall_clock_s"] = seconds;
  write_manifest(dir, m);
}

// -------- synth --------

struct SynthArgs {
  std::string out, motion = "mixed", config;
  int clips = 100;
  int size = 64, frames = 60, corr_grid = 6, threads = 0;
  double corr_jitter = 0.0, corr_outlier = 0.0, score_jitter = 0.0, dropout = 0.0,
         no_contact = 0.0;
  std::uint64_t seed = 0;
};

void add_synth(CLI::App& app, SynthArgs& a, const std::string& command) {
  CLI::App* sub = app.add_subcommand("synth", "generate a synthetic clip corpus");
  sub->add_option("--out", a.out, "output directory")->required();
  sub->add_option("--clips", a.clips, "number of clips");
  sub->add_option("--size", a.size, "image size in pixels");
  sub->add_option("--frames", a.frames, "frames per clip");
  sub->add_option("--motion", a.motion, "camera motion")
      ->check(CLI::IsMember({"static", "linear", "projective", "mixed"}));
  sub->add_option("--corr-grid", a.corr_grid, "correspondence grid side");
  sub->add_option("--corr-jitter", a.corr_jitter, "correspondence noise std");
  sub->add_option("--corr-outlier", a.corr_outlier, "correspondence outlier fraction");
  sub->add_option("--score-jitter", a.score_jitter, "contact score noise std");
  sub->add_option("--dropout", a.dropout, "detection dropout probability");
  sub->add_option("--no-contact", a.no_contact, "probability a clip has no contact");
  sub->add_option("--seed", a.seed, "corpus seed");
  sub->add_option("--threads", a.threads, "worker cap (0 = HRP_THREADS or hardware)");
  sub->add_option("--config", a.config, "JSON scene config; flags win");
  sub->callback([&a, sub, command] {
    SceneSpec spec;
    if (!a.config.empty()) spec = SceneSpec::from_json(load_config_file(a.config));
    if (sub->count("--size")) spec.image_size = a.size;
    if (sub->count("--frames")) spec.n_frames = a.frames;
    if (sub->count("--motion")) spec.motion = camera_motion_from(a.motion);
    if (sub->count("--corr-grid")) spec.corr_grid = a.corr_grid;
    if (sub->count("--corr-jitter")) spec.corr_jitter_std = a.corr_jitter;
    if (sub->count("--corr-outlier")) spec.corr_outlier_frac = a.corr_outlier;
    if (sub->count("--score-jitter")) spec.score_jitter_std = a.score_jitter;
    if (sub->count("--dropout")) spec.detection_dropout = a.dropout;
    if (sub->count("--no-contact")) spec.no_contact_prob = a.no_contact;
    spec.validate();
    if (a.clips < 1) throw std::invalid_argument("synth: --clips must be >= 1");
    Timer timer;
    json manifest = write_corpus(a.out, spec, a.clips, a.seed, command, 0.0, a.threads);
    stamp_wall_clock(a.out, timer.seconds());
    std::cout << "wrote " << manifest["counts"]["clips"] << " clips to " << a.out << "\n";
  });
}

// -------- mine --------

struct MineArgs {
  std::string detections, out, hand = "right_then_left", config;
  int gmm_modes = 5, wrist_horizon = 30;
  double contact_threshold = 0.5;
  std::uint64_t seed = 0;
};

void add_mine(CLI::App& app, MineArgs& a, const std::string& command) {
  CLI::App* sub = app.add_subcommand("mine", "mine affordance labels from detections");
  sub->add_option("--detections", a.detections, "corpus directory with per-clip detections")
      ->required();
  sub->add_option("--out", a.out, "output directory")->required();
  sub->add_option("--gmm-modes", a.gmm_modes, "contact mixture modes");
  sub->add_option("--wrist-horizon", a.wrist_horizon, "future wrist horizon in frames");
  sub->add_option("--hand", a.hand, "hand side policy")
      ->check(CLI::IsMember({"right_then_left", "both"}));
  sub->add_option("--contact-threshold", a.contact_threshold, "smoothed score threshold");
  sub->add_option("--seed", a.seed, "mining seed");
  sub->add_option("--config", a.config, "JSON mining config; flags win");
  sub->callback([&a, sub, command] {
    MiningConfig cfg;
    if (!a.config.empty()) cfg = MiningConfig::from_json(load_config_file(a.config));
    if (sub->count("--gmm-modes")) cfg.gmm_modes = a.gmm_modes;
    if (sub->count("--wrist-horizon")) cfg.wrist_horizon = a.wrist_horizon;
    if (sub->count("--hand")) cfg.hand_mode = a.hand;
    if (sub->count("--contact-threshold")) cfg.contact_threshold = a.contact_threshold;
    if (sub->count("--seed")) cfg.seed = a.seed;
    cfg.validate();
    Timer timer;
    json manifest = mine_corpus(a.detections, a.out, cfg, command);
    stamp_wall_clock(a.out, timer.seconds());
    std::size_t clips = manifest["counts"]["clips"].get<std::size_t>();
    std::size_t records = manifest["counts"]["records"].get<std::size_t>();
    std::cout << "mined " << records << " records from " << clips << " clips into " << a.out
              << "\n";
    if (clips == 0 || records == 0) throw std::runtime_error("mining produced no records");
  });
}

// -------- pretrain --------

struct PretrainArgs {
  std::string data, out, init = "random", mode = "layernorm", config;
  int steps = 2000, batch = 32, gmm_modes = 5, log_every = 50;
  int image_size = 64, patch = 8, dim = 64, depth = 4, heads = 4;
  double lr = 1e-4, weight_decay = 0.0;
  double lambda_ct = 0.005, lambda_hand = 0.5, lambda_obj = 0.05;
  std::uint64_t seed = 0;
};

void add_pretrain(CLI::App& app, PretrainArgs& a, const std::string& command) {
  CLI::App* sub = app.add_subcommand("pretrain", "train the encoder on mined labels");
  sub->add_option("--data", a.data, "mined label directory")->required();
  sub->add_option("--out", a.out, "output directory")->required();
  sub->add_option("--init", a.init, "random or a checkpoint path");
  sub->add_option("--mode", a.mode, "trainable partition")
      ->check(CLI::IsMember({"layernorm", "full", "frozen"}));
  sub->add_option("--steps", a.steps, "optimization steps");
  sub->add_option("--batch", a.batch, "batch size");
  sub->add_option("--lr", a.lr, "learning rate");
  sub->add_option("--weight-decay", a.weight_decay, "coupled L2 strength");
  sub->add_option("--lambda-ct", a.lambda_ct, "contact loss weight");
  sub->add_option("--lambda-hand", a.lambda_hand, "hand loss weight");
  sub->add_option("--lambda-obj", a.lambda_obj, "object loss weight");
  sub->add_option("--gmm-modes", a.gmm_modes, "contact mixture modes");
  sub->add_option("--log-every", a.log_every, "trace cadence");
  sub->add_option("--image-size", a.image_size, "encoder input size");
  sub->add_option("--patch", a.patch, "patch size");
  sub->add_option("--dim", a.dim, "embedding dim");
  sub->add_option("--depth", a.depth, "transformer blocks");
  sub->add_option("--heads", a.heads, "attention heads");
  sub->add_option("--seed", a.seed, "training seed");
  sub->add_option("--config", a.config, "JSON training config; flags win");
  sub->callback([&a, sub, command] {
    HrpTrainConfig cfg;
    if (!a.config.empty()) cfg = HrpTrainConfig::from_json(load_config_file(a.config));
    if (sub->count("--mode"))
      cfg.partition = a.mode == "layernorm" ? PartitionMode::LayerNormOnly
                      : a.mode == "full"    ? PartitionMode::Full
                                            : PartitionMode::Frozen;
    if (sub->count("--steps")) cfg.steps = a.steps;
    if (sub->count("--batch")) cfg.batch_size = a.batch;
    if (sub->count("--lr")) cfg.adam.lr = a.lr;
    if (sub->count("--weight-decay")) cfg.adam.weight_decay = a.weight_decay;
    if (sub->count("--lambda-ct")) cfg.weights.contact = a.lambda_ct;
    if (sub->count("--lambda-hand")) cfg.weights.hand = a.lambda_hand;
    if (sub->count("--lambda-obj")) cfg.weights.object = a.lambda_obj;
    if (sub->count("--gmm-modes")) cfg.gmm_modes = a.gmm_modes;
    if (sub->count("--log-every")) cfg.log_every = a.log_every;
    if (sub->count("--image-size")) cfg.encoder.image_size = a.image_size;
    if (sub->count("--patch")) cfg.encoder.patch_size = a.patch;
    if (sub->count("--dim")) cfg.encoder.embed_dim = a.dim;
    if (sub->count("--depth")) cfg.encoder.depth = a.depth;
    if (sub->count("--heads")) cfg.encoder.heads = a.heads;
    if (sub->count("--seed")) cfg.seed = a.seed;
    cfg.validate();

    std::optional<LoadedEncoder> warm;
    if (a.init != "random") {
      warm = load_encoder_checkpoint(a.init);
      cfg.encoder = warm->params.cfg;
      if (!warm->heads) throw std::runtime_error("init checkpoint has no affordance heads");
    }
    AffordanceDataset data = AffordanceDataset::load(a.data);
    Timer timer;
    HrpTrainResult res = hrp_pretrain(data, cfg, a.out, command,
                                      warm ? &warm->params : nullptr,
                                      warm ? &*warm->heads : nullptr);
    stamp_wall_clock(a.out, timer.seconds());
    std::cout << "loss " << res.initial_loss << " -> " << res.final_loss << " over "
              << res.steps_done << " steps; checkpoint " << res.final_checkpoint << "\n";
    if (res.aborted) throw std::runtime_error("training aborted on non-finite loss");
  });
}

// -------- demos --------

struct DemosArgs {
  std::string out, config;
  int episodes = 100, render_size = 64, max_steps = 100;
  std::uint64_t seed = 0;
};

void add_demos(CLI::App& app, DemosArgs& a, const std::string& command) {
  CLI::App* sub = app.add_subcommand("demos", "record scripted expert demonstrations");
  sub->add_option("--out", a.out, "output directory")->required();
  sub->add_option("--episodes", a.episodes, "episodes to record");
  sub->add_option("--render-size", a.render_size, "observation size in pixels");
  sub->add_option("--max-steps", a.max_steps, "episode step cap");
  sub->add_option("--seed", a.seed, "episode seed base");
  sub->add_option("--config", a.config, "JSON simulator config; flags win");
  sub->callback([&a, sub, command] {
    SimConfig cfg;
    if (!a.config.empty()) cfg = SimConfig::from_json(load_config_file(a.config));
    if (sub->count("--render-size")) cfg.render_size = a.render_size;
    if (sub->count("--max-steps")) cfg.max_steps = a.max_steps;
    cfg.validate();
    if (a.episodes < 1) throw std::invalid_argument("demos: --episodes must be >= 1");
    Timer timer;
    json manifest = collect_demos(a.out, cfg, a.episodes, a.seed, command);
    stamp_wall_clock(a.out, timer.seconds());
    std::cout << "recorded " << manifest["counts"]["steps"] << " steps over " << a.episodes
              << " episodes, mean score " << manifest["counts"]["mean_score"] << "\n";
  });
}

// -------- bc --------

struct BcArgs {
  std::string demos, out, encoder, config;
  int steps = 1000, batch = 32, gmm_modes = 5, hidden = 128, log_every = 25, pad = 4;
  int image_size = 64, patch = 8, dim = 64, depth = 4, heads = 4;
  double lr = 1e-4, weight_decay = 1e-4, dropout = 0.2, blur_prob = 0.5;
  bool no_augment = false;
  std::uint64_t seed = 0;
};

void add_bc(CLI::App& app, BcArgs& a, const std::string& command) {
  CLI::App* sub = app.add_subcommand("bc", "behavior cloning on expert demos");
  sub->add_option("--demos", a.demos, "demo directory")->required();
  sub->add_option("--out", a.out, "output directory")->required();
  sub->add_option("--encoder", a.encoder,
                  "encoder checkpoint; omitted means a fresh random encoder");
  sub->add_option("--steps", a.steps, "optimization steps");
  sub->add_option("--batch", a.batch, "batch size");
  sub->add_option("--lr", a.lr, "learning rate");
  sub->add_option("--weight-decay", a.weight_decay, "coupled L2 strength");
  sub->add_option("--gmm-modes", a.gmm_modes, "action mixture modes");
  sub->add_option("--hidden", a.hidden, "trunk width");
  sub->add_option("--dropout", a.dropout, "trunk dropout");
  sub->add_flag("--no-augment", a.no_augment, "disable shift/blur augmentation");
  sub->add_option("--pad", a.pad, "augmentation shift padding");
  sub->add_option("--blur-prob", a.blur_prob, "augmentation blur probability");
  sub->add_option("--log-every", a.log_every, "trace cadence");
  sub->add_option("--image-size", a.image_size, "random-encoder input size");
  sub->add_option("--patch", a.patch, "random-encoder patch size");
  sub->add_option("--dim", a.dim, "random-encoder embedding dim");
  sub->add_option("--depth", a.depth, "random-encoder blocks");
  sub->add_option("--heads", a.heads, "random-encoder attention heads");
  sub->add_option("--seed", a.seed, "training seed");
  sub->add_option("--config", a.config, "JSON policy config; flags win");
  sub->callback([&a, sub, command] {
    PolicyConfig cfg;
    if (!a.config.empty()) cfg = PolicyConfig::from_json(load_config_file(a.config));
    if (sub->count("--steps")) cfg.steps = a.steps;
    if (sub->count("--batch")) cfg.batch_size = a.batch;
    if (sub->count("--lr")) cfg.adam.lr = a.lr;
    if (sub->count("--weight-decay")) cfg.adam.weight_decay = a.weight_decay;
    if (sub->count("--gmm-modes")) cfg.gmm_modes = a.gmm_modes;
    if (sub->count("--hidden")) cfg.hidden = a.hidden;
    if (sub->count("--dropout")) cfg.dropout = a.dropout;
    if (a.no_augment) cfg.augment = false;
    if (sub->count("--pad")) cfg.pad = a.pad;
    if (sub->count("--blur-prob")) cfg.blur_prob = a.blur_prob;
    if (sub->count("--log-every")) cfg.log_every = a.log_every;
    if (sub->count("--seed")) cfg.seed = a.seed;
    cfg.validate();

    EncoderParams enc;
    if (!a.encoder.empty()) {
      enc = load_encoder_checkpoint(a.encoder).params;
    } else {
      EncoderConfig ec;
      ec.image_size = a.image_size;
      ec.patch_size = a.patch;
      ec.embed_dim = a.dim;
      ec.depth = a.depth;
      ec.heads = a.heads;
      ec.validate();
      enc = init_encoder(ec, cfg.seed);
    }
    DemoDataset data = DemoDataset::load(a.demos);
    Timer timer;
    BcResult res = bc_train(data, enc, cfg, a.out, command);
    stamp_wall_clock(a.out, timer.seconds());
    std::cout << "nll " << res.initial_nll << " -> " << res.final_nll << " over "
              << res.steps_done << " steps; checkpoint " << res.checkpoint << "\n";
    if (res.aborted) throw std::runtime_error("training aborted on non-finite loss");
  });
}

// -------- eval --------

struct EvalArgs {
  std::vector<std::string> policies;
  std::string out, config;
  bool expert = false, random = false;
  int episodes = 50, render_size = 64, max_steps = 100;
  std::uint64_t seed = 0;
};

void add_eval(CLI::App& app, EvalArgs& a, const std::string& command) {
  CLI::App* sub = app.add_subcommand("eval", "evaluate policies on shared episode seeds");
  sub->add_option("--policy", a.policies, "policy checkpoint, repeatable for A/B runs");
  sub->add_flag("--expert", a.expert, "also score the scripted expert");
  sub->add_flag("--random", a.random, "also score a uniform-random policy");
  sub->add_option("--episodes", a.episodes, "episodes per policy");
  sub->add_option("--seed", a.seed, "episode seed base shared by all policies");
  sub->add_option("--render-size", a.render_size, "observation size for expert/random rows");
  sub->add_option("--max-steps", a.max_steps, "episode step cap");
  sub->add_option("--out", a.out, "write the JSON report here as well");
  sub->add_option("--config", a.config, "JSON simulator config; flags win");
  sub->callback([&a, sub, command] {
    if (a.policies.empty() && !a.expert && !a.random)
      throw std::invalid_argument("eval: give --policy, --expert, or --random");
    SimConfig base;
    if (!a.config.empty()) base = SimConfig::from_json(load_config_file(a.config));
    if (sub->count("--render-size")) base.render_size = a.render_size;
    if (sub->count("--max-steps")) base.max_steps = a.max_steps;
    base.validate();
    if (a.episodes < 1) throw std::invalid_argument("eval: --episodes must be >= 1");

    json rows = json::array();
    auto add_row = [&](const std::string& name, const std::string& source, const SimConfig& sc,
                       const PolicyFn& fn) {
      EvalResult r = eval_policy(sc, fn, a.episodes, a.seed);
      std::cout << name << ": mean " << r.mean_score << " +/- " << r.stderr_score << "\n";
      rows.push_back({{"name", name},
                      {"checkpoint", source},
                      {"mean_score", r.mean_score},
                      {"stderr", r.stderr_score},
                      {"scores", r.scores},
                      {"lengths", r.lengths}});
    };

    for (const auto& path : a.policies) {
      LoadedPolicy lp = load_policy_checkpoint(path);
      SimConfig sc = base;
      sc.render_size = lp.encoder.cfg.image_size;
      add_row(fs::path(path).stem().string(), path, sc,
              make_policy_fn(lp.encoder, lp.mlp, lp.cfg, sc, a.seed));
    }
    if (a.expert) add_row("expert", "builtin:expert", base, expert_policy(base));
    if (a.random) {
      auto rng = std::make_shared<Rng>(derive_seed(a.seed, 0x72616e64));
      SimConfig sc = base;
      add_row("random", "builtin:random", base,
              [rng, sc](const Image&, const SimState&) {
                return SimAction{rng->uniform(-sc.max_step, sc.max_step),
                                 rng->uniform(-sc.max_step, sc.max_step), rng->uniform()};
              });
    }

    json report = {{"kind", "eval_report"},
                   {"version", kVersion},
                   {"command", command},
                   {"episodes", a.episodes},
                   {"seed", a.seed},
                   {"policies", rows}};
    std::cout << report.dump(2) << "\n";
    if (!a.out.empty()) {
      std::ofstream os(a.out, std::ios::trunc);
      if (!os) throw std::runtime_error("cannot write report to " + a.out);
      os << report.dump(2) << "\n";
    }
  });
}

// -------- ablate --------

struct AblateArgs {
  std::string data, demos, out;
  int steps = 2000, bc_steps = 1000, episodes = 50, batch = 32, gmm_modes = 5;
  int image_size = 64, patch = 8, dim = 64, depth = 4, heads = 4;
  std::uint64_t seed = 0;
};

void add_ablate(CLI::App& app, AblateArgs& a, const std::string& command) {
  CLI::App* sub = app.add_subcommand(
      "ablate", "pretrain with each affordance loss dropped, then clone and evaluate");
  sub->add_option("--data", a.data, "mined label directory")->required();
  sub->add_option("--demos", a.demos, "demo directory")->required();
  sub->add_option("--out", a.out, "output directory")->required();
  sub->add_option("--steps", a.steps, "pretraining steps per row");
  sub->add_option("--bc-steps", a.bc_steps, "cloning steps per row");
  sub->add_option("--episodes", a.episodes, "evaluation episodes per row");
  sub->add_option("--batch", a.batch, "batch size for both stages");
  sub->add_option("--gmm-modes", a.gmm_modes, "mixture modes for labels and actions");
  sub->add_option("--image-size", a.image_size, "encoder input size");
  sub->add_option("--patch", a.patch, "patch size");
  sub->add_option("--dim", a.dim, "embedding dim");
  sub->add_option("--depth", a.depth, "transformer blocks");
  sub->add_option("--heads", a.heads, "attention heads");
  sub->add_option("--seed", a.seed, "seed shared by every row");
  sub->callback([&a, command] {
    struct Row {
      std::string key, name;
      LossWeights w;
    };
    LossWeights full, no_ct, no_obj, no_hand;
    no_ct.contact = 0.0;
    no_obj.object = 0.0;
    no_hand.hand = 0.0;
    std::vector<Row> rows{{"ours", "Ours", full},
                          {"no_contact", "No Contact", no_ct},
                          {"no_object", "No Object", no_obj},
                          {"no_hand", "No Hand", no_hand}};

    AffordanceDataset data = AffordanceDataset::load(a.data);
    DemoDataset demos = DemoDataset::load(a.demos);
    Timer timer;
    json table = json::array();
    double full_mean = 0.0, full_se = 0.0;

    for (const Row& row : rows) {
      fs::path row_dir = fs::path(a.out) / row.key;
      HrpTrainConfig hc;
      hc.encoder.image_size = a.image_size;
      hc.encoder.patch_size = a.patch;
      hc.encoder.embed_dim = a.dim;
      hc.encoder.depth = a.depth;
      hc.encoder.heads = a.heads;
      hc.gmm_modes = a.gmm_modes;
      hc.steps = a.steps;
      hc.batch_size = a.batch;
      hc.weights = row.w;
      hc.seed = a.seed;
      hc.validate();
      HrpTrainResult hr = hrp_pretrain(data, hc, row_dir / "hrp", command);
      if (hr.aborted) throw std::runtime_error("pretraining aborted for row " + row.key);

      EncoderParams enc = load_encoder_checkpoint(hr.final_checkpoint).params;
      PolicyConfig pc;
      pc.gmm_modes = a.gmm_modes;
      pc.steps = a.bc_steps;
      pc.batch_size = a.batch;
      pc.seed = a.seed;
      BcResult br = bc_train(demos, enc, pc, row_dir / "bc", command);
      if (br.aborted) throw std::runtime_error("cloning aborted for row " + row.key);

      LoadedPolicy lp = load_policy_checkpoint(br.checkpoint);
      SimConfig sc;
      sc.render_size = lp.encoder.cfg.image_size;
      EvalResult ev = eval_policy(sc, make_policy_fn(lp.encoder, lp.mlp, lp.cfg, sc, a.seed),
                                  a.episodes, a.seed);
      if (row.key == "ours") {
        full_mean = ev.mean_score;
        full_se = ev.stderr_score;
      }
      std::cout << row.name << ": mean " << ev.mean_score << " +/- " << ev.stderr_score
                << "\n";
      table.push_back({{"key", row.key},
                       {"name", row.name},
                       {"lambda_ct", row.w.contact},
                       {"lambda_hand", row.w.hand},
                       {"lambda_obj", row.w.object},
                       {"mean_score", ev.mean_score},
                       {"stderr", ev.stderr_score},
                       {"scores", ev.scores}});
    }

    json comparisons = json::array();
    for (const auto& r : table) {
      if (r["key"] == "ours") continue;
      double drop_mean = r["mean_score"].get<double>();
      double drop_se = r["stderr"].get<double>();
      double pooled = std::sqrt(full_se * full_se + drop_se * drop_se);
      comparisons.push_back({{"row", r["key"]},
                             {"gap", full_mean - drop_mean},
                             {"pooled_stderr", pooled},
                             {"within_one_stderr", full_mean >= drop_mean - pooled}});
    }

    RunInfo info;
    info.kind = "ablation";
    info.command = command;
    info.config = {{"steps", a.steps},
                   {"bc_steps", a.bc_steps},
                   {"episodes", a.episodes},
                   {"batch", a.batch},
                   {"gmm_modes", a.gmm_modes}};
    info.seed = a.seed;
    info.wall_clock_s = timer.seconds();
    json manifest = manifest_base(info);
    manifest["table"] = table;
    manifest["comparisons"] = comparisons;
    fs::create_directories(a.out);
    write_manifest(a.out, manifest);
    std::ofstream os(fs::path(a.out) / "ablation.json", std::ios::trunc);
    os << json({{"table", table}, {"comparisons", comparisons}}).dump(2) << "\n";
    std::cout << "ablation table written to " << (fs::path(a.out) / "ablation.json").string()
              << "\n";
  });
}

// -------- gradcheck --------

struct GradcheckArgs {
  std::uint64_t seed = 0;
};

void add_gradcheck(CLI::App& app, GradcheckArgs& a, const std::string&) {
  CLI::App* sub =
      app.add_subcommand("gradcheck", "verify analytic gradients against finite differences");
  sub->add_option("--seed", a.seed, "randomization seed");
  sub->callback([&a] {
    EncoderConfig ec;
    ec.image_size = 16;
    ec.patch_size = 4;
    ec.embed_dim = 32;
    ec.depth = 2;
    ec.heads = 4;
    EncoderParams params = init_encoder(ec, a.seed);
    const int k = 5;
    AffordanceHeads heads = init_heads(ec, k, derive_seed(a.seed, 1));

    Rng rng(derive_seed(a.seed, 2));
    std::vector<Image> images;
    std::vector<AffordanceRecord> records;
    std::array<std::array<int, 3>, 3> masks{{{1, 1, 1}, {0, 1, 0}, {1, 0, 1}}};
    for (int i = 0; i < 3; ++i) {
      Image img(ec.image_size, ec.image_size);
      for (auto& v : img.data) v = rng.uniform();
      images.push_back(std::move(img));
      AffordanceRecord r;
      r.frame_index = i;
      r.contact.resize(2 * k);
      for (auto& v : r.contact) v = rng.uniform();
      r.hand = {rng.uniform(), rng.uniform()};
      r.object = {rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
      r.m_c = masks[static_cast<std::size_t>(i)][0];
      r.m_h = masks[static_cast<std::size_t>(i)][1];
      r.m_b = masks[static_cast<std::size_t>(i)][2];
      records.push_back(std::move(r));
    }
    auto data = AffordanceDataset::in_memory(images, records);
    std::vector<std::size_t> batch{0, 1, 2};
    LossWeights w;
    ParamPartition part{PartitionMode::Full};
    GradSet gs = make_grad_set(params, &heads, part);
    hrp_train_step(params, heads, data, batch, w, part, gs);
    auto theta = flatten_trainable(params, &heads, part);
    auto analytic = flatten_grads(gs);
    std::cout << "encoder trainable coordinates: " << theta.size() << "\n";
    auto f = [&](std::span<const double> x) {
      EncoderParams pp = params;
      AffordanceHeads hh = heads;
      unflatten_trainable(pp, &hh, part, std::vector<double>(x.begin(), x.end()));
      double total = 0.0;
      for (std::size_t i : batch) {
        auto z = encoder_forward(pp, data.image(i));
        total += record_loss(heads_forward(hh, z), data.record(i), w);
      }
      return total / static_cast<double>(batch.size());
    };
    // loss is O(1): the 1e-6 floor keeps coordinates whose true gradient is
    // below finite-difference noise from dominating the relative comparison
    auto enc_res = grad_check(f, theta, analytic, 1e-5, 1e-6);
    std::cout << "encoder+loss max rel err: " << enc_res.max_rel_error << "\n";

    // the cloning stack trains end to end, so the check spans encoder, trunk
    // and mixture head together
    PolicyConfig pc;
    PolicyMlp mlp = init_policy(ec.embed_dim + kProprioDim, pc, derive_seed(a.seed, 3));
    std::vector<Eigen::Vector3d> pstates, pactions;
    for (int i = 0; i < 2; ++i) {
      pstates.emplace_back(rng.uniform(), rng.uniform(), i == 0 ? 0.0 : 1.0);
      pactions.emplace_back(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform());
    }

    ParamPartition enc_part{PartitionMode::Full};
    GradSet pegs = make_grad_set(params, nullptr, enc_part);
    PolicyGrads grads = PolicyGrads::zeros_like(mlp);
    for (std::size_t i = 0; i < pstates.size(); ++i) {
      EncoderCache ec_cache;
      Eigen::VectorXd z = encoder_forward(params, data.image(i), &ec_cache);
      PolicyCache cache;
      Eigen::VectorXd out =
          policy_forward(mlp, policy_input(z, pstates[i]), pc, nullptr, &cache);
      Eigen::VectorXd dout;
      policy_nll(out, pactions[i], pc, &dout);
      dout /= static_cast<double>(pstates.size());
      Eigen::VectorXd dx = policy_backward(mlp, cache, dout, grads);
      Eigen::VectorXd dz = dx.head(ec.embed_dim);
      encoder_backward(params, ec_cache, dz, enc_part, pegs);
    }
    std::vector<double> ptheta = flatten_trainable(params, nullptr, enc_part);
    const std::size_t penc_n = ptheta.size();
    std::vector<double> mlp_theta;
    detail::policy_flatten(mlp, mlp_theta);
    ptheta.insert(ptheta.end(), mlp_theta.begin(), mlp_theta.end());
    std::vector<double> panalytic = flatten_grads(pegs);
    PolicyMlp gm;
    gm.w1 = grads.w1;
    gm.b1 = grads.b1;
    gm.w2 = grads.w2;
    gm.b2 = grads.b2;
    gm.w3 = grads.w3;
    gm.b3 = grads.b3;
    std::vector<double> mlp_grads;
    detail::policy_flatten(gm, mlp_grads);
    panalytic.insert(panalytic.end(), mlp_grads.begin(), mlp_grads.end());
    std::cout << "policy stack trainable coordinates: " << ptheta.size() << "\n";
    auto fp = [&](std::span<const double> x) {
      EncoderParams pp = params;
      PolicyMlp probe = mlp;
      unflatten_trainable(pp, nullptr, enc_part,
                          std::vector<double>(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(penc_n)));
      detail::policy_unflatten(probe, std::vector<double>(x.begin() + static_cast<std::ptrdiff_t>(penc_n), x.end()));
      double total = 0.0;
      for (std::size_t i = 0; i < pstates.size(); ++i) {
        Eigen::VectorXd z = encoder_forward(pp, data.image(i));
        total += policy_nll(policy_forward(probe, policy_input(z, pstates[i]), pc),
                            pactions[i], pc);
      }
      return total / static_cast<double>(pstates.size());
    };
    auto pol_res = grad_check(fp, ptheta, panalytic, 1e-5, 1e-6);
    std::cout << "policy+nll max rel err: " << pol_res.max_rel_error << "\n";

    bool pass = enc_res.max_rel_error < 1e-4 && pol_res.max_rel_error < 1e-4;
    std::cout << "max rel err < 1e-4: " << (pass ? "PASS" : "FAIL") << "\n";
    if (!pass) throw std::runtime_error("gradient check failed");
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hand-affordance pretraining and cloning pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(hrp::kVersion));
  std::string command = join_command(argc, argv);

  SynthArgs synth_args;
  MineArgs mine_args;
  PretrainArgs pretrain_args;
  DemosArgs demos_args;
  BcArgs bc_args;
  EvalArgs eval_args;
  AblateArgs ablate_args;
  GradcheckArgs gradcheck_args;
  add_synth(app, synth_args, command);
  add_mine(app, mine_args, command);
  add_pretrain(app, pretrain_args, command);
  add_demos(app, demos_args, command);
  add_bc(app, bc_args, command);
  add_eval(app, eval_args, command);
  add_ablate(app, ablate_args, command);
  add_gradcheck(app, gradcheck_args, command);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
