// File: simenv.hpp
// Description: 2D tabletop manipulation environment. A gripper disk moves in
// the unit square, grasps a block by closing near it, and delivers it to a
// target. Rendering follows the synthetic video look so encoders transfer.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hrp/common.hpp"
#include "hrp/container.hpp"
#include "hrp/geometry.hpp"
#include "hrp/records.hpp"
#include "hrp/synthdata.hpp"

namespace hrp {

struct SimConfig {
  int render_size = 64;
  int max_steps = 100;
  double max_step = 0.05;       // per-axis displacement clamp
  double grasp_radius = 0.06;   // closing this near the block grabs it
  double stable_tol = 0.03;     // full credit distance
  double loose_tol = 0.07;      // half credit distance
  double block_half = 0.04;
  double min_separation = 0.1;  // between hand, block and target at reset

  void validate() const {
    if (render_size < 8) throw std::invalid_argument("sim: render_size must be >= 8");
    if (max_steps < 1) throw std::invalid_argument("sim: max_steps must be >= 1");
    if (!(max_step > 0.0)) throw std::invalid_argument("sim: max_step must be positive");
    if (!(grasp_radius > 0.0)) throw std::invalid_argument("sim: grasp_radius must be positive");
    if (!(stable_tol > 0.0) || stable_tol > loose_tol)
      throw std::invalid_argument("sim: need 0 < stable_tol <= loose_tol");
    if (!(block_half > 0.0)) throw std::invalid_argument("sim: block_half must be positive");
    if (min_separation < 0.0) throw std::invalid_argument("sim: min_separation must be >= 0");
  }

  json to_json() const {
    return {{"render_size", render_size}, {"max_steps", max_steps},
            {"max_step", max_step},       {"grasp_radius", grasp_radius},
            {"stable_tol", stable_tol},   {"loose_tol", loose_tol},
            {"block_half", block_half},   {"min_separation", min_separation}};
  }

  static SimConfig from_json(const json& j) {
    SimConfig c;
    c.render_size = j.value("render_size", c.render_size);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.max_step = j.value("max_step", c.max_step);
    c.grasp_radius = j.value("grasp_radius", c.grasp_radius);
    c.stable_tol = j.value("stable_tol", c.stable_tol);
    c.loose_tol = j.value("loose_tol", c.loose_tol);
    c.block_half = j.value("block_half", c.block_half);
    c.min_separation = j.value("min_separation", c.min_separation);
    c.validate();
    return c;
  }
};

struct SimAction {
  double dx = 0.0;
  double dy = 0.0;
  double g = 0.0;  // gripper command, closed at >= 0.5
};

struct SimState {
  Vec2 hand{0.5, 0.5};
  Vec2 block{0.3, 0.3};
  Vec2 target{0.7, 0.7};
  bool grasped = false;
  double gripper = 0.0;  // last command
  int step_count = 0;
  bool done = false;
  int block_color = 0;  // palette index, cosmetic
};

inline double score_of(const SimState& st, const SimConfig& cfg) {
  double d = dist(st.block, st.target);
  if (d <= cfg.stable_tol) return 1.0;
  if (d <= cfg.loose_tol) return 0.5;
  return 0.0;
}

class SimEnv {
 public:
  explicit SimEnv(SimConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  const SimConfig& config() const { return cfg_; }
  const SimState& state() const { return st_; }

  SimState reset(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x73696d));
    auto draw = [&] { return Vec2{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)}; };
    st_ = SimState{};
    st_.hand = draw();
    do {
      st_.block = draw();
    } while (dist(st_.block, st_.hand) < cfg_.min_separation);
    do {
      st_.target = draw();
    } while (dist(st_.target, st_.hand) < cfg_.min_separation ||
             dist(st_.target, st_.block) < cfg_.min_separation);
    st_.block_color = static_cast<int>(rng.bounded(4));
    return st_;
  }

  // movement first (a held block rides along), then the gripper transition
  // at the new position
  SimState step(const SimAction& a) {
    if (st_.done) throw std::logic_error("SimEnv::step: episode finished");
    double dx = std::clamp(a.dx, -cfg_.max_step, cfg_.max_step);
    double dy = std::clamp(a.dy, -cfg_.max_step, cfg_.max_step);
    Vec2 moved{std::clamp(st_.hand.x + dx, 0.0, 1.0), std::clamp(st_.hand.y + dy, 0.0, 1.0)};
    Vec2 delta = moved - st_.hand;
    st_.hand = moved;
    if (st_.grasped) st_.block = st_.block + delta;

    double g = std::clamp(a.g, 0.0, 1.0);
    bool was_closed = st_.gripper >= 0.5;
    bool now_closed = g >= 0.5;
    if (st_.grasped && !now_closed) st_.grasped = false;
    if (!st_.grasped && !was_closed && now_closed && dist(st_.hand, st_.block) <= cfg_.grasp_radius)
      st_.grasped = true;
    st_.gripper = g;

    ++st_.step_count;
    if (st_.step_count >= cfg_.max_steps) st_.done = true;
    return st_;
  }

  double score() const { return score_of(st_, cfg_); }

  Image render() const { return render_state(st_, cfg_); }

  static Image render_state(const SimState& st, const SimConfig& cfg) {
    const std::array<std::array<double, 3>, 4> palette = {{{0.85, 0.12, 0.10},
                                                           {0.10, 0.78, 0.16},
                                                           {0.15, 0.25, 0.85},
                                                           {0.90, 0.84, 0.10}}};
    const int size = cfg.render_size;
    Image img(size, size);
    const auto& bc = palette[static_cast<std::size_t>(st.block_color & 3)];
    double hand_r = st.gripper >= 0.5 ? 0.05 : 0.07;
    Vec2 wrist{st.hand.x, st.hand.y + 0.8 * hand_r};
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        Vec2 p{(x + 0.5) / size, (y + 0.5) / size};
        int cx = static_cast<int>(std::floor(p.x / 0.25)) & 1;
        int cy = static_cast<int>(std::floor(p.y / 0.25)) & 1;
        double base = (cx ^ cy) ? 0.17 : 0.13;
        double r = base, g = base, b = base;
        // target ring
        double tdx = std::abs(p.x - st.target.x), tdy = std::abs(p.y - st.target.y);
        double t_out = 0.05, t_in = 0.035;
        if (tdx <= t_out && tdy <= t_out && !(tdx <= t_in && tdy <= t_in)) {
          r = 0.55;
          g = 0.55;
          b = 0.20;
        }
        if (std::abs(p.x - st.block.x) <= cfg.block_half &&
            std::abs(p.y - st.block.y) <= cfg.block_half) {
          r = bc[0];
          g = bc[1];
          b = bc[2];
        }
        if (dist(p, st.hand) <= hand_r) {
          r = 0.92;
          g = 0.90;
          b = 0.86;
        }
        if (dist(p, wrist) <= 0.015) {
          r = 0.35;
          g = 0.22;
          b = 0.20;
        }
        img.at(x, y, 0) = r;
        img.at(x, y, 1) = g;
        img.at(x, y, 2) = b;
      }
    return img;
  }

 private:
  SimConfig cfg_;
  SimState st_;
};

// Phase-based expert: approach with an open gripper, close next to the
// block, carry it over the target, release, stay put.
inline SimAction expert_action(const SimState& st, const SimConfig& cfg,
                               double max_step = 0.045) {
  auto toward = [&](Vec2 from, Vec2 to) {
    return SimAction{std::clamp(to.x - from.x, -max_step, max_step),
                     std::clamp(to.y - from.y, -max_step, max_step), 0.0};
  };
  if (!st.grasped) {
    if (dist(st.block, st.target) <= cfg.stable_tol) return {0.0, 0.0, 0.0};  // finished
    if (dist(st.hand, st.block) > 0.5 * cfg.grasp_radius) return toward(st.hand, st.block);
    return {0.0, 0.0, 1.0};  // close here
  }
  Vec2 offset = st.block - st.hand;
  Vec2 goal{st.target.x - offset.x, st.target.y - offset.y};
  if (dist(st.block, st.target) <= 0.5 * cfg.stable_tol) return {0.0, 0.0, 0.0};  // release
  SimAction a = toward(st.hand, goal);
  a.g = 1.0;  // keep holding
  return a;
}

struct DemoStep {
  int step = 0;
  SimAction action;
  SimState state;  // before the action
};

inline json to_json(const DemoStep& d) {
  return {{"step", d.step},
          {"action", {d.action.dx, d.action.dy, d.action.g}},
          {"hand", {d.state.hand.x, d.state.hand.y}},
          {"block", {d.state.block.x, d.state.block.y}},
          {"target", {d.state.target.x, d.state.target.y}},
          {"grasped", d.state.grasped},
          {"gripper", d.state.gripper},
          {"block_color", d.state.block_color}};
}

inline DemoStep demo_step_from(const json& j) {
  DemoStep d;
  d.step = j.at("step").get<int>();
  d.action = {j.at("action")[0].get<double>(), j.at("action")[1].get<double>(),
              j.at("action")[2].get<double>()};
  d.state.hand = {j.at("hand")[0].get<double>(), j.at("hand")[1].get<double>()};
  d.state.block = {j.at("block")[0].get<double>(), j.at("block")[1].get<double>()};
  d.state.target = {j.at("target")[0].get<double>(), j.at("target")[1].get<double>()};
  d.state.grasped = j.at("grasped").get<bool>();
  d.state.gripper = j.at("gripper").get<double>();
  d.state.block_color = j.value("block_color", 0);
  return d;
}

struct EpisodeRollout {
  std::vector<DemoStep> steps;
  std::vector<Image> observations;  // one per step, rendered before acting
  double score = 0.0;
  int length = 0;
};

// policy sees the rendered observation and (for scripted baselines) the state
using PolicyFn = std::function<SimAction(const Image&, const SimState&)>;

inline EpisodeRollout run_episode(SimEnv& env, std::uint64_t episode_seed, const PolicyFn& policy,
                                  bool keep_observations, bool stop_when_settled = false) {
  EpisodeRollout out;
  env.reset(episode_seed);
  while (!env.state().done) {
    DemoStep d;
    d.step = env.state().step_count;
    d.state = env.state();
    Image obs = SimEnv::render_state(env.state(), env.config());
    d.action = policy(obs, env.state());
    if (keep_observations) out.observations.push_back(std::move(obs));
    out.steps.push_back(d);
    env.step(d.action);
    if (stop_when_settled && !env.state().grasped && env.state().gripper < 0.5 &&
        score_of(env.state(), env.config()) == 1.0)
      break;
  }
  out.score = env.score();
  out.length = static_cast<int>(out.steps.size());
  return out;
}

inline PolicyFn expert_policy(const SimConfig& cfg, double max_step = 0.045) {
  return [cfg, max_step](const Image&, const SimState& st) {
    return expert_action(st, cfg, max_step);
  };
}

// Expert demonstration corpus: demos/traj_*.jsonl plus rendered observations.
inline json collect_demos(const std::filesystem::path& out_dir, const SimConfig& cfg,
                          int episodes, std::uint64_t seed, const std::string& command,
                          double wall_clock_s = 0.0) {
  cfg.validate();
  if (episodes < 1) throw std::invalid_argument("collect_demos: episodes must be >= 1");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "demos");

  SimEnv env(cfg);
  PolicyFn expert = expert_policy(cfg);
  json entries = json::array();
  std::size_t total_steps = 0;
  double score_sum = 0.0;
  for (int ep = 0; ep < episodes; ++ep) {
    std::uint64_t ep_seed = derive_seed(seed, static_cast<std::uint64_t>(ep));
    EpisodeRollout roll = run_episode(env, ep_seed, expert, true, true);
    std::string stem = traj_stem(ep);
    write_jsonl(out_dir / "demos" / (stem + ".jsonl"), roll.steps,
                [](const DemoStep& d) { return to_json(d); });
    write_clip_images(out_dir / "demos" / (stem + ".images.hrpt"), roll.observations);
    entries.push_back({{"id", ep},
                       {"trajectory", "demos/" + stem + ".jsonl"},
                       {"images", "demos/" + stem + ".images.hrpt"},
                       {"steps", roll.length},
                       {"score", roll.score},
                       {"seed", ep_seed}});
    total_steps += static_cast<std::size_t>(roll.length);
    score_sum += roll.score;
  }

  RunInfo info;
  info.kind = "demos";
  info.command = command;
  info.config = cfg.to_json();
  info.config["episodes"] = episodes;
  info.seed = seed;
  info.wall_clock_s = wall_clock_s;
  json manifest = manifest_base(info);
  manifest["episodes"] = entries;
  manifest["counts"] = {{"episodes", episodes},
                        {"steps", total_steps},
                        {"mean_score", score_sum / episodes}};
  write_manifest(out_dir, manifest);
  return manifest;
}

struct EvalResult {
  double mean_score = 0.0;
  double stderr_score = 0.0;  // sample std over episodes divided by sqrt(n)
  std::vector<double> scores;
  std::vector<int> lengths;
};

// Evaluation with per-episode seeds derived from `seed`; two policies
// evaluated with the same seed see identical episode initializations.
inline EvalResult eval_policy(const SimConfig& cfg, const PolicyFn& policy, int episodes,
                              std::uint64_t seed) {
  cfg.validate();
  if (episodes < 1) throw std::invalid_argument("eval_policy: episodes must be >= 1");
  SimEnv env(cfg);
  EvalResult out;
  for (int ep = 0; ep < episodes; ++ep) {
    EpisodeRollout roll =
        run_episode(env, derive_seed(seed, static_cast<std::uint64_t>(ep)), policy, false);
    out.scores.push_back(roll.score);
    out.lengths.push_back(roll.length);
  }
  double sum = 0.0;
  for (double s : out.scores) sum += s;
  out.mean_score = sum / episodes;
  if (episodes > 1) {
    double ss = 0.0;
    for (double s : out.scores) ss += (s - out.mean_score) * (s - out.mean_score);
    out.stderr_score = std::sqrt(ss / (episodes - 1)) / std::sqrt(static_cast<double>(episodes));
  }
  return out;
}

}  // namespace hrp
