// File: synthdata.hpp
// Description: synthetic egocentric clip generator. A moving camera window
// looks at a textured plane holding one colored object and one hand disk; the
// generator emits rendered frames, detector-style records, and ground truth.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hrp/common.hpp"
#include "hrp/container.hpp"
#include "hrp/geometry.hpp"
#include "hrp/records.hpp"

namespace hrp {

enum class CameraMotion { Static, Linear, Projective, Mixed };

inline std::string to_string(CameraMotion m) {
  switch (m) {
    case CameraMotion::Static: return "static";
    case CameraMotion::Linear: return "linear";
    case CameraMotion::Projective: return "projective";
    case CameraMotion::Mixed: return "mixed";
  }
  throw std::logic_error("bad CameraMotion");
}

inline CameraMotion camera_motion_from(const std::string& s) {
  if (s == "static") return CameraMotion::Static;
  if (s == "linear") return CameraMotion::Linear;
  if (s == "projective") return CameraMotion::Projective;
  if (s == "mixed") return CameraMotion::Mixed;
  throw std::runtime_error("unknown camera motion '" + s + "'");
}

struct SceneSpec {
  int image_size = 64;
  int n_frames = 60;
  CameraMotion motion = CameraMotion::Mixed;
  int corr_grid = 6;               // correspondence grid side
  double corr_jitter_std = 0.0;    // gaussian noise on correspondence targets
  double corr_outlier_frac = 0.0;  // fraction of targets replaced by uniform noise
  double score_jitter_std = 0.0;   // gaussian noise on contact scores
  double detection_dropout = 0.0;  // per-frame probability of losing wrist or mask
  double no_contact_prob = 0.0;    // fraction of clips without a contact event

  void validate() const {
    if (image_size < 8) throw std::invalid_argument("scene: image_size must be >= 8");
    if (n_frames < 8) throw std::invalid_argument("scene: n_frames must be >= 8");
    if (corr_grid < 3) throw std::invalid_argument("scene: corr_grid must be >= 3");
    for (double v : {corr_jitter_std, corr_outlier_frac, score_jitter_std, detection_dropout,
                     no_contact_prob})
      if (v < 0.0) throw std::invalid_argument("scene: noise knobs must be non-negative");
    if (corr_outlier_frac > 0.9 || detection_dropout > 1.0 || no_contact_prob > 1.0)
      throw std::invalid_argument("scene: noise knob out of range");
  }

  nlohmann::json to_json() const {
    return {{"image_size", image_size},
            {"n_frames", n_frames},
            {"motion", to_string(motion)},
            {"corr_grid", corr_grid},
            {"corr_jitter_std", corr_jitter_std},
            {"corr_outlier_frac", corr_outlier_frac},
            {"score_jitter_std", score_jitter_std},
            {"detection_dropout", detection_dropout},
            {"no_contact_prob", no_contact_prob}};
  }

  static SceneSpec from_json(const nlohmann::json& j) {
    SceneSpec s;
    s.image_size = j.value("image_size", s.image_size);
    s.n_frames = j.value("n_frames", s.n_frames);
    if (j.contains("motion")) s.motion = camera_motion_from(j["motion"].get<std::string>());
    s.corr_grid = j.value("corr_grid", s.corr_grid);
    s.corr_jitter_std = j.value("corr_jitter_std", s.corr_jitter_std);
    s.corr_outlier_frac = j.value("corr_outlier_frac", s.corr_outlier_frac);
    s.score_jitter_std = j.value("score_jitter_std", s.score_jitter_std);
    s.detection_dropout = j.value("detection_dropout", s.detection_dropout);
    s.no_contact_prob = j.value("no_contact_prob", s.no_contact_prob);
    s.validate();
    return s;
  }
};

struct ClipTruth {
  int contact_onset = -1;  // -1 when the clip has no contact event
  ContactState contact_state = ContactState::NoContact;
  std::string motion;
  std::vector<Homography> adjacent;     // [T-1], frame t -> t+1
  std::vector<Vec2> wrist;              // per frame, image coords
  std::vector<Box> object_box;          // per frame, image coords
  std::vector<Vec2> contact_points;     // onset-frame image coords
};

struct SynthClip {
  std::vector<FrameDetections> frames;
  std::vector<Image> images;
  ClipTruth truth;
};

namespace detail {

struct SceneWorld {
  Box object;  // world coords
  std::array<double, 3> object_color;
  double hand_radius;
  std::vector<Vec2> hand_center;  // per frame, world coords
  Vec2 wrist_offset;
  std::vector<Homography> world_to_image;  // per frame
};

inline std::array<double, 3> scene_color(const SceneWorld& w, int frame, Vec2 p) {
  // faint world-anchored checker so camera motion is observable
  int cx = static_cast<int>(std::floor(p.x / 0.25)) & 1;
  int cy = static_cast<int>(std::floor(p.y / 0.25)) & 1;
  double base = (cx ^ cy) ? 0.17 : 0.13;
  std::array<double, 3> col{base, base, base};
  if (w.object.contains(p)) col = w.object_color;
  Vec2 hc = w.hand_center[static_cast<std::size_t>(frame)];
  double dh = dist(p, hc);
  if (dh <= w.hand_radius) col = {0.92, 0.90, 0.86};
  Vec2 wr = hc + w.wrist_offset;
  if (dist(p, wr) <= 0.015) col = {0.35, 0.22, 0.20};
  return col;
}

}  // namespace detail

// Deterministic clip construction from spec and seed. Truth fields are exact;
// detections carry the configured noise.
inline SynthClip make_clip(const SceneSpec& spec, std::uint64_t clip_seed) {
  spec.validate();
  const int t_count = spec.n_frames, size = spec.image_size;
  Rng rng_scene(derive_seed(clip_seed, 1));
  Rng rng_noise(derive_seed(clip_seed, 2));

  // camera path
  CameraMotion motion = spec.motion;
  if (motion == CameraMotion::Mixed) {
    double u = rng_scene.uniform();
    motion = u < 0.25 ? CameraMotion::Static : (u < 0.75 ? CameraMotion::Linear : CameraMotion::Projective);
  }
  detail::SceneWorld world;
  std::vector<Homography>& cam = world.world_to_image;
  cam.resize(static_cast<std::size_t>(t_count));
  if (motion == CameraMotion::Static) {
    for (auto& h : cam) h = Homography::identity();
  } else if (motion == CameraMotion::Linear) {
    double vx = rng_scene.uniform(-0.004, 0.004);
    double vy = rng_scene.uniform(-0.004, 0.004);
    for (int t = 0; t < t_count; ++t) cam[static_cast<std::size_t>(t)] = Homography::translation(-vx * t, -vy * t);
  } else {
    std::array<double, 9> d{};
    d[0] = rng_scene.uniform(-0.04, 0.04);
    d[1] = rng_scene.uniform(-0.04, 0.04);
    d[2] = rng_scene.uniform(-0.12, 0.12);
    d[3] = rng_scene.uniform(-0.04, 0.04);
    d[4] = rng_scene.uniform(-0.04, 0.04);
    d[5] = rng_scene.uniform(-0.12, 0.12);
    d[6] = rng_scene.uniform(-0.06, 0.06);
    d[7] = rng_scene.uniform(-0.06, 0.06);
    d[8] = 0.0;
    for (int t = 0; t < t_count; ++t) {
      double a = static_cast<double>(t) / (t_count - 1);
      Homography h;
      for (int i = 0; i < 9; ++i) h.m[static_cast<std::size_t>(i)] += a * d[static_cast<std::size_t>(i)];
      h.renormalize();
      cam[static_cast<std::size_t>(t)] = h;
    }
  }

  // object and hand in world coordinates
  const std::array<std::array<double, 3>, 4> palette = {{{0.85, 0.12, 0.10},
                                                         {0.10, 0.78, 0.16},
                                                         {0.15, 0.25, 0.85},
                                                         {0.90, 0.84, 0.10}}};
  world.object_color = palette[rng_scene.bounded(4)];
  double half_w = rng_scene.uniform(0.07, 0.12);
  double half_h = rng_scene.uniform(0.07, 0.12);
  Vec2 obj_c{rng_scene.uniform(0.35, 0.65), rng_scene.uniform(0.35, 0.65)};
  world.object = Box{obj_c.x - half_w, obj_c.y - half_h, obj_c.x + half_w, obj_c.y + half_h, false};
  world.hand_radius = 0.07;
  world.wrist_offset = {0.0, 0.8 * world.hand_radius};

  bool has_contact = rng_scene.uniform() >= spec.no_contact_prob;
  int onset = has_contact ? rng_scene.uniform_int(t_count / 4, (2 * t_count) / 3) : -1;
  ContactState cstate = ContactState::NoContact;
  if (has_contact)
    cstate = rng_scene.uniform() < 0.7 ? ContactState::Portable : ContactState::Fixed;

  // hand path: approach from a random edge point toward a stop just inside the box
  double ang = rng_scene.uniform(0.0, 2.0 * M_PI);
  Vec2 start{obj_c.x + 0.42 * std::cos(ang), obj_c.y + 0.42 * std::sin(ang)};
  double stop_in = 0.5 * std::min(half_w, half_h);
  Vec2 target{obj_c.x + stop_in * std::cos(ang), obj_c.y + stop_in * std::sin(ang)};
  world.hand_center.resize(static_cast<std::size_t>(t_count));
  int reach = has_contact ? onset : t_count + 4;  // without contact the hand keeps drifting in
  for (int t = 0; t < t_count; ++t) {
    double a = std::min(1.0, static_cast<double>(t) / reach);
    if (!has_contact) a *= 0.55;  // never gets there
    world.hand_center[static_cast<std::size_t>(t)] = {start.x + a * (target.x - start.x),
                                                      start.y + a * (target.y - start.y)};
  }

  SynthClip clip;
  clip.truth.contact_onset = onset;
  clip.truth.contact_state = cstate;
  clip.truth.motion = to_string(motion);
  clip.truth.adjacent.reserve(static_cast<std::size_t>(t_count - 1));
  for (int t = 0; t + 1 < t_count; ++t)
    clip.truth.adjacent.push_back(Homography::from_mat(
        cam[static_cast<std::size_t>(t + 1)].mat() * cam[static_cast<std::size_t>(t)].mat().inverse()));

  std::vector<MaskRaster> masks(static_cast<std::size_t>(t_count));
  clip.images.resize(static_cast<std::size_t>(t_count));
  clip.truth.wrist.resize(static_cast<std::size_t>(t_count));
  clip.truth.object_box.resize(static_cast<std::size_t>(t_count));

  for (int t = 0; t < t_count; ++t) {
    const Homography& a = cam[static_cast<std::size_t>(t)];
    Homography ainv = inverse(a);
    Image& img = clip.images[static_cast<std::size_t>(t)];
    img = Image(size, size);
    MaskRaster& mask = masks[static_cast<std::size_t>(t)];
    mask.width = size;
    mask.height = size;
    mask.cells.assign(static_cast<std::size_t>(size) * size, 0);
    Vec2 hc = world.hand_center[static_cast<std::size_t>(t)];
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        Vec2 pix{(x + 0.5) / size, (y + 0.5) / size};
        Vec2 w = ainv.apply(pix);
        auto col = detail::scene_color(world, t, w);
        img.at(x, y, 0) = col[0];
        img.at(x, y, 1) = col[1];
        img.at(x, y, 2) = col[2];
        if (dist(w, hc) <= world.hand_radius)
          mask.cells[static_cast<std::size_t>(y) * size + x] = 1;
      }
    clip.truth.wrist[static_cast<std::size_t>(t)] = a.apply(hc + world.wrist_offset);
    clip.truth.object_box[static_cast<std::size_t>(t)] = project_box(a, world.object);
  }

  // contact points: boundary cells of the onset mask inside the object box
  if (has_contact) {
    const MaskRaster& m = masks[static_cast<std::size_t>(onset)];
    const Box& ob = clip.truth.object_box[static_cast<std::size_t>(onset)];
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        if (!m.at(x, y)) continue;
        bool boundary = x == 0 || y == 0 || x == size - 1 || y == size - 1 || !m.at(x - 1, y) ||
                        !m.at(x + 1, y) || !m.at(x, y - 1) || !m.at(x, y + 1);
        if (!boundary) continue;
        Vec2 c{(x + 0.5) / size, (y + 0.5) / size};
        if (ob.contains(c)) clip.truth.contact_points.push_back(c);
      }
  }

  // detections
  clip.frames.resize(static_cast<std::size_t>(t_count));
  for (int t = 0; t < t_count; ++t) {
    FrameDetections& f = clip.frames[static_cast<std::size_t>(t)];
    f.frame_index = t;
    const Homography& a = cam[static_cast<std::size_t>(t)];
    Vec2 hc = world.hand_center[static_cast<std::size_t>(t)];

    // hand box: bound of 16 projected circle points
    double x1 = 1e300, y1 = 1e300, x2 = -1e300, y2 = -1e300;
    for (int i = 0; i < 16; ++i) {
      double th = 2.0 * M_PI * i / 16;
      Vec2 q = a.apply({hc.x + world.hand_radius * std::cos(th), hc.y + world.hand_radius * std::sin(th)});
      x1 = std::min(x1, q.x);
      y1 = std::min(y1, q.y);
      x2 = std::max(x2, q.x);
      y2 = std::max(y2, q.y);
    }
    x1 = std::max(0.0, x1);
    y1 = std::max(0.0, y1);
    x2 = std::min(1.0, x2);
    y2 = std::min(1.0, y2);
    if (x1 < x2 && y1 < y2) f.right.hand_box = Box{x1, y1, x2, y2, false};

    bool in_contact = has_contact && t >= onset;
    f.right.contact_state = in_contact ? cstate : ContactState::NoContact;
    double score = in_contact ? 1.0 : 0.0;
    if (spec.score_jitter_std > 0.0)
      score = std::clamp(score + rng_noise.normal(0.0, spec.score_jitter_std), 0.0, 1.0);
    f.right.contact_score = score;
    bool drop_wrist = spec.detection_dropout > 0.0 && rng_noise.uniform() < spec.detection_dropout;
    if (!drop_wrist) f.right.wrist = clip.truth.wrist[static_cast<std::size_t>(t)];
    if (in_contact && !clip.truth.object_box[static_cast<std::size_t>(t)].is_empty)
      f.right.object_box = clip.truth.object_box[static_cast<std::size_t>(t)];

    bool drop_mask = spec.detection_dropout > 0.0 && rng_noise.uniform() < spec.detection_dropout;
    if (!drop_mask) f.hand_mask = masks[static_cast<std::size_t>(t)];

    if (t + 1 < t_count) {
      const Homography& h = clip.truth.adjacent[static_cast<std::size_t>(t)];
      for (int gy = 0; gy < spec.corr_grid; ++gy)
        for (int gx = 0; gx < spec.corr_grid; ++gx) {
          Vec2 s{0.08 + 0.84 * gx / (spec.corr_grid - 1.0), 0.08 + 0.84 * gy / (spec.corr_grid - 1.0)};
          Vec2 d = h.apply(s);
          if (spec.corr_outlier_frac > 0.0 && rng_noise.uniform() < spec.corr_outlier_frac) {
            d = {rng_noise.uniform(), rng_noise.uniform()};
          } else if (spec.corr_jitter_std > 0.0) {
            d.x += rng_noise.normal(0.0, spec.corr_jitter_std);
            d.y += rng_noise.normal(0.0, spec.corr_jitter_std);
          }
          f.correspondences_to_next.push_back({s, d});
        }
    }
  }
  return clip;
}

inline json truth_to_json(const ClipTruth& t) {
  json j;
  j["contact_onset"] = t.contact_onset;
  j["contact_state"] = to_string(t.contact_state);
  j["motion"] = t.motion;
  json adj = json::array();
  for (const auto& h : t.adjacent) adj.push_back(h.m);
  j["adjacent_homographies"] = adj;
  json wr = json::array();
  for (const auto& w : t.wrist) {
    wr.push_back(w.x);
    wr.push_back(w.y);
  }
  j["wrist"] = wr;
  json boxes = json::array();
  for (const auto& b : t.object_box)
    boxes.push_back(b.is_empty ? json(nullptr) : json::array({b.x1, b.y1, b.x2, b.y2}));
  j["object_box"] = boxes;
  json cp = json::array();
  for (const auto& p : t.contact_points) {
    cp.push_back(p.x);
    cp.push_back(p.y);
  }
  j["contact_points"] = cp;
  return j;
}

inline ClipTruth truth_from_json(const json& j) {
  ClipTruth t;
  t.contact_onset = j.at("contact_onset").get<int>();
  t.contact_state = contact_state_from(j.at("contact_state").get<std::string>());
  t.motion = j.value("motion", std::string("unknown"));
  for (const auto& arr : j.at("adjacent_homographies")) {
    Homography h;
    for (int i = 0; i < 9; ++i) h.m[static_cast<std::size_t>(i)] = arr[static_cast<std::size_t>(i)].get<double>();
    t.adjacent.push_back(h);
  }
  const auto& wr = j.at("wrist");
  for (std::size_t i = 0; i + 1 < wr.size(); i += 2)
    t.wrist.push_back({wr[i].get<double>(), wr[i + 1].get<double>()});
  for (const auto& b : j.at("object_box")) {
    if (b.is_null())
      t.object_box.push_back(Box::empty());
    else
      t.object_box.push_back(Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>(), false});
  }
  const auto& cp = j.at("contact_points");
  for (std::size_t i = 0; i + 1 < cp.size(); i += 2)
    t.contact_points.push_back({cp[i].get<double>(), cp[i + 1].get<double>()});
  return t;
}

inline void write_clip_images(const std::filesystem::path& path, const std::vector<Image>& images) {
  if (images.empty()) throw std::invalid_argument("write_clip_images: no frames");
  Container c;
  TensorEntry t;
  t.name = "frames";
  const int h = images[0].height, w = images[0].width;
  t.dims = {images.size(), static_cast<std::uint64_t>(h), static_cast<std::uint64_t>(w), 3};
  t.data.reserve(images.size() * static_cast<std::size_t>(h) * w * 3);
  for (const auto& img : images) {
    if (img.height != h || img.width != w)
      throw std::invalid_argument("write_clip_images: inconsistent frame sizes");
    for (double v : img.data) t.data.push_back(static_cast<float>(v));
  }
  c.tensors.push_back(std::move(t));
  c.meta = {{"kind", "frames"}, {"count", images.size()}, {"height", h}, {"width", w}};
  write_container(path, c);
}

inline Image read_clip_frame(const ContainerIndex& idx, int frame) {
  const auto& dims = idx.dims("frames");
  if (dims.size() != 4) throw std::runtime_error("frames tensor must be rank 4");
  auto t_count = dims[0];
  int h = static_cast<int>(dims[1]), w = static_cast<int>(dims[2]);
  if (frame < 0 || static_cast<std::uint64_t>(frame) >= t_count)
    throw std::invalid_argument("frame index out of range");
  std::uint64_t per = dims[1] * dims[2] * dims[3];
  auto raw = idx.read_slice("frames", static_cast<std::uint64_t>(frame) * per, per);
  Image img(h, w);
  for (std::size_t i = 0; i < raw.size(); ++i) img.data[i] = static_cast<double>(raw[i]);
  return img;
}

// Corpus on disk: manifest.json + clips/clip_*.jsonl|.images.hrpt|.truth.json
inline json write_corpus(const std::filesystem::path& dir, const SceneSpec& spec, int n_clips,
                         std::uint64_t seed, const std::string& command, double wall_clock_s = 0.0,
                         int threads = 0) {
  if (n_clips < 1) throw std::invalid_argument("write_corpus: n_clips must be >= 1");
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(dir / "clips");

  std::vector<SynthClip> clips(static_cast<std::size_t>(n_clips));
  parallel_for(static_cast<std::size_t>(n_clips), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i)
      clips[i] = make_clip(spec, seed ^ static_cast<std::uint64_t>(i));
  }, threads);

  json clip_entries = json::array();
  std::size_t total_frames = 0;
  for (int i = 0; i < n_clips; ++i) {
    const SynthClip& clip = clips[static_cast<std::size_t>(i)];
    std::string stem = clip_stem(i);
    fs::path det = dir / "clips" / (stem + ".jsonl");
    fs::path img = dir / "clips" / (stem + ".images.hrpt");
    fs::path tru = dir / "clips" / (stem + ".truth.json");
    write_jsonl(det, clip.frames, [](const FrameDetections& f) { return to_json(f); });
    write_clip_images(img, clip.images);
    {
      std::ofstream os(tru, std::ios::trunc);
      if (!os) throw std::runtime_error("cannot write " + tru.string());
      os << truth_to_json(clip.truth).dump(2) << "\n";
    }
    total_frames += clip.frames.size();
    clip_entries.push_back({{"id", i},
                            {"detections", "clips/" + stem + ".jsonl"},
                            {"images", "clips/" + stem + ".images.hrpt"},
                            {"truth", "clips/" + stem + ".truth.json"},
                            {"frames", clip.frames.size()}});
  }

  RunInfo info;
  info.kind = "synth_corpus";
  info.command = command;
  info.config = spec.to_json();
  info.config["clips"] = n_clips;
  info.seed = seed;
  info.wall_clock_s = wall_clock_s;
  json manifest = manifest_base(info);
  manifest["clips"] = clip_entries;
  manifest["counts"] = {{"clips", n_clips}, {"frames", total_frames}};
  write_manifest(dir, manifest);
  return manifest;
}

}  // namespace hrp
