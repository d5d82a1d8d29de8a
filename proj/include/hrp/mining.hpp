// File: mining.hpp
// Description: turns detector streams into affordance training records:
// camera motion from correspondences, contact onset from smoothed scores,
// contact points from the hand mask boundary, and labels transported across
// frames through chained homographies.
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "hrp/common.hpp"
#include "hrp/geometry.hpp"
#include "hrp/gmm.hpp"
#include "hrp/numerics.hpp"
#include "hrp/records.hpp"

namespace hrp {

struct MiningConfig {
  int gmm_modes = 5;
  int wrist_horizon = 30;
  double contact_threshold = 0.5;
  int polygon_raster = 64;  // raster size when only a polygon mask is present
  std::string hand_mode = "right_then_left";  // or "both"
  SavGolConfig smoothing;
  RansacConfig ransac;
  EmConfig em;
  std::uint64_t seed = 0;

  void validate() const {
    if (gmm_modes < 1) throw std::invalid_argument("mining: gmm_modes must be >= 1");
    if (wrist_horizon < 1) throw std::invalid_argument("mining: wrist_horizon must be >= 1");
    if (contact_threshold <= 0.0 || contact_threshold >= 1.0)
      throw std::invalid_argument("mining: contact_threshold must be in (0, 1)");
    if (polygon_raster < 8) throw std::invalid_argument("mining: polygon_raster must be >= 8");
    if (hand_mode != "right_then_left" && hand_mode != "both")
      throw std::invalid_argument("mining: hand_mode must be right_then_left or both");
  }

  json to_json() const {
    return {{"gmm_modes", gmm_modes},
            {"wrist_horizon", wrist_horizon},
            {"contact_threshold", contact_threshold},
            {"polygon_raster", polygon_raster},
            {"hand_mode", hand_mode},
            {"savgol_window", smoothing.window_length},
            {"savgol_order", smoothing.poly_order},
            {"ransac_threshold", ransac.inlier_threshold},
            {"ransac_max_iterations", ransac.max_iterations},
            {"ransac_min_inlier_fraction", ransac.min_inlier_fraction},
            {"em_max_iterations", em.max_iterations},
            {"em_tolerance", em.tol},
            {"em_variance_floor", em.variance_floor},
            {"seed", seed}};
  }

  static MiningConfig from_json(const json& j) {
    MiningConfig c;
    c.gmm_modes = j.value("gmm_modes", c.gmm_modes);
    c.wrist_horizon = j.value("wrist_horizon", c.wrist_horizon);
    c.contact_threshold = j.value("contact_threshold", c.contact_threshold);
    c.polygon_raster = j.value("polygon_raster", c.polygon_raster);
    c.hand_mode = j.value("hand_mode", c.hand_mode);
    c.smoothing.window_length = j.value("savgol_window", c.smoothing.window_length);
    c.smoothing.poly_order = j.value("savgol_order", c.smoothing.poly_order);
    c.ransac.inlier_threshold = j.value("ransac_threshold", c.ransac.inlier_threshold);
    c.ransac.max_iterations = j.value("ransac_max_iterations", c.ransac.max_iterations);
    c.ransac.min_inlier_fraction = j.value("ransac_min_inlier_fraction", c.ransac.min_inlier_fraction);
    c.em.max_iterations = j.value("em_max_iterations", c.em.max_iterations);
    c.em.tol = j.value("em_tolerance", c.em.tol);
    c.em.variance_floor = j.value("em_variance_floor", c.em.variance_floor);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }
};

struct ClipLabels {
  std::vector<AffordanceRecord> records;
  std::optional<int> onset;
  std::string hand_side;
  std::vector<std::optional<Homography>> adjacent;  // estimated, [T-1]
  int failed_links = 0;
  std::size_t contact_point_count = 0;
};

inline const HandDetection& hand_of(const FrameDetections& f, const std::string& side) {
  return side == "left" ? f.left : f.right;
}

// Even-odd rasterization at cell centers.
inline MaskRaster rasterize_polygon(const std::vector<Vec2>& poly, int width, int height) {
  if (poly.size() < 3) throw std::invalid_argument("rasterize_polygon: need >= 3 vertices");
  MaskRaster m;
  m.width = width;
  m.height = height;
  m.cells.assign(static_cast<std::size_t>(width) * height, 0);
  for (int iy = 0; iy < height; ++iy)
    for (int ix = 0; ix < width; ++ix) {
      double cx = (ix + 0.5) / width, cy = (iy + 0.5) / height;
      bool inside = false;
      for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const Vec2& a = poly[i];
        const Vec2& b = poly[j];
        if ((a.y > cy) != (b.y > cy) && cx < (b.x - a.x) * (cy - a.y) / (b.y - a.y) + a.x)
          inside = !inside;
      }
      if (inside) m.cells[static_cast<std::size_t>(iy) * width + ix] = 1;
    }
  return m;
}

// Boundary cells of the mask (edge of raster or any empty 4-neighbor) whose
// centers fall inside the box, both inclusive.
inline std::vector<Vec2> boundary_points_in_box(const MaskRaster& m, const Box& box) {
  std::vector<Vec2> pts;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(x, y)) continue;
      bool boundary = x == 0 || y == 0 || x == m.width - 1 || y == m.height - 1 ||
                      !m.at(x - 1, y) || !m.at(x + 1, y) || !m.at(x, y - 1) || !m.at(x, y + 1);
      if (!boundary) continue;
      Vec2 c{(x + 0.5) / m.width, (y + 0.5) / m.height};
      if (box.contains(c)) pts.push_back(c);
    }
  return pts;
}

inline std::optional<MaskRaster> frame_mask(const FrameDetections& f, int polygon_raster) {
  if (f.hand_mask) return f.hand_mask;
  if (f.hand_polygon && f.hand_polygon->size() >= 3)
    return rasterize_polygon(*f.hand_polygon, polygon_raster, polygon_raster);
  return std::nullopt;
}

// Per-link camera motion from correspondences. A link without enough matches
// or with a failed consensus stays empty; labels crossing it are masked out.
inline std::vector<std::optional<Homography>> estimate_clip_homographies(
    const std::vector<FrameDetections>& frames, const RansacConfig& cfg, std::uint64_t clip_seed) {
  std::vector<std::optional<Homography>> out;
  if (frames.empty()) return out;
  out.resize(frames.size() - 1);
  std::uint64_t base = derive_seed(clip_seed, 0xA11CE);
  for (std::size_t t = 0; t + 1 < frames.size(); ++t) {
    const auto& corr = frames[t].correspondences_to_next;
    if (corr.size() < 4) continue;
    std::vector<PointMatch> matches;
    matches.reserve(corr.size());
    for (const auto& c : corr) matches.push_back({c.src, c.dst});
    RansacConfig link = cfg;
    link.seed = derive_seed(base, static_cast<std::uint64_t>(t));
    try {
      out[t] = estimate_ransac(matches, link).h;
    } catch (const std::exception&) {
      // leave the link empty
    }
  }
  return out;
}

// Composition of adjacent links mapping coordinates of frame `from` into
// frame `to`. Empty when any needed link is missing.
inline std::optional<Homography> chain_homography(
    const std::vector<std::optional<Homography>>& adjacent, int from, int to) {
  if (from == to) return Homography::identity();
  int lo = std::min(from, to), hi = std::max(from, to);
  if (lo < 0 || static_cast<std::size_t>(hi) > adjacent.size()) return std::nullopt;
  Homography h = Homography::identity();
  for (int t = lo; t < hi; ++t) {
    if (!adjacent[static_cast<std::size_t>(t)]) return std::nullopt;
    h = compose(h, *adjacent[static_cast<std::size_t>(t)]);
  }
  if (from < to) return h;
  try {
    return inverse(h);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

inline std::vector<double> smooth_contact_scores(const std::vector<FrameDetections>& frames,
                                                 const std::string& side,
                                                 const SavGolConfig& cfg) {
  std::vector<double> scores;
  scores.reserve(frames.size());
  for (const auto& f : frames) scores.push_back(hand_of(f, side).contact_score);
  if (scores.size() < static_cast<std::size_t>(cfg.window_length)) return scores;
  return savgol_smooth(scores, cfg);
}

// First frame whose smoothed score clears the threshold while the raw state
// reports an object in hand.
inline std::optional<int> find_first_contact(const std::vector<FrameDetections>& frames,
                                             const std::string& side,
                                             const MiningConfig& cfg) {
  auto smoothed = smooth_contact_scores(frames, side, cfg.smoothing);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    ContactState s = hand_of(frames[t], side).contact_state;
    bool object_state = s == ContactState::Portable || s == ContactState::Fixed;
    if (object_state && smoothed[t] >= cfg.contact_threshold) return static_cast<int>(t);
  }
  return std::nullopt;
}

inline std::vector<Vec2> extract_contact_points(const FrameDetections& frame,
                                                const std::string& side, int polygon_raster) {
  const HandDetection& h = hand_of(frame, side);
  if (!h.object_box || h.object_box->is_empty) return {};
  auto mask = frame_mask(frame, polygon_raster);
  if (!mask) return {};
  return boundary_points_in_box(*mask, *h.object_box);
}

// Labels one clip. Contact and object labels exist for frames up to and
// including the side's onset; hand labels exist wherever a future wrist
// detection can be transported back. Records that carry no usable label are
// dropped. hand_mode both labels every side that ever shows a wrist.
inline ClipLabels label_clip(const std::vector<FrameDetections>& frames, const MiningConfig& cfg,
                             std::uint64_t clip_seed) {
  cfg.validate();
  ClipLabels out;
  if (frames.empty()) return out;
  const int t_count = static_cast<int>(frames.size());

  bool right_has_wrist = false, left_has_wrist = false;
  for (const auto& f : frames) {
    right_has_wrist = right_has_wrist || f.right.wrist.has_value();
    left_has_wrist = left_has_wrist || f.left.wrist.has_value();
  }
  std::vector<std::string> sides;
  if (cfg.hand_mode == "both") {
    if (right_has_wrist) sides.push_back("right");
    if (left_has_wrist) sides.push_back("left");
    if (sides.empty()) sides.push_back("right");
  } else {
    sides.push_back((right_has_wrist || !left_has_wrist) ? "right" : "left");
  }
  out.hand_side = sides[0];
  for (std::size_t i = 1; i < sides.size(); ++i) out.hand_side += "+" + sides[i];

  out.adjacent = estimate_clip_homographies(frames, cfg.ransac, clip_seed);
  for (const auto& h : out.adjacent)
    if (!h) ++out.failed_links;

  struct SideWork {
    std::string side;
    std::optional<int> onset;
    std::vector<Vec2> contact_pts;
  };
  std::vector<SideWork> work;
  for (const auto& side : sides) {
    SideWork w;
    w.side = side;
    w.onset = find_first_contact(frames, side, cfg);
    if (w.onset)
      w.contact_pts = extract_contact_points(frames[static_cast<std::size_t>(*w.onset)], side,
                                             cfg.polygon_raster);
    out.contact_point_count += w.contact_pts.size();
    work.push_back(std::move(w));
  }
  out.onset = work[0].onset;
  std::uint64_t gmm_seed = derive_seed(clip_seed, 0x6132);

  for (int t = 0; t < t_count; ++t) {
    for (const SideWork& w : work) {
      AffordanceRecord r;
      r.frame_index = t;
      r.hand_side = w.side;
      r.contact.assign(static_cast<std::size_t>(2 * cfg.gmm_modes), 0.0);

      int u = std::min(t + cfg.wrist_horizon, t_count - 1);
      const auto& wrist_u = hand_of(frames[static_cast<std::size_t>(u)], w.side).wrist;
      if (wrist_u) {
        auto h_ut = chain_homography(out.adjacent, u, t);
        if (h_ut) {
          Vec2 p = h_ut->apply(*wrist_u);
          r.hand = {p.x, p.y};
          r.m_h = 1;
        }
      }

      if (w.onset && t <= *w.onset) {
        int j = *w.onset;
        auto h_jt = chain_homography(out.adjacent, j, t);
        if (h_jt) {
          if (!w.contact_pts.empty()) {
            std::vector<double> flat;
            flat.reserve(w.contact_pts.size() * 2);
            for (const auto& p : w.contact_pts) {
              Vec2 q = h_jt->apply(p);
              flat.push_back(q.x);
              flat.push_back(q.y);
            }
            EmConfig em = cfg.em;
            em.seed = gmm_seed;
            auto fit = fit_em(flat, w.contact_pts.size(), 2, cfg.gmm_modes, em);
            r.contact = sorted_means(fit.model);
            r.m_c = 1;
          }
          const auto& box_j = hand_of(frames[static_cast<std::size_t>(j)], w.side).object_box;
          if (box_j && !box_j->is_empty) {
            Box b = project_box(*h_jt, *box_j);
            if (!b.is_empty) {
              r.object = {b.x1, b.y1, b.x2, b.y2};
              r.m_b = 1;
            }
          }
        }
      }

      if (r.m_c + r.m_h + r.m_b > 0) out.records.push_back(std::move(r));
    }
  }
  return out;
}

// Mines a full corpus directory. Emits records/clip_*.jsonl next to a
// manifest that keeps pointing at the source image containers.
inline json mine_corpus(const std::filesystem::path& corpus_dir,
                        const std::filesystem::path& out_dir, const MiningConfig& cfg,
                        const std::string& command, double wall_clock_s = 0.0) {
  cfg.validate();
  json src = read_manifest(corpus_dir);
  if (!src.contains("clips")) throw std::runtime_error("corpus manifest has no clips");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "records");

  json clip_entries = json::array();
  std::size_t total_records = 0, with_contact = 0;
  for (const auto& entry : src["clips"]) {
    int id = entry.at("id").get<int>();
    auto frames = read_detections(corpus_dir / entry.at("detections").get<std::string>());
    std::uint64_t clip_seed = cfg.seed ^ static_cast<std::uint64_t>(id);
    ClipLabels labels = label_clip(frames, cfg, clip_seed);
    std::string stem = clip_stem(id);
    fs::path rec = out_dir / "records" / (stem + ".jsonl");
    write_jsonl(rec, labels.records, [](const AffordanceRecord& r) { return to_json(r); });
    total_records += labels.records.size();
    if (labels.onset) ++with_contact;
    clip_entries.push_back(
        {{"id", id},
         {"records", "records/" + stem + ".jsonl"},
         {"images", (fs::path(corpus_dir) / entry.at("images").get<std::string>()).lexically_normal().string()},
         {"frames", entry.value("frames", 0)},
         {"onset", labels.onset ? json(*labels.onset) : json(nullptr)},
         {"hand_side", labels.hand_side},
         {"failed_links", labels.failed_links},
         {"contact_points", labels.contact_point_count}});
  }

  RunInfo info;
  info.kind = "mined_labels";
  info.command = command;
  info.config = cfg.to_json();
  info.config["source_corpus"] = fs::path(corpus_dir).lexically_normal().string();
  info.seed = cfg.seed;
  info.wall_clock_s = wall_clock_s;
  json manifest = manifest_base(info);
  manifest["clips"] = clip_entries;
  manifest["counts"] = {{"clips", clip_entries.size()},
                        {"records", total_records},
                        {"clips_with_contact", with_contact}};
  write_manifest(out_dir, manifest);
  return manifest;
}

}  // namespace hrp
