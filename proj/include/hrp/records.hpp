// File: records.hpp
// Description: on-disk record schemas (detections, affordance labels, manifests) and JSONL IO.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hrp/common.hpp"
#include "hrp/geometry.hpp"

namespace hrp {

using json = nlohmann::json;

enum class ContactState { NoContact, SelfContact, Portable, Fixed };

inline std::string to_string(ContactState s) {
  switch (s) {
    case ContactState::NoContact: return "no_contact";
    case ContactState::SelfContact: return "self";
    case ContactState::Portable: return "portable";
    case ContactState::Fixed: return "fixed";
  }
  throw std::logic_error("bad ContactState");
}

inline ContactState contact_state_from(const std::string& s) {
  if (s == "no_contact") return ContactState::NoContact;
  if (s == "self") return ContactState::SelfContact;
  if (s == "portable") return ContactState::Portable;
  if (s == "fixed") return ContactState::Fixed;
  throw std::runtime_error("unknown contact state '" + s + "'");
}

// Per-hand detector output for one frame. Boxes and points use normalized
// image coordinates in [0, 1].
struct HandDetection {
  std::optional<Box> hand_box;
  std::optional<Vec2> wrist;
  ContactState contact_state = ContactState::NoContact;
  double contact_score = 0.0;
  std::optional<Box> object_box;  // box of the object this hand touches, if any
};

// Binary raster mask, row-major, '1' cells belong to the hand.
struct MaskRaster {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> cells;

  bool at(int ix, int iy) const {
    return cells[static_cast<std::size_t>(iy) * width + ix] != 0;
  }
};

struct Correspondence {
  Vec2 src;
  Vec2 dst;
};

struct FrameDetections {
  int frame_index = 0;
  HandDetection left;
  HandDetection right;
  std::optional<MaskRaster> hand_mask;            // raster form
  std::optional<std::vector<Vec2>> hand_polygon;  // polygon form (closed, CCW)
  std::vector<Correspondence> correspondences_to_next;  // empty on the last frame
};

// One training example: frame + hand side + masked label triple.
struct AffordanceRecord {
  int frame_index = 0;
  std::string hand_side;         // "left" or "right"
  std::vector<double> contact;   // 2k flattened sorted GMM means
  std::array<double, 2> hand{};  // future wrist position
  std::array<double, 4> object{};  // active object box, x1 y1 x2 y2
  int m_c = 0;
  int m_h = 0;
  int m_b = 0;
};

namespace detail {

inline json box_to_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

inline Box box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw std::runtime_error("box must be [x1,y1,x2,y2]");
  Box b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>(), false};
  return b;
}

inline json vec2_to_json(const Vec2& v) { return json::array({v.x, v.y}); }

inline Vec2 vec2_from_json(const json& j) {
  if (!j.is_array() || j.size() != 2) throw std::runtime_error("point must be [x,y]");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace detail

inline json to_json(const HandDetection& h) {
  json j;
  j["hand_box"] = h.hand_box ? detail::box_to_json(*h.hand_box) : json(nullptr);
  j["wrist"] = h.wrist ? detail::vec2_to_json(*h.wrist) : json(nullptr);
  j["contact_state"] = to_string(h.contact_state);
  j["contact_score"] = h.contact_score;
  j["object_box"] = h.object_box ? detail::box_to_json(*h.object_box) : json(nullptr);
  return j;
}

inline HandDetection hand_detection_from(const json& j) {
  HandDetection h;
  if (j.contains("hand_box") && !j["hand_box"].is_null()) h.hand_box = detail::box_from_json(j["hand_box"]);
  if (j.contains("wrist") && !j["wrist"].is_null()) h.wrist = detail::vec2_from_json(j["wrist"]);
  h.contact_state = contact_state_from(j.value("contact_state", std::string("no_contact")));
  h.contact_score = j.value("contact_score", 0.0);
  if (j.contains("object_box") && !j["object_box"].is_null())
    h.object_box = detail::box_from_json(j["object_box"]);
  return h;
}

inline json to_json(const FrameDetections& f) {
  json j;
  j["frame_index"] = f.frame_index;
  j["left"] = to_json(f.left);
  j["right"] = to_json(f.right);
  if (f.hand_mask) {
    json rows = json::array();
    for (int y = 0; y < f.hand_mask->height; ++y) {
      std::string row(static_cast<std::size_t>(f.hand_mask->width), '0');
      for (int x = 0; x < f.hand_mask->width; ++x)
        if (f.hand_mask->at(x, y)) row[static_cast<std::size_t>(x)] = '1';
      rows.push_back(row);
    }
    j["hand_mask"] = {{"width", f.hand_mask->width}, {"height", f.hand_mask->height}, {"rows", rows}};
  } else {
    j["hand_mask"] = nullptr;
  }
  if (f.hand_polygon) {
    json poly = json::array();
    for (const auto& p : *f.hand_polygon) {
      poly.push_back(p.x);
      poly.push_back(p.y);
    }
    j["hand_polygon"] = poly;
  } else {
    j["hand_polygon"] = nullptr;
  }
  json corr = json::array();
  for (const auto& c : f.correspondences_to_next) {
    corr.push_back(c.src.x);
    corr.push_back(c.src.y);
    corr.push_back(c.dst.x);
    corr.push_back(c.dst.y);
  }
  j["correspondences_to_next"] = corr;
  return j;
}

inline FrameDetections frame_detections_from(const json& j) {
  FrameDetections f;
  f.frame_index = j.at("frame_index").get<int>();
  f.left = hand_detection_from(j.at("left"));
  f.right = hand_detection_from(j.at("right"));
  if (j.contains("hand_mask") && !j["hand_mask"].is_null()) {
    const json& m = j["hand_mask"];
    MaskRaster r;
    r.width = m.at("width").get<int>();
    r.height = m.at("height").get<int>();
    if (r.width <= 0 || r.height <= 0) throw std::runtime_error("hand_mask: bad dimensions");
    r.cells.assign(static_cast<std::size_t>(r.width) * r.height, 0);
    const json& rows = m.at("rows");
    if (static_cast<int>(rows.size()) != r.height) throw std::runtime_error("hand_mask: row count mismatch");
    for (int y = 0; y < r.height; ++y) {
      const std::string row = rows[static_cast<std::size_t>(y)].get<std::string>();
      if (static_cast<int>(row.size()) != r.width) throw std::runtime_error("hand_mask: row width mismatch");
      for (int x = 0; x < r.width; ++x)
        r.cells[static_cast<std::size_t>(y) * r.width + x] = row[static_cast<std::size_t>(x)] == '1' ? 1 : 0;
    }
    f.hand_mask = std::move(r);
  }
  if (j.contains("hand_polygon") && !j["hand_polygon"].is_null()) {
    const json& poly = j["hand_polygon"];
    if (poly.size() % 2 != 0) throw std::runtime_error("hand_polygon: odd coordinate count");
    std::vector<Vec2> pts;
    for (std::size_t i = 0; i + 1 < poly.size(); i += 2)
      pts.push_back({poly[i].get<double>(), poly[i + 1].get<double>()});
    f.hand_polygon = std::move(pts);
  }
  if (j.contains("correspondences_to_next") && !j["correspondences_to_next"].is_null()) {
    const json& corr = j["correspondences_to_next"];
    if (corr.size() % 4 != 0) throw std::runtime_error("correspondences_to_next: length must be a multiple of 4");
    for (std::size_t i = 0; i + 3 < corr.size(); i += 4)
      f.correspondences_to_next.push_back(
          {{corr[i].get<double>(), corr[i + 1].get<double>()},
           {corr[i + 2].get<double>(), corr[i + 3].get<double>()}});
  }
  return f;
}

inline json to_json(const AffordanceRecord& r) {
  json j;
  j["frame_index"] = r.frame_index;
  j["hand_side"] = r.hand_side;
  j["contact"] = r.contact;
  j["hand"] = json::array({r.hand[0], r.hand[1]});
  j["object"] = json::array({r.object[0], r.object[1], r.object[2], r.object[3]});
  j["m_c"] = r.m_c;
  j["m_h"] = r.m_h;
  j["m_b"] = r.m_b;
  return j;
}

inline AffordanceRecord affordance_record_from(const json& j) {
  AffordanceRecord r;
  r.frame_index = j.at("frame_index").get<int>();
  r.hand_side = j.at("hand_side").get<std::string>();
  r.contact = j.at("contact").get<std::vector<double>>();
  auto h = j.at("hand");
  r.hand = {h[0].get<double>(), h[1].get<double>()};
  auto b = j.at("object");
  r.object = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
  r.m_c = j.at("m_c").get<int>();
  r.m_h = j.at("m_h").get<int>();
  r.m_b = j.at("m_b").get<int>();
  if (r.m_c != 0 && r.m_c != 1) throw std::runtime_error("affordance record: m_c must be 0 or 1");
  if (r.m_h != 0 && r.m_h != 1) throw std::runtime_error("affordance record: m_h must be 0 or 1");
  if (r.m_b != 0 && r.m_b != 1) throw std::runtime_error("affordance record: m_b must be 0 or 1");
  return r;
}

// JSONL file helpers. parse_line converts one json object; errors carry the
// path and 1-based line number.
template <class T>
std::vector<T> read_jsonl(const std::filesystem::path& path,
                          T (*parse)(const json&)) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<T> out;
  std::string line;
  int ln = 0;
  while (std::getline(is, line)) {
    ++ln;
    if (line.empty()) continue;
    try {
      out.push_back(parse(json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(ln) + ": " + e.what());
    }
  }
  return out;
}

template <class T, class F>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& items, F&& to_j) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for write " + path.string());
  for (const auto& item : items) os << to_j(item).dump() << "\n";
  if (!os) throw std::runtime_error("write failed " + path.string());
}

inline std::vector<FrameDetections> read_detections(const std::filesystem::path& p) {
  return read_jsonl<FrameDetections>(p, &frame_detections_from);
}

inline std::vector<AffordanceRecord> read_affordance_records(const std::filesystem::path& p) {
  return read_jsonl<AffordanceRecord>(p, &affordance_record_from);
}

// Every artifact directory carries a manifest.json built around this block:
// the command line, a config snapshot, seeds, referenced paths, tool version
// and wall clock. Re-runs must reproduce every byte except wall_clock_s.
struct RunInfo {
  std::string kind;
  std::string command;
  json config = json::object();
  std::uint64_t seed = 0;
  double wall_clock_s = 0.0;
};

inline json manifest_base(const RunInfo& info) {
  json j;
  j["kind"] = info.kind;
  j["version"] = kVersion;
  j["command"] = info.command;
  j["config"] = info.config;
  j["seed"] = info.seed;
  j["wall_clock_s"] = info.wall_clock_s;
  return j;
}

inline void write_manifest(const std::filesystem::path& dir, const json& manifest) {
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write manifest in " + dir.string());
  os << manifest.dump(2) << "\n";
}

inline json read_manifest(const std::filesystem::path& dir) {
  std::filesystem::path p = dir / "manifest.json";
  std::ifstream is(p);
  if (!is) throw std::runtime_error("cannot open " + p.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(p.string() + ": " + e.what());
  }
}

inline std::string clip_stem(int id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "clip_%05d", id);
  return buf;
}

inline std::string traj_stem(int id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "traj_%05d", id);
  return buf;
}

}  // namespace hrp
