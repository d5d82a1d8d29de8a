// File: test_synthdata.cpp
// Description: checks for the synthetic clip generator: ground-truth motion
// consistency, contact structure, noise knobs, and corpus round trips.
#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>
#include <set>

#include "hrp/synthdata.hpp"

using namespace hrp;

namespace {

SceneSpec base_spec(CameraMotion m) {
  SceneSpec s;
  s.image_size = 64;
  s.n_frames = 24;
  s.motion = m;
  return s;
}

double sample_nearest(const Image& img, Vec2 u, int c) {
  int ix = std::clamp(static_cast<int>(std::floor(u.x * img.width)), 0, img.width - 1);
  int iy = std::clamp(static_cast<int>(std::floor(u.y * img.height)), 0, img.height - 1);
  return img.at(ix, iy, c);
}

std::filesystem::path temp_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("hrp_synth_" + tag);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("clip generation is deterministic") {
  auto spec = base_spec(CameraMotion::Mixed);
  SynthClip a = make_clip(spec, 1234);
  SynthClip b = make_clip(spec, 1234);
  REQUIRE(a.frames.size() == b.frames.size());
  for (std::size_t i = 0; i < a.frames.size(); ++i)
    REQUIRE(to_json(a.frames[i]).dump() == to_json(b.frames[i]).dump());
  REQUIRE(truth_to_json(a.truth).dump() == truth_to_json(b.truth).dump());
  for (std::size_t i = 0; i < a.images.size(); ++i) REQUIRE(a.images[i].data == b.images[i].data);
  SynthClip c = make_clip(spec, 1235);
  REQUIRE(truth_to_json(a.truth).dump() != truth_to_json(c.truth).dump());
}

TEST_CASE("static motion yields identity homographies") {
  SynthClip clip = make_clip(base_spec(CameraMotion::Static), 7);
  REQUIRE(clip.truth.motion == "static");
  for (const auto& h : clip.truth.adjacent)
    for (int i = 0; i < 9; ++i)
      REQUIRE(h.m[static_cast<std::size_t>(i)] == Catch::Approx(Homography::identity().m[static_cast<std::size_t>(i)]).margin(1e-15));
  for (std::size_t t = 1; t < clip.truth.object_box.size(); ++t) {
    REQUIRE(clip.truth.object_box[t].x1 == Catch::Approx(clip.truth.object_box[0].x1).margin(1e-15));
    REQUIRE(clip.truth.object_box[t].y2 == Catch::Approx(clip.truth.object_box[0].y2).margin(1e-15));
  }
}

TEST_CASE("linear motion has constant translation homographies consistent with boxes") {
  SynthClip clip = make_clip(base_spec(CameraMotion::Linear), 21);
  REQUIRE(clip.truth.motion == "linear");
  const auto& first = clip.truth.adjacent.front();
  REQUIRE(first.m[0] == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(first.m[1] == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(first.m[3] == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(first.m[4] == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(first.m[6] == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(first.m[7] == Catch::Approx(0.0).margin(1e-12));
  for (const auto& h : clip.truth.adjacent)
    for (int i = 0; i < 9; ++i)
      REQUIRE(h.m[static_cast<std::size_t>(i)] == Catch::Approx(first.m[static_cast<std::size_t>(i)]).margin(1e-12));
  // the object is static in the world, so its box rides the camera translation
  for (std::size_t t = 0; t + 1 < clip.truth.object_box.size(); ++t) {
    const Box& a = clip.truth.object_box[t];
    const Box& b = clip.truth.object_box[t + 1];
    REQUIRE(b.x1 - a.x1 == Catch::Approx(first.m[2]).margin(1e-9));
    REQUIRE(b.y1 - a.y1 == Catch::Approx(first.m[5]).margin(1e-9));
  }
}

TEST_CASE("noiseless correspondences satisfy the ground-truth homography exactly") {
  for (auto motion : {CameraMotion::Linear, CameraMotion::Projective}) {
    SynthClip clip = make_clip(base_spec(motion), 99);
    for (std::size_t t = 0; t + 1 < clip.frames.size(); ++t) {
      const auto& h = clip.truth.adjacent[t];
      REQUIRE(clip.frames[t].correspondences_to_next.size() == 36);
      for (const auto& m : clip.frames[t].correspondences_to_next) {
        Vec2 p = h.apply(m.src);
        REQUIRE(dist(p, m.dst) < 1e-12);
      }
    }
  }
}

TEST_CASE("correspondence error grows monotonically with the jitter knob") {
  double means[3];
  const double stds[3] = {0.0, 0.003, 0.015};
  for (int k = 0; k < 3; ++k) {
    auto spec = base_spec(CameraMotion::Projective);
    spec.corr_jitter_std = stds[k];
    SynthClip clip = make_clip(spec, 4242);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t t = 0; t + 1 < clip.frames.size(); ++t)
      for (const auto& m : clip.frames[t].correspondences_to_next) {
        sum += dist(clip.truth.adjacent[t].apply(m.src), m.dst);
        ++n;
      }
    means[k] = sum / static_cast<double>(n);
  }
  REQUIRE(means[0] < 1e-12);
  REQUIRE(means[1] > 1e-4);
  REQUIRE(means[1] < means[2]);
  REQUIRE(means[2] < 0.05);
}

TEST_CASE("rendered frames move consistently with the adjacent homographies") {
  for (auto motion : {CameraMotion::Linear, CameraMotion::Projective}) {
    SynthClip clip = make_clip(base_spec(motion), 311);
    std::size_t ok = 0, total = 0;
    for (std::size_t t = 0; t + 1 < clip.frames.size(); t += 4) {
      const auto& h = clip.truth.adjacent[t];
      for (int gy = 0; gy < 14; ++gy)
        for (int gx = 0; gx < 14; ++gx) {
          Vec2 u{0.2 + 0.6 * gx / 13.0, 0.2 + 0.6 * gy / 13.0};
          Vec2 v = h.apply(u);
          if (v.x < 0.01 || v.x > 0.99 || v.y < 0.01 || v.y > 0.99) continue;
          ++total;
          double diff = 0.0;
          for (int c = 0; c < 3; ++c)
            diff = std::max(diff, std::abs(sample_nearest(clip.images[t], u, c) -
                                           sample_nearest(clip.images[t + 1], v, c)));
          if (diff < 0.02) ++ok;
        }
    }
    REQUIRE(total > 300);
    REQUIRE(static_cast<double>(ok) / static_cast<double>(total) > 0.85);
  }
}

TEST_CASE("contact clips expose onset, scores, states and boundary contact points") {
  auto spec = base_spec(CameraMotion::Linear);
  spec.n_frames = 32;
  SynthClip clip = make_clip(spec, 5150);
  int onset = clip.truth.contact_onset;
  REQUIRE(onset >= spec.n_frames / 4);
  REQUIRE(onset <= 2 * spec.n_frames / 3);
  REQUIRE((clip.truth.contact_state == ContactState::Portable ||
           clip.truth.contact_state == ContactState::Fixed));
  for (int t = 0; t < spec.n_frames; ++t) {
    const auto& r = clip.frames[static_cast<std::size_t>(t)].right;
    if (t < onset) {
      REQUIRE(r.contact_state == ContactState::NoContact);
      REQUIRE(r.contact_score == 0.0);
      REQUIRE_FALSE(r.object_box.has_value());
    } else {
      REQUIRE(r.contact_state == clip.truth.contact_state);
      REQUIRE(r.contact_score == 1.0);
      REQUIRE(r.object_box.has_value());
    }
    REQUIRE(r.wrist.has_value());
    REQUIRE(r.hand_box.has_value());
    REQUIRE(r.hand_box->contains(*r.wrist));
    REQUIRE(dist(*r.wrist, clip.truth.wrist[static_cast<std::size_t>(t)]) < 1e-15);
  }

  // independent recomputation of contact points from the emitted artifacts
  const MaskRaster& m = *clip.frames[static_cast<std::size_t>(onset)].hand_mask;
  const Box& ob = clip.truth.object_box[static_cast<std::size_t>(onset)];
  std::set<std::pair<double, double>> expect;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(x, y)) continue;
      bool boundary = x == 0 || y == 0 || x == m.width - 1 || y == m.height - 1 ||
                      !m.at(x - 1, y) || !m.at(x + 1, y) || !m.at(x, y - 1) || !m.at(x, y + 1);
      if (!boundary) continue;
      double cx = (x + 0.5) / m.width, cy = (y + 0.5) / m.height;
      if (ob.contains({cx, cy})) expect.insert({cx, cy});
    }
  REQUIRE(expect.size() >= 5);
  std::set<std::pair<double, double>> got;
  for (const auto& p : clip.truth.contact_points) got.insert({p.x, p.y});
  REQUIRE(got == expect);
}

TEST_CASE("mask raster matches hand-colored pixels") {
  SynthClip clip = make_clip(base_spec(CameraMotion::Projective), 808);
  for (std::size_t t = 0; t < clip.frames.size(); t += 7) {
    const MaskRaster& m = *clip.frames[t].hand_mask;
    const Image& img = clip.images[t];
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width; ++x) {
        if (!m.at(x, y)) continue;
        bool hand_col = std::abs(img.at(x, y, 0) - 0.92) < 1e-9 &&
                        std::abs(img.at(x, y, 1) - 0.90) < 1e-9;
        bool wrist_col = std::abs(img.at(x, y, 0) - 0.35) < 1e-9;
        REQUIRE((hand_col || wrist_col));
      }
  }
}

TEST_CASE("no-contact clips never report contact") {
  auto spec = base_spec(CameraMotion::Linear);
  spec.no_contact_prob = 1.0;
  SynthClip clip = make_clip(spec, 60);
  REQUIRE(clip.truth.contact_onset == -1);
  REQUIRE(clip.truth.contact_points.empty());
  for (const auto& f : clip.frames) {
    REQUIRE(f.right.contact_state == ContactState::NoContact);
    REQUIRE(f.right.contact_score == 0.0);
    REQUIRE_FALSE(f.right.object_box.has_value());
  }
}

TEST_CASE("detection dropout removes wrists and masks but leaves truth intact") {
  auto spec = base_spec(CameraMotion::Static);
  spec.n_frames = 40;
  spec.detection_dropout = 0.35;
  SynthClip clip = make_clip(spec, 17);
  int missing_wrist = 0, missing_mask = 0;
  for (const auto& f : clip.frames) {
    if (!f.right.wrist.has_value()) ++missing_wrist;
    if (!f.hand_mask.has_value()) ++missing_mask;
  }
  REQUIRE(missing_wrist > 0);
  REQUIRE(missing_mask > 0);
  REQUIRE(clip.truth.wrist.size() == 40);
  for (const auto& w : clip.truth.wrist) {
    REQUIRE(std::isfinite(w.x));
    REQUIRE(std::isfinite(w.y));
  }
}

TEST_CASE("score jitter perturbs scores within bounds") {
  auto spec = base_spec(CameraMotion::Static);
  spec.score_jitter_std = 0.08;
  SynthClip clip = make_clip(spec, 33);
  bool any_off = false;
  for (const auto& f : clip.frames) {
    REQUIRE(f.right.contact_score >= 0.0);
    REQUIRE(f.right.contact_score <= 1.0);
    if (f.right.contact_score != 0.0 && f.right.contact_score != 1.0) any_off = true;
  }
  REQUIRE(any_off);
}

TEST_CASE("corpus writes manifest, detections, truth and frame container") {
  auto dir = temp_dir("corpus");
  auto spec = base_spec(CameraMotion::Mixed);
  spec.n_frames = 12;
  json manifest = write_corpus(dir, spec, 3, 900, "unit-test");
  REQUIRE(manifest["kind"] == "synth_corpus");
  REQUIRE(manifest["counts"]["clips"] == 3);
  REQUIRE(manifest["counts"]["frames"] == 36);
  json loaded = read_manifest(dir);
  REQUIRE(loaded["seed"] == 900);
  REQUIRE(loaded["clips"].size() == 3);

  for (int i = 0; i < 3; ++i) {
    SynthClip ref = make_clip(spec, 900 ^ static_cast<std::uint64_t>(i));
    auto det_path = dir / loaded["clips"][static_cast<std::size_t>(i)]["detections"].get<std::string>();
    auto frames = read_detections(det_path);
    REQUIRE(frames.size() == ref.frames.size());
    for (std::size_t t = 0; t < frames.size(); ++t)
      REQUIRE(to_json(frames[t]).dump() == to_json(ref.frames[t]).dump());

    std::ifstream ts(dir / loaded["clips"][static_cast<std::size_t>(i)]["truth"].get<std::string>());
    json tj = json::parse(ts);
    ClipTruth truth = truth_from_json(tj);
    REQUIRE(truth_to_json(truth).dump() == truth_to_json(ref.truth).dump());

    ContainerIndex idx(dir / loaded["clips"][static_cast<std::size_t>(i)]["images"].get<std::string>());
    REQUIRE(idx.dims("frames")[0] == ref.images.size());
    Image f5 = read_clip_frame(idx, 5);
    for (std::size_t p = 0; p < f5.data.size(); ++p)
      REQUIRE(static_cast<float>(f5.data[p]) == static_cast<float>(ref.images[5].data[p]));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("corpus writes are byte-deterministic") {
  auto d1 = temp_dir("det_a");
  auto d2 = temp_dir("det_b");
  auto spec = base_spec(CameraMotion::Mixed);
  spec.n_frames = 10;
  spec.corr_jitter_std = 0.002;
  write_corpus(d1, spec, 2, 5, "unit-test");
  write_corpus(d2, spec, 2, 5, "unit-test");
  for (const char* rel : {"clips/clip_00000.jsonl", "clips/clip_00001.jsonl",
                          "clips/clip_00000.images.hrpt", "clips/clip_00000.truth.json"}) {
    std::ifstream a(d1 / rel, std::ios::binary), b(d2 / rel, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    REQUIRE(sa == sb);
    REQUIRE_FALSE(sa.empty());
  }
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
}

TEST_CASE("scene spec json round trip and validation") {
  SceneSpec s;
  s.image_size = 32;
  s.motion = CameraMotion::Projective;
  s.corr_jitter_std = 0.004;
  SceneSpec r = SceneSpec::from_json(s.to_json());
  REQUIRE(r.to_json() == s.to_json());
  SceneSpec bad;
  bad.image_size = 4;
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = SceneSpec{};
  bad.corr_jitter_std = -1.0;
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
}
