// File: test_container.cpp
#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "hrp/container.hpp"

using namespace hrp;
namespace fs = std::filesystem;

namespace {

fs::path tmpdir() {
  auto d = fs::temp_directory_path() / "hrp_container_test";
  fs::create_directories(d);
  return d;
}

Container sample() {
  Container c;
  TensorEntry a;
  a.name = "alpha";
  a.dims = {2, 3};
  a.data = {1.0f, 2.0f, 3.5f, -4.25f, 0.0f, 1e-8f};
  TensorEntry b;
  b.name = "beta/weights";
  b.dims = {4};
  b.data = {0.5f, -0.5f, 2.0f, 8.0f};
  c.tensors = {a, b};
  c.meta = {{"kind", "test"}, {"nested", {{"x", 1}}}};
  return c;
}

}  // namespace

TEST_CASE("container round-trips tensors and metadata bit-exactly") {
  auto path = tmpdir() / "roundtrip.hrpt";
  Container c = sample();
  write_container(path, c);
  Container r = read_container(path);
  REQUIRE(r.tensors.size() == 2);
  REQUIRE(r.tensors[0].name == "alpha");
  REQUIRE(r.tensors[0].dims == std::vector<std::uint64_t>{2, 3});
  REQUIRE(std::memcmp(r.tensors[0].data.data(), c.tensors[0].data.data(), 6 * 4) == 0);
  REQUIRE(r.tensors[1].data == c.tensors[1].data);
  REQUIRE(r.meta == c.meta);
}

TEST_CASE("container write is byte deterministic") {
  auto p1 = tmpdir() / "det1.hrpt";
  auto p2 = tmpdir() / "det2.hrpt";
  write_container(p1, sample());
  write_container(p2, sample());
  std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  REQUIRE(sa == sb);
  REQUIRE(sa.substr(0, 4) == "HRPT");
}

TEST_CASE("container index serves random slices without loading everything") {
  auto path = tmpdir() / "slices.hrpt";
  Container c;
  TensorEntry frames;
  frames.name = "frames";
  frames.dims = {10, 4, 4, 3};  // 10 tiny frames
  frames.data.resize(480);
  for (std::size_t i = 0; i < frames.data.size(); ++i) frames.data[i] = static_cast<float>(i) * 0.25f;
  c.tensors.push_back(frames);
  c.meta["frames"] = 10;
  write_container(path, c);

  ContainerIndex idx(path);
  REQUIRE(idx.has("frames"));
  REQUIRE(idx.dims("frames") == std::vector<std::uint64_t>{10, 4, 4, 3});
  REQUIRE(idx.meta().at("frames").get<int>() == 10);
  // frame 7
  auto slice = idx.read_slice("frames", 7 * 48, 48);
  REQUIRE(slice.size() == 48);
  for (int i = 0; i < 48; ++i) REQUIRE(slice[static_cast<std::size_t>(i)] == static_cast<float>(7 * 48 + i) * 0.25f);

  REQUIRE_THROWS_AS(idx.read_slice("frames", 470, 20), std::invalid_argument);
  REQUIRE_THROWS_AS(idx.read_all("nope"), std::invalid_argument);
}

TEST_CASE("container rejects corrupted files") {
  auto dir = tmpdir();
  auto path = dir / "bad_magic.hrpt";
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOPE garbage here and a bit more padding to exceed minimum size";
  }
  REQUIRE_THROWS_AS(read_container(path), std::runtime_error);

  auto good = dir / "good.hrpt";
  write_container(good, sample());
  auto trunc = dir / "trunc.hrpt";
  {
    std::ifstream is(good, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    std::ofstream os(trunc, std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  REQUIRE_THROWS_AS(read_container(trunc), std::runtime_error);

  auto tiny = dir / "tiny.hrpt";
  {
    std::ofstream os(tiny, std::ios::binary);
    os << "HRPT";
  }
  REQUIRE_THROWS_AS(read_container(tiny), std::runtime_error);
}

TEST_CASE("doubles written as f32 read back as the same f32") {
  auto path = tmpdir() / "f32.hrpt";
  std::vector<double> values = {0.1, 1.0 / 3.0, 6.02214076e23, -2.5e-30, 3.14159265358979};
  Container c;
  TensorEntry t;
  t.name = "v";
  t.dims = {values.size()};
  for (double v : values) t.data.push_back(static_cast<float>(v));
  c.tensors.push_back(t);
  write_container(path, c);
  auto r = read_container(path);
  for (std::size_t i = 0; i < values.size(); ++i) {
    float expect = static_cast<float>(values[i]);
    REQUIRE(std::memcmp(&r.tensors[0].data[i], &expect, 4) == 0);
  }
}
