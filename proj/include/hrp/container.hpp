// File: container.hpp
// Description: flat binary tensor container with a JSON metadata trailer.
//
// Layout, all integers little-endian:
//   "HRPT" | u32 version | tensor blocks | metadata JSON bytes | u64 json_len
// tensor block:
//   u64 name_len | name | u64 rank | rank x u64 dims | float32 payload
// The tensor region ends at file_size - 8 - json_len.
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

namespace hrp {

inline constexpr std::uint32_t kContainerVersion = 1;

struct TensorEntry {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<float> data;

  std::uint64_t elems() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

struct Container {
  std::vector<TensorEntry> tensors;
  nlohmann::json meta = nlohmann::json::object();

  const TensorEntry* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

namespace detail {

template <class T>
void put_le(std::ostream& os, T v) {
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
  unsigned char b[sizeof(T)];
  is.read(reinterpret_cast<char*>(b), sizeof(T));
  if (!is) throw std::runtime_error("container: truncated read");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return static_cast<T>(v);
}

inline void put_f32(std::ostream& os, const float* p, std::size_t n) {
  static_assert(sizeof(float) == 4);
  // assume IEEE754 little-endian host; asserted at write time below
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * 4));
}

inline void get_f32(std::istream& is, float* p, std::size_t n) {
  is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * 4));
  if (!is) throw std::runtime_error("container: truncated tensor payload");
}

inline void check_host_layout() {
  const std::uint32_t probe = 1;
  unsigned char b;
  std::memcpy(&b, &probe, 1);
  if (b != 1) throw std::runtime_error("container: big-endian hosts are not supported");
}

}  // namespace detail

inline void write_container(const std::filesystem::path& path, const Container& c) {
  detail::check_host_layout();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("container: cannot open for write: " + path.string());
  os.write("HRPT", 4);
  detail::put_le<std::uint32_t>(os, kContainerVersion);
  for (const auto& t : c.tensors) {
    if (t.data.size() != t.elems())
      throw std::invalid_argument("container: tensor '" + t.name + "' payload does not match dims");
    detail::put_le<std::uint64_t>(os, t.name.size());
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::put_le<std::uint64_t>(os, t.dims.size());
    for (auto d : t.dims) detail::put_le<std::uint64_t>(os, d);
    detail::put_f32(os, t.data.data(), t.data.size());
  }
  std::string meta = c.meta.dump();
  os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  detail::put_le<std::uint64_t>(os, meta.size());
  os.flush();
  if (!os) throw std::runtime_error("container: write failed: " + path.string());
}

namespace detail {

struct TensorLoc {
  std::vector<std::uint64_t> dims;
  std::uint64_t payload_offset;
  std::uint64_t elems;
};

struct ParsedHeader {
  std::uint64_t tensor_end;   // first byte past the tensor region
  std::uint64_t json_offset;  // where metadata begins
  std::uint64_t json_len;
  std::vector<std::pair<std::string, TensorLoc>> tensors;  // in file order
};

inline ParsedHeader scan_container(std::istream& is, std::uint64_t file_size, const std::string& label) {
  if (file_size < 16) throw std::runtime_error("container: file too small: " + label);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "HRPT", 4) != 0)
    throw std::runtime_error("container: bad magic in " + label);
  auto version = get_le<std::uint32_t>(is);
  if (version != kContainerVersion)
    throw std::runtime_error("container: unsupported version " + std::to_string(version) + " in " + label);
  is.seekg(static_cast<std::streamoff>(file_size - 8));
  auto json_len = get_le<std::uint64_t>(is);
  if (json_len + 16 > file_size)
    throw std::runtime_error("container: metadata length out of range in " + label);
  ParsedHeader h;
  h.json_len = json_len;
  h.json_offset = file_size - 8 - json_len;
  h.tensor_end = h.json_offset;
  std::uint64_t pos = 8;
  is.seekg(8);
  while (pos < h.tensor_end) {
    auto name_len = get_le<std::uint64_t>(is);
    if (name_len > 1 << 20) throw std::runtime_error("container: implausible tensor name length in " + label);
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    auto rank = get_le<std::uint64_t>(is);
    if (rank > 8) throw std::runtime_error("container: implausible tensor rank in " + label);
    TensorLoc loc;
    loc.elems = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
      loc.dims.push_back(get_le<std::uint64_t>(is));
      loc.elems *= loc.dims.back();
    }
    pos += 8 + name_len + 8 + rank * 8;
    loc.payload_offset = pos;
    pos += loc.elems * 4;
    if (pos > h.tensor_end)
      throw std::runtime_error("container: tensor '" + name + "' overruns tensor region in " + label);
    h.tensors.emplace_back(std::move(name), std::move(loc));
    is.seekg(static_cast<std::streamoff>(pos));
    if (!is) throw std::runtime_error("container: truncated scanning " + label);
  }
  if (pos != h.tensor_end)
    throw std::runtime_error("container: tensor region misaligned in " + label);
  return h;
}

}  // namespace detail

inline Container read_container(const std::filesystem::path& path) {
  detail::check_host_layout();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("container: cannot open: " + path.string());
  is.seekg(0, std::ios::end);
  auto file_size = static_cast<std::uint64_t>(is.tellg());
  is.seekg(0);
  auto h = detail::scan_container(is, file_size, path.string());
  Container c;
  for (auto& [name, loc] : h.tensors) {
    TensorEntry t;
    t.name = name;
    t.dims = loc.dims;
    t.data.resize(loc.elems);
    is.seekg(static_cast<std::streamoff>(loc.payload_offset));
    detail::get_f32(is, t.data.data(), t.data.size());
    c.tensors.push_back(std::move(t));
  }
  is.seekg(static_cast<std::streamoff>(h.json_offset));
  std::string meta(h.json_len, '\0');
  is.read(meta.data(), static_cast<std::streamsize>(h.json_len));
  if (!is) throw std::runtime_error("container: truncated metadata in " + path.string());
  try {
    c.meta = meta.empty() ? nlohmann::json::object() : nlohmann::json::parse(meta);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("container: bad metadata JSON in " + path.string() + ": " + e.what());
  }
  return c;
}

// Random access reader; scans the header once, then serves slices by seeking.
class ContainerIndex {
 public:
  explicit ContainerIndex(std::filesystem::path path) : path_(std::move(path)) {
    detail::check_host_layout();
    std::ifstream is(path_, std::ios::binary);
    if (!is) throw std::runtime_error("container: cannot open: " + path_.string());
    is.seekg(0, std::ios::end);
    auto file_size = static_cast<std::uint64_t>(is.tellg());
    is.seekg(0);
    header_ = detail::scan_container(is, file_size, path_.string());
    is.seekg(static_cast<std::streamoff>(header_.json_offset));
    std::string meta(header_.json_len, '\0');
    is.read(meta.data(), static_cast<std::streamsize>(header_.json_len));
    meta_ = meta.empty() ? nlohmann::json::object() : nlohmann::json::parse(meta);
    for (auto& [name, loc] : header_.tensors) by_name_[name] = loc;
  }

  const nlohmann::json& meta() const { return meta_; }

  bool has(const std::string& name) const { return by_name_.count(name) > 0; }

  const std::vector<std::uint64_t>& dims(const std::string& name) const { return locate(name).dims; }

  std::vector<float> read_slice(const std::string& name, std::uint64_t elem_offset,
                                std::uint64_t elem_count) const {
    const auto& loc = locate(name);
    if (elem_offset + elem_count > loc.elems)
      throw std::invalid_argument("container: slice out of range for tensor '" + name + "'");
    std::ifstream is(path_, std::ios::binary);
    if (!is) throw std::runtime_error("container: cannot reopen: " + path_.string());
    is.seekg(static_cast<std::streamoff>(loc.payload_offset + elem_offset * 4));
    std::vector<float> out(elem_count);
    detail::get_f32(is, out.data(), out.size());
    return out;
  }

  std::vector<float> read_all(const std::string& name) const {
    return read_slice(name, 0, locate(name).elems);
  }

 private:
  const detail::TensorLoc& locate(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end())
      throw std::invalid_argument("container: no tensor named '" + name + "' in " + path_.string());
    return it->second;
  }

  std::filesystem::path path_;
  detail::ParsedHeader header_;
  nlohmann::json meta_;
  std::map<std::string, detail::TensorLoc> by_name_;
};

}  // namespace hrp
