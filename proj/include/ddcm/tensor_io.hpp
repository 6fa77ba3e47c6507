#ifndef DDCM_TENSOR_IO_HPP
#define DDCM_TENSOR_IO_HPP

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ddcm/errors.hpp"
#include "ddcm/tensor.hpp"

namespace ddcm {

/// Binary tensor container:
///   magic "DDCM" | version u32 LE | entry count u32 LE |
///   per entry: name len u32 LE, name bytes (UTF-8), ndim u32 LE,
///              dims u32 LE each, payload = 4 * prod(dims) bytes of f32 LE.
///
/// Text payloads (config snapshots, counters) live in ordinary entries whose
/// bytes are UTF-8 padded with NUL to a multiple of 4.
struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

class TensorFile {
 public:
  static constexpr std::uint32_t kVersion = 1;

  std::vector<NamedTensor>& entries() { return entries_; }
  const std::vector<NamedTensor>& entries() const { return entries_; }

  void add(std::string name, std::vector<std::uint32_t> dims, const float* values) {
    NamedTensor t;
    t.name = std::move(name);
    t.dims = std::move(dims);
    t.data.assign(values, values + t.element_count());
    entries_.push_back(std::move(t));
  }

  void add_text(std::string name, const std::string& text) {
    NamedTensor t;
    t.name = std::move(name);
    const std::uint32_t words = static_cast<std::uint32_t>((text.size() + 3) / 4);
    t.dims = {words};
    t.data.assign(words, 0.0f);
    std::memcpy(t.data.data(), text.data(), text.size());
    entries_.push_back(std::move(t));
  }

  const NamedTensor* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

  std::string text(const std::string& name) const {
    const NamedTensor* e = find(name);
    if (!e) throw IoError("tensor file: missing text entry '" + name + "'");
    std::string s(reinterpret_cast<const char*>(e->data.data()), e->data.size() * 4);
    while (!s.empty() && s.back() == '\0') s.pop_back();
    return s;
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    f.write("DDCM", 4);
    put_u32(f, kVersion);
    put_u32(f, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
      put_u32(f, static_cast<std::uint32_t>(e.name.size()));
      f.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      put_u32(f, static_cast<std::uint32_t>(e.dims.size()));
      for (auto d : e.dims) put_u32(f, d);
      for (float v : e.data) put_f32(f, v);
    }
    if (!f) throw IoError("short write to '" + path.string() + "'");
  }

  static TensorFile read(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path.string() + "'");
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "DDCM", 4) != 0)
      throw IoError("'" + path.string() + "' is not a DDCM tensor file (bad magic)");
    const std::uint32_t version = get_u32(f, path);
    if (version != kVersion)
      throw IoError("'" + path.string() + "': unsupported format version " + std::to_string(version));
    const std::uint32_t count = get_u32(f, path);
    TensorFile tf;
    tf.entries_.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
      NamedTensor e;
      const std::uint32_t name_len = get_u32(f, path);
      e.name.resize(name_len);
      f.read(e.name.data(), name_len);
      const std::uint32_t ndim = get_u32(f, path);
      e.dims.resize(ndim);
      for (auto& d : e.dims) d = get_u32(f, path);
      if (!f) throw IoError("'" + path.string() + "': corrupt entry header");
      e.data.resize(e.element_count());
      for (auto& v : e.data) v = get_f32(f, path);
      tf.entries_.push_back(std::move(e));
    }
    return tf;
  }

 private:
  static void put_u32(std::ostream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    f.write(reinterpret_cast<const char*>(b), 4);
  }
  static void put_f32(std::ostream& f, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(f, bits);
  }
  static std::uint32_t get_u32(std::istream& f, const std::filesystem::path& path) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw IoError("'" + path.string() + "': truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  static float get_f32(std::istream& f, const std::filesystem::path& path) {
    const std::uint32_t bits = get_u32(f, path);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  std::vector<NamedTensor> entries_;
};

}  // namespace ddcm

#endif  // DDCM_TENSOR_IO_HPP
