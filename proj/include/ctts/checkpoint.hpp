#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctts::io {

// Named-tensor container: magic "CTTS1", format version u32, then repeated
// records of name length u32 + UTF-8 name + rank u32 + dims u32[] +
// little-endian 32-bit floats. Also used for the mel feature cache.
class TensorContainer {
 public:
  static constexpr char kMagic[5] = {'C', 'T', 'T', 'S', '1'};
  static constexpr std::uint32_t kVersion = 1;

  struct Entry {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;
  };

  void put(const std::string& name, std::vector<int> shape, std::vector<float> data) {
    std::size_t numel = 1;
    for (int d : shape) numel *= static_cast<std::size_t>(d);
    if (numel != data.size())
      throw std::runtime_error("container: shape/data mismatch for '" + name + "'");
    auto it = index_.find(name);
    if (it == index_.end()) {
      index_.emplace(name, entries_.size());
      entries_.push_back({name, std::move(shape), std::move(data)});
    } else {
      entries_[it->second] = {name, std::move(shape), std::move(data)};
    }
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Entry& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::runtime_error("container: missing tensor '" + name + "'");
    return entries_[it->second];
  }

  const std::vector<Entry>& entries() const { return entries_; }

  // Strings ride along as byte-valued float tensors; exact for 0..255.
  void put_string(const std::string& name, const std::string& text) {
    std::vector<float> bytes(text.size());
    for (std::size_t i = 0; i < text.size(); ++i)
      bytes[i] = static_cast<float>(static_cast<unsigned char>(text[i]));
    put(name, {static_cast<int>(text.size())}, std::move(bytes));
  }

  std::string get_string(const std::string& name) const {
    const Entry& e = get(name);
    std::string out(e.data.size(), '\0');
    for (std::size_t i = 0; i < e.data.size(); ++i)
      out[i] = static_cast<char>(static_cast<unsigned char>(e.data[i]));
    return out;
  }

  void put_scalar(const std::string& name, double v) {
    put(name, {1}, {static_cast<float>(v)});
  }

  double get_scalar(const std::string& name) const {
    const Entry& e = get(name);
    if (e.data.size() != 1)
      throw std::runtime_error("container: '" + name + "' is not a scalar");
    return e.data[0];
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, 5);
    write_u32(out, kVersion);
    for (const auto& e : entries_) {
      write_u32(out, static_cast<std::uint32_t>(e.name.size()));
      out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      write_u32(out, static_cast<std::uint32_t>(e.shape.size()));
      for (int d : e.shape) write_u32(out, static_cast<std::uint32_t>(d));
      for (float v : e.data) write_f32(out, v);
    }
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
  }

  static TensorContainer load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[5];
    in.read(magic, 5);
    if (!in || std::memcmp(magic, kMagic, 5) != 0)
      throw std::runtime_error("not a checkpoint: " + path);
    const std::uint32_t version = read_u32(in, path);
    if (version != kVersion)
      throw std::runtime_error("checkpoint version " + std::to_string(version) +
                               " unsupported (expected " + std::to_string(kVersion) +
                               "): " + path);
    TensorContainer c;
    while (true) {
      std::uint32_t name_len;
      if (!try_read_u32(in, name_len)) break;  // clean EOF
      std::string name(name_len, '\0');
      in.read(name.data(), name_len);
      if (!in) throw std::runtime_error("truncated checkpoint: " + path);
      const std::uint32_t rank = read_u32(in, path);
      std::vector<int> shape(rank);
      std::size_t numel = 1;
      for (std::uint32_t i = 0; i < rank; ++i) {
        shape[i] = static_cast<int>(read_u32(in, path));
        numel *= static_cast<std::size_t>(shape[i]);
      }
      std::vector<float> data(numel);
      for (std::size_t i = 0; i < numel; ++i) {
        if (!try_read_f32(in, data[i]))
          throw std::runtime_error("truncated checkpoint: " + path);
      }
      c.put(name, std::move(shape), std::move(data));
    }
    return c;
  }

 private:
  static void write_u32(std::ostream& out, std::uint32_t v) {
    char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
                 char((v >> 24) & 0xff)};
    out.write(b, 4);
  }

  static void write_f32(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(out, bits);
  }

  static bool try_read_u32(std::istream& in, std::uint32_t& v) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() == 0 && in.eof()) return false;
    if (!in) throw std::runtime_error("truncated checkpoint");
    v = b[0] | (b[1] << 8) | (b[2] << 16) | (std::uint32_t(b[3]) << 24);
    return true;
  }

  static std::uint32_t read_u32(std::istream& in, const std::string& path) {
    std::uint32_t v;
    if (!try_read_u32(in, v)) throw std::runtime_error("truncated checkpoint: " + path);
    return v;
  }

  static bool try_read_f32(std::istream& in, float& v) {
    std::uint32_t bits;
    if (!try_read_u32(in, bits)) return false;
    std::memcpy(&v, &bits, 4);
    return true;
  }

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace ctts::io
