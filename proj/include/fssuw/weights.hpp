#pragma once

// Weight container.
//
//   bytes  content
//   8      magic "FSSUWW01"
//   8      u64 architecture hash
//   4      u32 metadata entry count, then per entry: u32 len + key, u32 len + value
//   4      u32 tensor count, then per tensor:
//            u32 len + name, u32 rank, rank x u64 dims, prod(dims) x f64 values
//   8      u64 FNV-1a checksum of every preceding byte
//
// All integers and doubles are little-endian. Values are always stored as f64,
// so float and double parameter sets both round-trip exactly.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "nn.hpp"

namespace fssuw {

static_assert(std::endian::native == std::endian::little, "weight container assumes a little-endian host");

inline constexpr char kWeightMagic[8] = {'F', 'S', 'S', 'U', 'W', 'W', '0', '1'};

using Metadata = std::map<std::string, std::string>;

struct StoredTensor {
  Shape shape;
  std::vector<double> values;
};

struct WeightFile {
  std::uint64_t arch_hash = 0;
  Metadata metadata;
  std::vector<std::pair<std::string, StoredTensor>> tensors;
};

/// Fingerprint of a parameter layout plus a free-form architecture string.
template <typename T>
std::uint64_t architecture_hash(const ParamSet<T>& params, const std::string& descriptor) {
  Fnv1a h;
  h.update(descriptor);
  for (const auto& [name, v] : params.items()) {
    h.update(name);
    for (auto d : v.shape()) h.update_value<std::uint64_t>(d);
  }
  return h.digest();
}

namespace detail {

class Writer {
 public:
  template <typename V>
  void put(V v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(V));
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  std::vector<char>& buffer() { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const std::vector<char>& buf, std::size_t end, std::string path) : buf_(buf), end_(end), path_(std::move(path)) {}
  template <typename V>
  V get() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void get_bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    require(n <= end_ - pos_, ErrorCode::CorruptFile, path_ + ": truncated");
  }
  const std::vector<char>& buf_;
  std::size_t pos_ = 0, end_;
  std::string path_;
};

}  // namespace detail

inline void write_weight_file(const std::filesystem::path& path, const WeightFile& wf) {
  detail::Writer w;
  w.put_bytes(kWeightMagic, sizeof(kWeightMagic));
  w.put<std::uint64_t>(wf.arch_hash);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(wf.metadata.size()));
  for (const auto& [k, v] : wf.metadata) {
    w.put_string(k);
    w.put_string(v);
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(wf.tensors.size()));
  for (const auto& [name, t] : wf.tensors) {
    w.put_string(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.put<std::uint64_t>(d);
    w.put_bytes(t.values.data(), t.values.size() * sizeof(double));
  }
  Fnv1a h;
  h.update(w.buffer().data(), w.buffer().size());
  w.put<std::uint64_t>(h.digest());

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(os), ErrorCode::IoError, "cannot write " + tmp.string());
    os.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    require(static_cast<bool>(os), ErrorCode::IoError, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline WeightFile read_weight_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::IoError, "cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::string p = path.string();
  require(buf.size() >= sizeof(kWeightMagic) + 8 + 8, ErrorCode::CorruptFile, p + ": truncated");
  require(std::memcmp(buf.data(), kWeightMagic, sizeof(kWeightMagic)) == 0, ErrorCode::CorruptFile,
          p + ": bad magic");
  const std::size_t body = buf.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, buf.data() + body, 8);

  // Parse before checking the checksum so truncation reports as such.
  detail::Reader r(buf, body, p);
  char magic[8];
  r.get_bytes(magic, 8);
  WeightFile wf;
  wf.arch_hash = r.get<std::uint64_t>();
  const auto nmeta = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    auto k = r.get_string();
    wf.metadata[k] = r.get_string();
  }
  const auto ntensors = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < ntensors; ++i) {
    auto name = r.get_string();
    StoredTensor t;
    const auto rank = r.get<std::uint32_t>();
    require(rank <= 8, ErrorCode::CorruptFile, p + ": implausible tensor rank");
    for (std::uint32_t d = 0; d < rank; ++d) t.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    const std::size_t n = shape_size(t.shape);
    require(n <= body, ErrorCode::CorruptFile, p + ": implausible tensor size");
    t.values.resize(n);
    r.get_bytes(t.values.data(), n * sizeof(double));
    wf.tensors.emplace_back(std::move(name), std::move(t));
  }
  require(r.done(), ErrorCode::CorruptFile, p + ": trailing bytes");
  Fnv1a h;
  h.update(buf.data(), body);
  require(h.digest() == stored, ErrorCode::CorruptFile, p + ": checksum mismatch");
  return wf;
}

template <typename T>
StoredTensor store(const Tensor<T>& t) {
  StoredTensor s{t.shape(), std::vector<double>(t.size())};
  for (std::size_t i = 0; i < t.size(); ++i) s.values[i] = static_cast<double>(t[i]);
  return s;
}

template <typename T>
void restore(const StoredTensor& s, Tensor<T>& t, const std::string& name) {
  require(s.shape == t.shape(), ErrorCode::ConfigMismatch,
          name + ": stored shape " + shape_str(s.shape) + " vs model " + shape_str(t.shape()));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(s.values[i]);
}

template <typename T>
void save_weights(const std::filesystem::path& path, const ParamSet<T>& params, std::uint64_t arch_hash,
                  Metadata metadata = {}) {
  WeightFile wf;
  wf.arch_hash = arch_hash;
  wf.metadata = std::move(metadata);
  for (const auto& [name, v] : params.items()) wf.tensors.emplace_back(name, store(v.value()));
  write_weight_file(path, wf);
}

/// Load parameters by name; the architecture hash must match exactly.
template <typename T>
Metadata load_weights(const std::filesystem::path& path, ParamSet<T>& params, std::uint64_t arch_hash) {
  const WeightFile wf = read_weight_file(path);
  require(wf.arch_hash == arch_hash, ErrorCode::ConfigMismatch,
          path.string() + ": architecture hash " + hex64(wf.arch_hash) + " does not match model " + hex64(arch_hash));
  std::map<std::string, const StoredTensor*> byname;
  for (const auto& [name, t] : wf.tensors) byname[name] = &t;
  for (auto& [name, v] : params.items()) {
    auto it = byname.find(name);
    require(it != byname.end(), ErrorCode::ConfigMismatch, path.string() + ": missing tensor " + name);
    restore(*it->second, v.mutable_value(), name);
  }
  return wf.metadata;
}

}  // namespace fssuw
