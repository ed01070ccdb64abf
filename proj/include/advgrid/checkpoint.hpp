#pragma once

// Model checkpoint file, all integers and floats little-endian:
//
//   magic      8 bytes  "ADVGCKPT"
//   version    u32      (1)
//   init_seed  u64
//   metadata   u32 count, then (u32 len, key bytes, u32 len, value bytes)*
//   arch       u32 input_side, u32 classes, u32 conv count, (u32 kernel, u32 channels)*
//   shapes     u32 tensor count, then (u32 rank, u64 dim * rank)*
//   params     f64 blocks in the same tensor order
//   checksum   u64 FNV-1a over every preceding byte

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "advgrid/model.hpp"

namespace advgrid {

inline constexpr char kCheckpointMagic[8] = {'A', 'D', 'V', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_arithmetic_v<T>);
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
      std::reverse(std::begin(raw), std::end(raw));
    bytes_.insert(bytes_.end(), std::begin(raw), std::end(raw));
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void put_raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t n) : data_(data), n_(n) {}

  template <class T>
  T get() {
    need(sizeof(T));
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, data_ + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
      std::reverse(std::begin(raw), std::end(raw));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, raw, sizeof(T));
    return v;
  }
  std::string get_string() {
    auto len = get<std::uint32_t>();
    need(len);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), len);
    pos_ += len;
    return s;
  }
  void expect_raw(const char* p, std::size_t n, const char* what) {
    need(n);
    if (std::memcmp(data_ + pos_, p, n) != 0)
      throw CheckpointError(std::string("checkpoint: bad ") + what);
    pos_ += n;
  }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t k) const {
    if (n_ - pos_ < k) throw CheckpointError("checkpoint: truncated file");
  }
  const std::uint8_t* data_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const CnnModel& m) {
  detail::ByteWriter w;
  w.put_raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(m.init_seed);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.metadata.size()));
  for (const auto& [k, v] : m.metadata) {
    w.put_string(k);
    w.put_string(v);
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.arch.input_side));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.arch.classes));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.arch.convs.size()));
  for (const auto& c : m.arch.convs) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(c.kernel));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(c.channels));
  }
  std::vector<const Tensor*> tensors;
  m.params.for_each([&](const Tensor& t) { tensors.push_back(&t); });
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto* t : tensors) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t->rank()));
    for (auto d : t->shape()) w.put<std::uint64_t>(d);
  }
  for (const auto* t : tensors)
    for (double v : t->values()) w.put<double>(v);
  w.put<std::uint64_t>(detail::fnv1a(w.bytes().data(), w.bytes().size()));
  return std::move(w.bytes());
}

inline CnnModel decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof kCheckpointMagic + 8)
    throw CheckpointError("checkpoint: truncated file");
  detail::ByteReader r(bytes.data(), bytes.size());
  r.expect_raw(kCheckpointMagic, sizeof kCheckpointMagic, "magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));

  CnnModel m;
  m.init_seed = r.get<std::uint64_t>();
  const auto n_meta = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = r.get_string();
    m.metadata[k] = r.get_string();
  }
  m.arch.input_side = r.get<std::uint32_t>();
  m.arch.classes = r.get<std::uint32_t>();
  const auto n_conv = r.get<std::uint32_t>();
  if (n_conv > 64) throw CheckpointError("checkpoint: implausible layer count");
  m.arch.convs.clear();
  for (std::uint32_t i = 0; i < n_conv; ++i) {
    ConvSpec c{};
    c.kernel = r.get<std::uint32_t>();
    c.channels = r.get<std::uint32_t>();
    m.arch.convs.push_back(c);
  }
  try {
    m.params = Parameters::zeros(m.arch);
  } catch (const ShapeError& e) {
    throw CheckpointError(std::string("checkpoint: invalid architecture: ") + e.what());
  }

  std::vector<Tensor*> tensors;
  m.params.for_each([&](Tensor& t) { tensors.push_back(&t); });
  if (r.get<std::uint32_t>() != tensors.size())
    throw CheckpointError("checkpoint: tensor count does not match architecture");
  for (auto* t : tensors) {
    Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = r.get<std::uint64_t>();
    if (shape != t->shape())
      throw CheckpointError("checkpoint: stored shape " + to_string(shape) +
                            " does not match architecture " + to_string(t->shape()));
  }
  for (auto* t : tensors)
    for (double& v : t->values()) v = r.get<double>();

  const std::size_t body = r.position();
  const auto stored = r.get<std::uint64_t>();
  if (r.position() != bytes.size())
    throw CheckpointError("checkpoint: trailing bytes after checksum");
  if (stored != detail::fnv1a(bytes.data(), body))
    throw CheckpointError("checkpoint: checksum mismatch");
  return m;
}

inline void save_model(const CnnModel& m, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(m);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed: " + path.string());
}

inline CnnModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                  std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

}  // namespace advgrid
