#pragma once

// Flat binary parameter file:
//   magic "WSCK" | u32 version | u32 count
//   per tensor: u32 name_len | name bytes | u8 dtype | u8 rank | u32 dims[rank]
//               | values, little-endian
// dtype 1 = float32, 2 = float64. All integers little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <vector>

#include "woundseg/autodiff/tensor.hpp"
#include "woundseg/core/error.hpp"

namespace woundseg::ad {

inline constexpr char kCheckpointMagic[4] = {'W', 'S', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  template <class T>
  void real(T v) {
    if constexpr (std::is_same_v<T, float>)
      u32(std::bit_cast<std::uint32_t>(v));
    else
      u64(std::bit_cast<std::uint64_t>(v));
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> b) : bytes_(std::move(b)) {}
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("checkpoint: truncated file");
  }
  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::vector<std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <class T>
std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor<T>>& tensors) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& nt : tensors) {
    w.u32(static_cast<std::uint32_t>(nt.name.size()));
    w.raw(nt.name.data(), nt.name.size());
    w.u8(static_cast<std::uint8_t>(dtype_of<T>()));
    w.u8(static_cast<std::uint8_t>(nt.tensor.rank()));
    for (int d : nt.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (T v : nt.tensor.values()) w.real(v);
  }
  return std::move(w.bytes());
}

// Values stored at either precision are converted to T on load.
template <class T>
std::vector<NamedTensor<T>> decode_checkpoint(std::vector<std::uint8_t> bytes) {
  detail::ByteReader r(std::move(bytes));
  if (r.str(4) != std::string(kCheckpointMagic, 4)) throw FormatError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  std::vector<NamedTensor<T>> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor<T> nt;
    nt.name = r.str(r.u32());
    const auto dtype = static_cast<DType>(r.u8());
    if (dtype != DType::f32 && dtype != DType::f64) throw FormatError("checkpoint: unknown dtype");
    const int rank = r.u8();
    if (rank < 1 || rank > 4) throw FormatError("checkpoint: bad rank for '" + nt.name + "'");
    Shape shape(static_cast<std::size_t>(rank));
    for (auto& d : shape) {
      const std::uint32_t v = r.u32();
      if (v == 0 || v > (1u << 28)) throw FormatError("checkpoint: bad dimension for '" + nt.name + "'");
      d = static_cast<int>(v);
    }
    std::vector<T> values(shape_numel(shape));
    for (auto& v : values)
      v = dtype == DType::f32 ? static_cast<T>(std::bit_cast<float>(r.u32()))
                              : static_cast<T>(std::bit_cast<double>(r.u64()));
    nt.tensor = Tensor<T>::from(std::move(shape), std::move(values));
    out.push_back(std::move(nt));
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  return out;
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor<T>>& tensors) {
  const auto bytes = encode_checkpoint(tensors);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

template <class T>
std::vector<NamedTensor<T>> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint<T>(std::move(bytes));
}

}  // namespace woundseg::ad
