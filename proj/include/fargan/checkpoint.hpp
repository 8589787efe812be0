#pragma once

// Named-tensor container shared by checkpoints and imported feature-net weights.
//
// Layout (all integers little-endian):
//   "FARG"  u32 version(=1)
//   repeated: u32 name_len, name bytes (UTF-8), u8 dtype (0 = f32, 1 = f64),
//             u32 rank, u32 dims[rank], raw little-endian elements

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <type_traits>
#include <vector>

#include "fargan/losses.hpp"

namespace fargan {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

inline constexpr std::uint32_t kContainerVersion = 1;

struct Record {
  std::string name;
  DType dtype = DType::f32;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> bytes;  // little-endian element payload

  std::size_t element_count() const;
  std::vector<double> as_doubles() const;
  friend bool operator==(const Record&, const Record&) = default;
};

std::vector<std::uint8_t> encode_container(const std::vector<Record>& records);
/// Throws FormatError carrying the offset of the first malformed byte.
std::vector<Record> decode_container(const std::vector<std::uint8_t>& bytes);

/// Atomic: writes `path`.tmp then renames over `path`.
void write_container(const std::filesystem::path& path, const std::vector<Record>& records);
std::vector<Record> read_container(const std::filesystem::path& path);

template <typename T>
Record make_record(const std::string& name, const Tensor<T>& t) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  Record r;
  r.name = name;
  r.dtype = std::is_same_v<T, float> ? DType::f32 : DType::f64;
  for (Index d : t.shape()) r.dims.push_back(static_cast<std::uint32_t>(d));
  r.bytes.resize(t.values().size() * sizeof(T));
  static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");
  std::memcpy(r.bytes.data(), t.values().data(), r.bytes.size());
  return r;
}

Record make_scalar_record(const std::string& name, double value);

/// Copies a record into an existing tensor of identical shape, converting dtype.
template <typename T>
void assign_record(const Record& r, Tensor<T>& t) {
  if (r.element_count() != static_cast<std::size_t>(t.numel())) {
    throw FormatError(0, "record '" + r.name + "' holds " + std::to_string(r.element_count()) +
                             " elements, tensor expects " + std::to_string(t.numel()));
  }
  if (r.dims.size() != t.rank()) throw FormatError(0, "record '" + r.name + "' rank mismatch");
  for (std::size_t i = 0; i < r.dims.size(); ++i) {
    if (static_cast<Index>(r.dims[i]) != t.dim(i)) throw FormatError(0, "record '" + r.name + "' shape mismatch");
  }
  const std::vector<double> values = r.as_doubles();
  for (std::size_t i = 0; i < values.size(); ++i) t.values()[i] = static_cast<T>(values[i]);
}

template <typename T>
Tensor<T> record_to_tensor(const Record& r) {
  Shape shape;
  for (auto d : r.dims) shape.push_back(static_cast<Index>(d));
  if (shape.empty()) shape.push_back(1);
  const std::vector<double> values = r.as_doubles();
  return Tensor<T>(std::move(shape), std::vector<T>(values.begin(), values.end()));
}

/// Feature-net import: records "stage<i>.weight" / "stage<i>.bias"; stage 0
/// runs at full resolution and later stages average-pool first.
template <typename T>
FeatureNet<T> feature_net_from_records(const std::vector<Record>& records) {
  std::vector<typename FeatureNet<T>::Stage> stages;
  for (std::size_t i = 0;; ++i) {
    const std::string prefix = "stage" + std::to_string(i);
    const Record* w = nullptr;
    const Record* b = nullptr;
    for (const auto& r : records) {
      if (r.name == prefix + ".weight") w = &r;
      if (r.name == prefix + ".bias") b = &r;
    }
    if (!w) break;
    if (!b) throw FormatError(0, "feature net record " + prefix + ".bias missing");
    typename FeatureNet<T>::Stage s;
    s.weight = record_to_tensor<T>(*w);
    s.bias = record_to_tensor<T>(*b);
    if (s.weight.rank() != 4 || s.bias.numel() != s.weight.dim(0)) {
      throw FormatError(0, "feature net stage " + std::to_string(i) + " has inconsistent shapes");
    }
    s.pool_before = i > 0;
    s.padding = s.weight.dim(2) / 2;
    stages.push_back(std::move(s));
  }
  if (stages.empty()) throw FormatError(0, "no feature net stages in container");
  return FeatureNet<T>(std::move(stages));
}

}  // namespace fargan
