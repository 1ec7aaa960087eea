#pragma once

// Binary tensor container shared by checkpoints, the spectrogram cache and
// persisted perturbations.
//
// Layout (all integers little-endian):
//   magic      8 bytes  "MEROBTNS"
//   version    u32      currently 1
//   digest     u64      spec digest for checkpoints, 0 otherwise
//   count      u32      number of records
//   records    count x { u32 name_len, name bytes, u32 rank,
//                        rank x u64 dims, prod(dims) x f32 values }

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "merob/tensor.hpp"

namespace merob {

inline constexpr char kContainerMagic[8] = {'M', 'E', 'R', 'O', 'B', 'T', 'N', 'S'};
inline constexpr std::uint32_t kContainerVersion = 1;

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Container {
  std::uint64_t digest = 0;
  std::vector<TensorRecord> records;

  const TensorRecord& find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_container(const Container& c);
/// Throws FormatError on bad magic, unsupported version or truncation.
Container decode_container(std::span<const std::uint8_t> bytes);

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

template <typename T>
TensorRecord to_record(std::string name, const Tensor<T>& t) {
  auto v = t.values();
  return {std::move(name), t.shape(), std::vector<float>(v.begin(), v.end())};
}

template <typename T>
Tensor<T> from_record(const TensorRecord& r, bool requires_grad = false) {
  return Tensor<T>::from(r.shape, std::vector<T>(r.values.begin(), r.values.end()), requires_grad);
}

}  // namespace merob
