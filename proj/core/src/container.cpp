#include "merob/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "merob/errors.hpp"

namespace merob {

namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
  }
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    }
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }

  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("tensor container truncated at byte " + std::to_string(pos_));
    }
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const TensorRecord& Container::find(const std::string& name) const {
  for (const auto& r : records) {
    if (r.name == name) return r;
  }
  throw FormatError("tensor container has no record '" + name + "'");
}

std::vector<std::uint8_t> encode_container(const Container& c) {
  std::vector<std::uint8_t> out(std::begin(kContainerMagic), std::end(kContainerMagic));
  put_le<std::uint32_t>(out, kContainerVersion);
  put_le<std::uint64_t>(out, c.digest);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.records.size()));
  for (const auto& r : c.records) {
    if (shape_numel(r.shape) != r.values.size()) {
      throw DimensionError("record '" + r.name + "' has shape " + shape_str(r.shape) + " but " +
                           std::to_string(r.values.size()) + " values");
    }
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) put_le<std::uint64_t>(out, d);
    for (float f : r.values) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

Container decode_container(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  auto magic = in.take(sizeof(kContainerMagic));
  if (std::memcmp(magic.data(), kContainerMagic, sizeof(kContainerMagic)) != 0) {
    throw FormatError("not a tensor container (bad magic)");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kContainerVersion) {
    throw FormatError("unsupported tensor container version " + std::to_string(version));
  }
  Container c;
  c.digest = in.get<std::uint64_t>();
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    TensorRecord r;
    const auto name_len = in.get<std::uint32_t>();
    auto name = in.take(name_len);
    r.name.assign(name.begin(), name.end());
    const auto rank = in.get<std::uint32_t>();
    if (rank > 8) throw FormatError("record '" + r.name + "' has implausible rank");
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      r.shape.push_back(static_cast<std::size_t>(in.get<std::uint64_t>()));
      n *= r.shape.back();
    }
    if (n > bytes.size() / 4) throw FormatError("tensor container truncated in '" + r.name + "'");
    r.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) r.values[i] = std::bit_cast<float>(in.get<std::uint32_t>());
    c.records.push_back(std::move(r));
  }
  if (!in.done()) throw FormatError("trailing bytes after tensor container");
  return c;
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestionError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IngestionError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace merob
