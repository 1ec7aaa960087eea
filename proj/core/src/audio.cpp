#include "merob/audio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "merob/container.hpp"
#include "merob/errors.hpp"
#include "merob/rng.hpp"

namespace merob {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint32_t le32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t le16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(v & 0xFF);
  out.push_back(v >> 8);
}

void put32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xFF);
}

}  // namespace

WavData read_wav(const std::filesystem::path& path) {
  const auto fail = [&](const std::string& why) -> IngestionError {
    return IngestionError(path.string() + ": " + why);
  };
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_bytes(path);
  } catch (const IngestionError&) {
    throw fail("cannot open file");
  }
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw fail("not a RIFF/WAVE file");
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const std::uint8_t* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t size = le32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) throw fail("truncated fmt chunk");
      format = le16(chunk + 8);
      channels = le16(chunk + 10);
      rate = le32(chunk + 12);
      bits = le16(chunk + 22);
      if (format == kFormatExtensible) {
        if (avail < 40) throw fail("truncated WAVE_FORMAT_EXTENSIBLE header");
        format = le16(chunk + 8 + 24);  // first two bytes of the sub-format GUID
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = avail;
    }
    pos = body + size + (size & 1);
  }
  if (format == 0) throw fail("missing fmt chunk");
  if (data == nullptr) throw fail("missing data chunk");
  if (channels == 0 || rate == 0) throw fail("invalid channel count or sample rate");
  const bool is_int = format == kFormatPcm && (bits == 8 || bits == 16 || bits == 24 || bits == 32);
  const bool is_float = format == kFormatFloat && bits == 32;
  if (!is_int && !is_float) {
    throw fail("unsupported encoding (format " + std::to_string(format) + ", " +
               std::to_string(bits) + " bits); only PCM WAV is accepted");
  }

  WavData wav;
  wav.sample_rate = rate;
  wav.channels = channels;
  const std::size_t width = bits / 8;
  const std::size_t frames = data_size / (width * channels);
  wav.interleaved.resize(frames * channels);
  for (std::size_t i = 0; i < wav.interleaved.size(); ++i) {
    const std::uint8_t* p = data + i * width;
    double v = 0.0;
    if (is_float) {
      v = std::bit_cast<float>(le32(p));
    } else if (bits == 8) {
      v = (static_cast<double>(p[0]) - 128.0) / 128.0;
    } else if (bits == 16) {
      v = static_cast<std::int16_t>(le16(p)) / 32768.0;
    } else if (bits == 24) {
      std::int32_t s = p[0] | (p[1] << 8) | (p[2] << 16);
      if (s & 0x800000) s |= ~0xFFFFFF;
      v = s / 8388608.0;
    } else {
      v = static_cast<std::int32_t>(le32(p)) / 2147483648.0;
    }
    wav.interleaved[i] = v;
  }
  return wav;
}

void write_wav(const std::filesystem::path& path, const WavData& wav, WavEncoding encoding) {
  const std::uint16_t bits = encoding == WavEncoding::kPcm16 ? 16 : 32;
  const std::uint16_t format = encoding == WavEncoding::kPcm16 ? kFormatPcm : kFormatFloat;
  const std::uint32_t data_size =
      static_cast<std::uint32_t>(wav.interleaved.size() * (bits / 8));
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_size);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put32(out, 36 + data_size);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put32(out, 16);
  put16(out, format);
  put16(out, wav.channels);
  put32(out, wav.sample_rate);
  put32(out, wav.sample_rate * wav.channels * (bits / 8));
  put16(out, static_cast<std::uint16_t>(wav.channels * (bits / 8)));
  put16(out, bits);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put32(out, data_size);
  for (double v : wav.interleaved) {
    if (encoding == WavEncoding::kPcm16) {
      const double c = std::clamp(v, -1.0, 32767.0 / 32768.0);
      put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32768.0))));
    } else {
      put32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  write_bytes(path, out);
}

std::vector<double> downmix(const WavData& wav) {
  const std::size_t frames = wav.channels ? wav.interleaved.size() / wav.channels : 0;
  std::vector<double> mono(frames, 0.0);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::size_t c = 0; c < wav.channels; ++c) acc += wav.interleaved[f * wav.channels + c];
    mono[f] = acc / wav.channels;
  }
  return mono;
}

std::vector<double> resample_linear(const std::vector<double>& x, double from_rate,
                                    double to_rate) {
  if (from_rate <= 0 || to_rate <= 0) throw ConfigError("sample rates must be positive");
  if (from_rate == to_rate || x.empty()) return x;
  const auto n_out = static_cast<std::size_t>(
      std::floor(static_cast<double>(x.size() - 1) * to_rate / from_rate)) + 1;
  std::vector<double> y(n_out);
  const double step = from_rate / to_rate;
  for (std::size_t i = 0; i < n_out; ++i) {
    const double pos = static_cast<double>(i) * step;
    const auto k = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(k);
    y[i] = k + 1 < x.size() ? x[k] + frac * (x[k + 1] - x[k]) : x[k];
  }
  return y;
}

Waveform load_audio(const std::filesystem::path& path) {
  const auto wav = read_wav(path);
  Waveform w;
  w.samples = resample_linear(downmix(wav), wav.sample_rate, kTargetSampleRate);
  for (auto& s : w.samples) s = std::clamp(s, -1.0, 1.0);
  w.sample_rate = kTargetSampleRate;
  return w;
}

Crop crop_10s(const Waveform& w, std::uint64_t seed, std::string_view clip_id) {
  if (w.samples.empty()) {
    throw IngestionError("clip '" + std::string(clip_id) + "': empty waveform");
  }
  if (w.sample_rate != kTargetSampleRate) {
    throw ConfigError("crop_10s expects 22050 Hz audio");
  }
  Crop crop;
  crop.waveform.sample_rate = kTargetSampleRate;
  if (w.samples.size() <= kCropSamples) {
    crop.zero_padded = w.samples.size() < kCropSamples;
    crop.waveform.samples = w.samples;
    crop.waveform.samples.resize(kCropSamples, 0.0);
    return crop;
  }
  const std::uint64_t span = w.samples.size() - kCropSamples + 1;
  Rng rng(mix_seed(seed, fnv1a64(clip_id)));
  crop.offset = static_cast<std::size_t>(rng.below(span));
  crop.waveform.samples.assign(w.samples.begin() + static_cast<std::ptrdiff_t>(crop.offset),
                               w.samples.begin() +
                                   static_cast<std::ptrdiff_t>(crop.offset + kCropSamples));
  return crop;
}

}  // namespace merob
