#include "rage/wav.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace rage {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

void put16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

}  // namespace

void WaveBuffer::validate() const {
  if (sample_rate_hz <= 0) {
    throw std::invalid_argument("wave: sample rate must be positive, got " +
                                std::to_string(sample_rate_hz));
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!std::isfinite(samples[i])) {
      throw std::invalid_argument("wave: non-finite sample at index " +
                                  std::to_string(i));
    }
  }
}

double rms(const std::vector<double>& samples) {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (double s : samples) acc += s * s;
  return std::sqrt(acc / static_cast<double>(samples.size()));
}

WaveBuffer read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WavError(path.string() + ": cannot open");
  const std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t size = bytes.size();
  const std::string where = path.string() + ": ";

  if (size < 12 || std::memcmp(p, "RIFF", 4) != 0 ||
      std::memcmp(p + 8, "WAVE", 4) != 0) {
    throw WavError(where + "not a RIFF/WAVE file");
  }

  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= size) {
    const std::uint32_t chunk = le32(p + pos + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(p + pos, "fmt ", 4) == 0) {
      if (chunk < 16 || body + chunk > size) {
        throw WavError(where + "truncated fmt chunk");
      }
      std::uint16_t format = le16(p + body);
      channels = le16(p + body + 2);
      rate = le32(p + body + 4);
      bits = le16(p + body + 14);
      if (format == kFormatExtensible && chunk >= 26) {
        format = le16(p + body + 24);
      }
      if (format != kFormatPcm) {
        throw WavError(where + "unsupported encoding (format tag " +
                       std::to_string(format) + "), expected PCM");
      }
      if (channels != 1) {
        throw WavError(where + "unsupported channel count " +
                       std::to_string(channels) + ", expected mono");
      }
      if (bits != 16) {
        throw WavError(where + "unsupported bit depth " +
                       std::to_string(bits) + ", expected 16");
      }
      if (rate == 0) throw WavError(where + "zero sample rate");
      have_fmt = true;
    } else if (std::memcmp(p + pos, "data", 4) == 0) {
      if (!have_fmt) throw WavError(where + "data chunk before fmt chunk");
      if (body + chunk > size) {
        throw WavError(where + "truncated data chunk: header declares " +
                       std::to_string(chunk) + " bytes, file holds " +
                       std::to_string(size - body));
      }
      if (chunk % 2 != 0) throw WavError(where + "odd-sized 16-bit data chunk");
      WaveBuffer wave;
      wave.sample_rate_hz = static_cast<int>(rate);
      wave.samples.resize(chunk / 2);
      for (std::size_t i = 0; i < wave.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(le16(p + body + 2 * i));
        wave.samples[i] = static_cast<double>(v) / 32768.0;
      }
      return wave;
    }
    pos = body + chunk + (chunk & 1);
  }
  throw WavError(where + (have_fmt ? "missing data chunk" : "missing fmt chunk"));
}

void write_wav(const std::filesystem::path& path, const WaveBuffer& wave) {
  wave.validate();
  const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put32(out, 16);
  put16(out, kFormatPcm);
  put16(out, 1);
  put32(out, static_cast<std::uint32_t>(wave.sample_rate_hz));
  put32(out, static_cast<std::uint32_t>(wave.sample_rate_hz) * 2);
  put16(out, 2);
  put16(out, 16);
  out += "data";
  put32(out, data_bytes);
  for (double s : wave.samples) {
    const double q = std::round(std::clamp(s, -1.0, 1.0) * 32768.0);
    put16(out, static_cast<std::uint16_t>(
                   static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0))));
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw WavError(path.string() + ": cannot open for writing");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw WavError(path.string() + ": write failed");
}

}  // namespace rage
