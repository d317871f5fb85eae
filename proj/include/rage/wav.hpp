#pragma once

#include <filesystem>
#include <stdexcept>
#include <vector>

namespace rage {

/// Mono audio with samples nominally in [-1, 1].
struct WaveBuffer {
  std::vector<double> samples;
  int sample_rate_hz = 16000;

  std::size_t size() const { return samples.size(); }
  double seconds() const {
    return static_cast<double>(samples.size()) / sample_rate_hz;
  }
  /// Throws std::invalid_argument on a non-positive rate or non-finite sample.
  void validate() const;
};

class WavError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads a RIFF/WAVE file holding 16-bit PCM mono audio.
WaveBuffer read_wav(const std::filesystem::path& path);

/// Writes 16-bit PCM mono. Samples are clamped to [-1, 1] and quantised as
/// round(x * 32768), saturating at 32767.
void write_wav(const std::filesystem::path& path, const WaveBuffer& wave);

double rms(const std::vector<double>& samples);

}  // namespace rage
