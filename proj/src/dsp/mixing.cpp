#include "rage/mixing.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace rage {

double measure_snr_db(const std::vector<double>& signal,
                      const std::vector<double>& noise) {
  return 20.0 * std::log10(rms(signal) / rms(noise));
}

MixResult mix_at_snr(const WaveBuffer& clean, const WaveBuffer& noise,
                     double snr_db, std::uint64_t seed) {
  clean.validate();
  noise.validate();
  if (clean.sample_rate_hz != noise.sample_rate_hz) {
    throw std::invalid_argument(
        "mix: sample rates differ (clean " + std::to_string(clean.sample_rate_hz) +
        " Hz, noise " + std::to_string(noise.sample_rate_hz) + " Hz)");
  }
  if (!std::isfinite(snr_db)) throw std::invalid_argument("mix: non-finite SNR");
  const double clean_rms = rms(clean.samples);
  if (clean_rms <= 0.0) throw std::invalid_argument("mix: clean signal is silent");
  if (rms(noise.samples) <= 0.0) throw std::invalid_argument("mix: noise is silent");

  const std::size_t len = clean.size();
  MixResult result;
  std::vector<double> segment(len);
  if (noise.size() > len) {
    // Raw engine output keeps offsets identical across standard libraries.
    std::mt19937_64 rng(seed);
    result.noise_offset = static_cast<std::size_t>(rng() % (noise.size() - len + 1));
  }
  for (std::size_t i = 0; i < len; ++i) {
    segment[i] = noise.samples[(result.noise_offset + i) % noise.size()];
  }
  const double segment_rms = rms(segment);
  if (segment_rms <= 0.0) {
    throw std::invalid_argument("mix: selected noise segment is silent");
  }

  result.noise_gain = clean_rms / segment_rms * std::pow(10.0, -snr_db / 20.0);
  result.noisy.sample_rate_hz = clean.sample_rate_hz;
  result.scaled_noise.sample_rate_hz = clean.sample_rate_hz;
  result.noisy.samples.resize(len);
  result.scaled_noise.samples.resize(len);
  double peak = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    const double n = result.noise_gain * segment[i];
    result.scaled_noise.samples[i] = n;
    result.noisy.samples[i] = clean.samples[i] + n;
    peak = std::max(peak, std::abs(result.noisy.samples[i]));
  }
  if (peak > 1.0) {
    result.peak_rescale = 1.0 / peak;
    for (std::size_t i = 0; i < len; ++i) {
      result.noisy.samples[i] *= result.peak_rescale;
      result.scaled_noise.samples[i] *= result.peak_rescale;
    }
  }
  return result;
}

}  // namespace rage
