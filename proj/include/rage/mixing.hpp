#pragma once

#include <cstdint>

#include "rage/wav.hpp"

namespace rage {

struct MixResult {
  WaveBuffer noisy;
  WaveBuffer scaled_noise;  // g * noise_segment, times peak_rescale
  double noise_gain = 1.0;  // g, before peak rescaling
  double peak_rescale = 1.0;
  std::size_t noise_offset = 0;
};

/// Adds `noise` to `clean` so that 20*log10(rms(clean) / rms(g*segment))
/// equals `snr_db`. A noise shorter than the clean signal is looped; a longer
/// one is sliced at an offset drawn from `seed`. If the mixture peaks above
/// 1, mixture and scaled noise are both scaled by 1/peak and the factor is
/// returned in `peak_rescale` so the clean reference can be scaled to match.
MixResult mix_at_snr(const WaveBuffer& clean, const WaveBuffer& noise,
                     double snr_db, std::uint64_t seed);

/// 20*log10(rms(signal)/rms(noise)).
double measure_snr_db(const std::vector<double>& signal,
                      const std::vector<double>& noise);

}  // namespace rage
