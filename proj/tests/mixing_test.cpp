#include <gtest/gtest.h>

#include <cmath>

#include "rage/mixing.hpp"
#include "test_util.hpp"

using namespace rage;
using rage::testing::random_values;

namespace {

WaveBuffer scaled(std::vector<double> v, double target_rms) {
  const double r = rms(v);
  for (auto& s : v) s *= target_rms / r;
  return WaveBuffer{std::move(v), 16000};
}

}  // namespace

TEST(MixAtSnr, EqualRmsAtZeroDbHasUnitGain) {
  auto clean = scaled(random_values(4000, 1), 0.1);
  auto noise = scaled(random_values(4000, 2), 0.1);
  const auto m = mix_at_snr(clean, noise, 0.0, 3);
  EXPECT_NEAR(m.noise_gain, 1.0, 1e-12);
  EXPECT_EQ(m.peak_rescale, 1.0);
}

TEST(MixAtSnr, SixDbGainClosedForm) {
  auto clean = scaled(random_values(4000, 4), 0.2);
  auto noise = scaled(random_values(4000, 5), 0.05);
  const auto m = mix_at_snr(clean, noise, 6.0, 6);
  EXPECT_NEAR(m.noise_gain, std::pow(10.0, -0.3) * 0.2 / 0.05, 1e-12);
  EXPECT_NEAR(std::pow(10.0, -0.3), 0.5012, 1e-4);
}

TEST(MixAtSnr, MeasuredSnrMatchesTarget) {
  for (int trial = 0; trial < 20; ++trial) {
    const double snr = -10.0 + trial * 1.7;
    auto clean = scaled(random_values(3000 + 50 * trial, 10 + trial), 0.05);
    auto noise = scaled(random_values(7000, 40 + trial), 0.3);
    const auto m = mix_at_snr(clean, noise, snr, trial);
    std::vector<double> unscaled = m.scaled_noise.samples;
    for (auto& s : unscaled) s /= m.peak_rescale;
    EXPECT_NEAR(measure_snr_db(clean.samples, unscaled), snr, 1e-6);
    // Rescaling applies to both sides so the persisted pair keeps the SNR.
    std::vector<double> ref = clean.samples;
    for (auto& s : ref) s *= m.peak_rescale;
    EXPECT_NEAR(measure_snr_db(ref, m.scaled_noise.samples), snr, 1e-6);
  }
}

TEST(MixAtSnr, ShortNoiseIsLooped) {
  auto clean = scaled(random_values(1000, 7), 0.1);
  WaveBuffer noise{random_values(300, 8), 16000};
  const auto m = mix_at_snr(clean, noise, 3.0, 0);
  EXPECT_EQ(m.noise_offset, 0u);
  for (std::size_t i = 0; i < 1000; ++i) {
    EXPECT_NEAR(m.scaled_noise.samples[i], m.noise_gain * noise.samples[i % 300], 1e-15);
  }
}

TEST(MixAtSnr, LongNoiseSlicedAtSeededOffset) {
  auto clean = scaled(random_values(1000, 9), 0.1);
  WaveBuffer noise{random_values(50000, 10), 16000};
  const auto a = mix_at_snr(clean, noise, 0.0, 42);
  const auto b = mix_at_snr(clean, noise, 0.0, 42);
  const auto c = mix_at_snr(clean, noise, 0.0, 43);
  EXPECT_EQ(a.noise_offset, b.noise_offset);
  EXPECT_EQ(a.noisy.samples, b.noisy.samples);
  EXPECT_NE(a.noise_offset, c.noise_offset);
  EXPECT_LE(a.noise_offset, 49000u);
  EXPECT_NEAR(a.scaled_noise.samples[0], a.noise_gain * noise.samples[a.noise_offset], 1e-15);
}

TEST(MixAtSnr, ClippingRescalesByPeak) {
  auto clean = scaled(random_values(2000, 11), 0.5);
  auto noise = scaled(random_values(2000, 12), 0.5);
  const auto m = mix_at_snr(clean, noise, -3.0, 1);
  EXPECT_LT(m.peak_rescale, 1.0);
  double peak = 0;
  for (double s : m.noisy.samples) peak = std::max(peak, std::abs(s));
  EXPECT_NEAR(peak, 1.0, 1e-12);
}

TEST(MixAtSnr, RejectsSilenceAndRateMismatch) {
  WaveBuffer silent{std::vector<double>(100, 0.0), 16000};
  WaveBuffer sig{random_values(100, 13), 16000};
  EXPECT_THROW(mix_at_snr(silent, sig, 0.0, 0), std::invalid_argument);
  EXPECT_THROW(mix_at_snr(sig, silent, 0.0, 0), std::invalid_argument);
  WaveBuffer other_rate{random_values(100, 14), 8000};
  EXPECT_THROW(mix_at_snr(sig, other_rate, 0.0, 0), std::invalid_argument);
}
