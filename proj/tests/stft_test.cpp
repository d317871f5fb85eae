#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "rage/stft.hpp"
#include "test_util.hpp"

using namespace rage;

namespace {

const StftConfig kCfg{512, 128};

// Direct O(N^2) DFT of one Hann-windowed frame of an already padded signal.
std::complex<double> direct_bin(const std::vector<double>& padded, std::size_t start,
                                std::size_t n, std::size_t k) {
  const auto w = hann_window(n);
  std::complex<double> acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double phase = -2.0 * std::numbers::pi * double(k * i) / double(n);
    acc += padded[start + i] * w[i] * std::polar(1.0, phase);
  }
  return acc;
}

double energy(const std::vector<double>& x) {
  double e = 0;
  for (double v : x) e += v * v;
  return e;
}

}  // namespace

TEST(Stft, ConfigValidation) {
  EXPECT_NO_THROW(kCfg.validate());
  EXPECT_THROW((StftConfig{512, 300}).validate(), std::invalid_argument);
  EXPECT_THROW((StftConfig{512, 512}).validate(), std::invalid_argument);
  EXPECT_THROW((StftConfig{511, 1}).validate(), std::invalid_argument);
  EXPECT_THROW((StftConfig{512, 0}).validate(), std::invalid_argument);
}

TEST(Stft, ShapeAndFrameCount) {
  WaveBuffer w{rage::testing::random_values(16000, 1), 16000};
  const auto s = stft(w, kCfg);
  EXPECT_EQ(s.data.shape(), (Shape{2, 257, 1 + 16000 / 128}));
}

TEST(Stft, ConstantSignalConcentratesInDc) {
  WaveBuffer w{std::vector<double>(4096, 1.0), 16000};
  const auto s = stft(w, kCfg);
  const auto win = hann_window(512);
  double win_sum = 0;
  for (double v : win) win_sum += v;
  // The windowed frame is the periodic Hann itself: its DFT is n/2 at DC,
  // -n/4 at bin 1 and zero from bin 2 on.
  for (std::size_t t = 0; t < s.frames(); ++t) {
    EXPECT_NEAR(std::hypot(s.real(0, t), s.imag(0, t)), win_sum, 1e-10 * win_sum);
    EXPECT_NEAR(s.real(1, t), -128.0, 1e-10 * win_sum);
    for (std::size_t f = 2; f < s.bins(); ++f) {
      EXPECT_LE(std::hypot(s.real(f, t), s.imag(f, t)), 1e-10 * win_sum);
    }
  }
}

TEST(Stft, BinFrequencySineConcentratesInItsBin) {
  const std::size_t k = 20;
  WaveBuffer w;
  for (int i = 0; i < 8192; ++i) {
    w.samples.push_back(std::cos(2 * std::numbers::pi * double(k) * i / 512.0));
  }
  const auto s = stft(w, kCfg);
  const std::size_t t = 10;  // interior frame
  std::size_t best = 0;
  double best_mag = 0, total = 0;
  for (std::size_t f = 0; f < s.bins(); ++f) {
    const double m = std::norm(std::complex<double>(s.real(f, t), s.imag(f, t)));
    total += m;
    if (m > best_mag) best_mag = m, best = f;
  }
  EXPECT_EQ(best, k);
  // A Hann window leaks into the two neighbours only.
  double near = 0;
  for (std::size_t f = k - 1; f <= k + 1; ++f) {
    near += std::norm(std::complex<double>(s.real(f, t), s.imag(f, t)));
  }
  EXPECT_GT(near / total, 1.0 - 1e-12);
}

TEST(Stft, MatchesDirectDftOracleIncludingReflectPadding) {
  auto x = rage::testing::random_values(2000, 2);
  const auto s = stft(WaveBuffer{x, 16000}, kCfg);
  std::vector<double> padded(x.size() + 512);
  for (std::size_t i = 0; i < padded.size(); ++i) {
    long j = long(i) - 256;
    if (j < 0) j = -j;
    if (j >= long(x.size())) j = 2 * long(x.size()) - 2 - j;
    padded[i] = x[j];
  }
  for (std::size_t t : {0ul, 3ul, s.frames() - 1}) {
    for (std::size_t f : {0ul, 1ul, 57ul, 256ul}) {
      const auto expected = direct_bin(padded, t * 128, 512, f);
      EXPECT_NEAR(s.real(f, t), expected.real(), 1e-9);
      EXPECT_NEAR(s.imag(f, t), expected.imag(), 1e-9);
    }
  }
}

TEST(Stft, EvenSignalCentredOnFrameHasZeroImaginary) {
  // Symmetric about sample 1280 = frame 10's centre; the periodic Hann window
  // is symmetric about n/2, so the frame is even and its DFT real.
  std::vector<double> x(4096);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = double(i) - 1280.0;
    x[i] = std::exp(-d * d / 5000.0) * std::cos(0.3 * d);
  }
  const auto s = stft(WaveBuffer{x, 16000}, kCfg);
  for (std::size_t f = 0; f < s.bins(); ++f) EXPECT_NEAR(s.imag(f, 10), 0.0, 1e-10);
}

TEST(Stft, ShortInputZeroPaddedToOneFrame) {
  const auto s = stft(WaveBuffer{{0.5, -0.25, 0.125}, 16000}, kCfg);
  EXPECT_EQ(s.bins(), 257u);
  EXPECT_EQ(s.frames(), 5u);
}

TEST(Stft, SquaredHannIsConstantOverlapAdd) {
  const auto w = hann_window(512);
  std::vector<double> acc(512 * 8, 0.0);
  for (std::size_t start = 0; start + 512 <= acc.size(); start += 128) {
    for (std::size_t i = 0; i < 512; ++i) acc[start + i] += w[i] * w[i];
  }
  for (std::size_t i = 512; i < acc.size() - 512; ++i) {
    EXPECT_NEAR(acc[i], 1.5, 1e-10);
  }
}

TEST(Istft, RoundTripRandomSignals) {
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t len = 3000 + 1777 * trial;
    auto x = rage::testing::random_values(len, 100 + trial);
    const auto y = istft(stft(WaveBuffer{x, 16000}, kCfg), len);
    ASSERT_EQ(y.size(), len);
    double worst = 0;
    for (std::size_t i = 0; i < len; ++i) worst = std::max(worst, std::abs(y.samples[i] - x[i]));
    EXPECT_LE(worst, 1e-10);
    EXPECT_NEAR(energy(y.samples), energy(x), 1e-8 * energy(x));
  }
}

TEST(Istft, ZeroSpectrogramGivesSilence) {
  RISpectrogram s{Tensor<double>::zeros({2, 257, 20}), kCfg};
  const auto y = istft(s, 2000);
  for (double v : y.samples) EXPECT_EQ(v, 0.0);
}

TEST(Istft, RejectsOverlongRequestAndBadLayout) {
  RISpectrogram s{Tensor<double>::zeros({2, 257, 4}), kCfg};
  EXPECT_THROW(istft(s, reconstructable_length(kCfg, 4) + 1), std::invalid_argument);
  RISpectrogram bad{Tensor<double>::zeros({2, 100, 4}), kCfg};
  EXPECT_THROW(istft(bad, 10), std::invalid_argument);
}

TEST(PadToMultiple, PadsTrailingAxesWithZeros) {
  auto x = rage::testing::random_tensor({2, 5, 3}, 9);
  auto p = pad_to_multiple(x, 4);
  EXPECT_EQ(p.shape(), (Shape{2, 8, 4}));
  EXPECT_EQ(p.data()[(1 * 8 + 4) * 4 + 2], x.data()[(1 * 5 + 4) * 3 + 2]);
  EXPECT_EQ(p.data()[(1 * 8 + 5) * 4 + 0], 0.0);
  EXPECT_EQ(p.data()[(0 * 8 + 0) * 4 + 3], 0.0);
}
