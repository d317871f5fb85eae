#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>

#include "rage/wav.hpp"
#include "test_util.hpp"

using namespace rage;
using rage::testing::TempDir;

namespace {

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST(Wav, SineRoundTripWithinOneLsb) {
  TempDir dir("wav");
  WaveBuffer sine;
  sine.sample_rate_hz = 16000;
  for (int i = 0; i < 16000; ++i) {
    sine.samples.push_back(0.8 * std::sin(2 * std::numbers::pi * 440.0 * i / 16000.0));
  }
  write_wav(dir / "sine.wav", sine);
  const auto back = read_wav(dir / "sine.wav");
  ASSERT_EQ(back.size(), sine.size());
  EXPECT_EQ(back.sample_rate_hz, 16000);
  for (std::size_t i = 0; i < sine.size(); ++i) {
    EXPECT_LE(std::abs(back.samples[i] - sine.samples[i]), std::ldexp(1.0, -15));
  }
}

TEST(Wav, RewriteIsByteIdentical) {
  TempDir dir("wav");
  WaveBuffer w{rage::testing::random_values(1234, 5), 8000};
  write_wav(dir / "a.wav", w);
  write_wav(dir / "b.wav", read_wav(dir / "a.wav"));
  EXPECT_EQ(read_bytes(dir / "a.wav"), read_bytes(dir / "b.wav"));
}

TEST(Wav, FullScaleIsClampedAndQuantised) {
  TempDir dir("wav");
  WaveBuffer w{{1.0, -1.0, 1.5, -2.0, 0.0}, 16000};
  write_wav(dir / "clip.wav", w);
  const auto back = read_wav(dir / "clip.wav");
  EXPECT_DOUBLE_EQ(back.samples[0], 32767.0 / 32768.0);
  EXPECT_DOUBLE_EQ(back.samples[1], -1.0);
  EXPECT_DOUBLE_EQ(back.samples[2], 32767.0 / 32768.0);
  EXPECT_DOUBLE_EQ(back.samples[3], -1.0);
  EXPECT_DOUBLE_EQ(back.samples[4], 0.0);
}

TEST(Wav, EmptyAudioIsValid) {
  TempDir dir("wav");
  write_wav(dir / "empty.wav", WaveBuffer{{}, 16000});
  const auto back = read_wav(dir / "empty.wav");
  EXPECT_TRUE(back.samples.empty());
  EXPECT_EQ(back.sample_rate_hz, 16000);
}

TEST(Wav, StereoRejected) {
  TempDir dir("wav");
  write_wav(dir / "mono.wav", WaveBuffer{{0.1, 0.2}, 16000});
  auto bytes = read_bytes(dir / "mono.wav");
  bytes[22] = 2;  // channel count field
  write_bytes(dir / "stereo.wav", bytes);
  try {
    read_wav(dir / "stereo.wav");
    FAIL() << "stereo file accepted";
  } catch (const WavError& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported channel count"), std::string::npos);
  }
}

TEST(Wav, NonPcmRejected) {
  TempDir dir("wav");
  write_wav(dir / "pcm.wav", WaveBuffer{{0.1, 0.2}, 16000});
  auto bytes = read_bytes(dir / "pcm.wav");
  bytes[20] = 3;  // IEEE float tag
  write_bytes(dir / "float.wav", bytes);
  EXPECT_THROW(read_wav(dir / "float.wav"), WavError);
}

TEST(Wav, TruncatedRejected) {
  TempDir dir("wav");
  write_wav(dir / "full.wav", WaveBuffer{rage::testing::random_values(100, 1), 16000});
  auto bytes = read_bytes(dir / "full.wav");
  write_bytes(dir / "cut.wav", bytes.substr(0, bytes.size() - 10));
  EXPECT_THROW(read_wav(dir / "cut.wav"), WavError);
  write_bytes(dir / "tiny.wav", bytes.substr(0, 8));
  EXPECT_THROW(read_wav(dir / "tiny.wav"), WavError);
  EXPECT_THROW(read_wav(dir / "missing.wav"), WavError);
}

TEST(Wav, NonFiniteSamplesRejectedOnWrite) {
  TempDir dir("wav");
  EXPECT_THROW(write_wav(dir / "nan.wav", WaveBuffer{{0.0, std::nan("")}, 16000}),
               std::invalid_argument);
}
