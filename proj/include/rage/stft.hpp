#pragma once

#include <cstddef>
#include <vector>

#include "rage/tensor.hpp"
#include "rage/wav.hpp"

namespace rage {

/// Analysis parameters. The window is always a periodic Hann of length n_fft.
struct StftConfig {
  std::size_t n_fft = 512;
  std::size_t hop = 128;

  std::size_t bins() const { return n_fft / 2 + 1; }
  /// Throws std::invalid_argument unless hop divides n_fft and hop <= n_fft/2.
  void validate() const;
  bool operator==(const StftConfig&) const = default;
};

std::vector<double> hann_window(std::size_t n);

/// Complex STFT packed as two real channels: data is [2, F, T] with the real
/// part in channel 0 and the imaginary part in channel 1.
struct RISpectrogram {
  Tensor<double> data;
  StftConfig config;

  std::size_t bins() const { return data.dim(1); }
  std::size_t frames() const { return data.dim(2); }
  double real(std::size_t f, std::size_t t) const {
    return data.data()[f * frames() + t];
  }
  double imag(std::size_t f, std::size_t t) const {
    return data.data()[(bins() + f) * frames() + t];
  }
  /// Throws std::invalid_argument if the layout disagrees with `config`.
  void validate() const;
};

/// Centred STFT: reflect-pads n_fft/2 samples on both sides, frame t starts at
/// padded sample t*hop. Inputs shorter than n_fft are zero-padded first.
RISpectrogram stft(const WaveBuffer& wave, const StftConfig& cfg);

/// Weighted overlap-add inverse of `stft`, normalised by the summed squared
/// window. Returns `out_len` samples at `sample_rate_hz`.
WaveBuffer istft(const RISpectrogram& spec, std::size_t out_len,
                 int sample_rate_hz = 16000);

/// Number of samples `istft` can produce from `frames` frames.
std::size_t reconstructable_length(const StftConfig& cfg, std::size_t frames);

/// Magnitude compression of complex bins, c -> scale * |c|^exponent * e^{i arg c}.
/// exponent 1 with scale 1 is the identity.
struct SpectralCompression {
  double exponent = 0.5;
  double scale = 0.15;

  /// Throws std::invalid_argument unless 0 < exponent <= 1 and scale > 0.
  void validate() const;
  bool operator==(const SpectralCompression&) const = default;
};

/// Applies `c` to every complex bin of an [..., 2, F, T] tensor whose axis
/// rank-3 holds real and imaginary parts. Not differentiable.
Tensor<double> compress(const Tensor<double>& ri, const SpectralCompression& c);
/// Exact inverse of `compress` (zero stays zero).
Tensor<double> decompress(const Tensor<double>& ri, const SpectralCompression& c);

/// Smallest multiple of `multiple` that is >= n.
std::size_t round_up(std::size_t n, std::size_t multiple);

/// Zero-pads the two trailing axes up to multiples of `multiple`.
template <typename T>
Tensor<T> pad_to_multiple(const Tensor<T>& x, std::size_t multiple);

}  // namespace rage
