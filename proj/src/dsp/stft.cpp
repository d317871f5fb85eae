#include "rage/stft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>

namespace rage {
namespace {

fftw_complex* as_fftw(std::complex<double>* p) {
  return reinterpret_cast<fftw_complex*>(p);
}

// Plans are created once per size; fftw_execute_dft_* on fresh arrays is
// thread-safe, planning is not.
struct FftPlans {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

const FftPlans& plans_for(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, FftPlans> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<double> real(n);
  std::vector<std::complex<double>> spec(n / 2 + 1);
  const int size = static_cast<int>(n);
  FftPlans p;
  p.forward = fftw_plan_dft_r2c_1d(size, real.data(), as_fftw(spec.data()),
                                   FFTW_ESTIMATE | FFTW_UNALIGNED);
  p.inverse = fftw_plan_dft_c2r_1d(size, as_fftw(spec.data()), real.data(),
                                   FFTW_ESTIMATE | FFTW_UNALIGNED);
  return cache.emplace(n, p).first->second;
}

}  // namespace

void StftConfig::validate() const {
  if (n_fft < 2 || n_fft % 2 != 0) {
    throw std::invalid_argument("stft: n_fft must be even and >= 2, got " +
                                std::to_string(n_fft));
  }
  if (hop == 0 || n_fft % hop != 0 || hop > n_fft / 2) {
    throw std::invalid_argument("stft: hop " + std::to_string(hop) +
                                " must divide n_fft " + std::to_string(n_fft) +
                                " and be at most n_fft/2");
  }
}

void RISpectrogram::validate() const {
  config.validate();
  if (data.rank() != 3 || data.dim(0) != 2) {
    throw std::invalid_argument("spectrogram: expected [2,F,T], got " +
                                shape_str(data.shape()));
  }
  if (data.dim(1) != config.bins()) {
    throw std::invalid_argument("spectrogram: " + std::to_string(data.dim(1)) +
                                " bins inconsistent with n_fft " +
                                std::to_string(config.n_fft));
  }
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                static_cast<double>(n));
  }
  return w;
}

RISpectrogram stft(const WaveBuffer& wave, const StftConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.n_fft;
  const std::size_t half = n / 2;
  std::vector<double> x = wave.samples;
  if (x.size() < n) x.resize(n, 0.0);

  // Reflect padding excludes the edge sample, as in numpy's "reflect" mode.
  const std::size_t len = x.size();
  std::vector<double> padded(len + 2 * half);
  for (std::size_t i = 0; i < half; ++i) {
    padded[half - 1 - i] = x[i + 1];
    padded[half + len + i] = x[len - 2 - i];
  }
  std::copy(x.begin(), x.end(), padded.begin() + static_cast<std::ptrdiff_t>(half));

  const std::size_t frames = 1 + len / cfg.hop;
  const std::size_t bins = cfg.bins();
  const auto window = hann_window(n);
  const FftPlans& plans = plans_for(n);
  std::vector<double> frame(n);
  std::vector<std::complex<double>> spec(bins);
  std::vector<double> out(2 * bins * frames);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < n; ++i) frame[i] = padded[t * cfg.hop + i] * window[i];
    fftw_execute_dft_r2c(plans.forward, frame.data(), as_fftw(spec.data()));
    for (std::size_t f = 0; f < bins; ++f) {
      out[f * frames + t] = spec[f].real();
      out[(bins + f) * frames + t] = spec[f].imag();
    }
  }
  return RISpectrogram{Tensor<double>({2, bins, frames}, std::move(out)), cfg};
}

std::size_t reconstructable_length(const StftConfig& cfg, std::size_t frames) {
  if (frames == 0) return 0;
  return cfg.hop * (frames - 1) + cfg.n_fft / 2;
}

WaveBuffer istft(const RISpectrogram& spec, std::size_t out_len,
                 int sample_rate_hz) {
  spec.validate();
  const StftConfig& cfg = spec.config;
  const std::size_t n = cfg.n_fft;
  const std::size_t half = n / 2;
  const std::size_t bins = spec.bins();
  const std::size_t frames = spec.frames();
  if (out_len > reconstructable_length(cfg, frames)) {
    throw std::invalid_argument(
        "istft: requested " + std::to_string(out_len) + " samples but " +
        std::to_string(frames) + " frames reconstruct at most " +
        std::to_string(reconstructable_length(cfg, frames)));
  }

  const auto window = hann_window(n);
  const FftPlans& plans = plans_for(n);
  const std::size_t total = n + cfg.hop * (frames - 1);
  std::vector<double> acc(total, 0.0), norm(total, 0.0);
  std::vector<std::complex<double>> bins_buf(bins);
  std::vector<double> frame(n);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t f = 0; f < bins; ++f) {
      bins_buf[f] = {spec.real(f, t), spec.imag(f, t)};
    }
    // c2r ignores the imaginary parts of DC and Nyquist, matching irfft.
    fftw_execute_dft_c2r(plans.inverse, as_fftw(bins_buf.data()), frame.data());
    const std::size_t start = t * cfg.hop;
    for (std::size_t i = 0; i < n; ++i) {
      acc[start + i] += frame[i] / static_cast<double>(n) * window[i];
      norm[start + i] += window[i] * window[i];
    }
  }

  WaveBuffer out;
  out.sample_rate_hz = sample_rate_hz;
  out.samples.resize(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    const double d = norm[half + i];
    if (d < 1e-10) {
      throw std::runtime_error("istft: window normalisation vanishes at sample " +
                               std::to_string(i));
    }
    out.samples[i] = acc[half + i] / d;
  }
  return out;
}

std::size_t round_up(std::size_t n, std::size_t multiple) {
  if (multiple == 0) throw std::invalid_argument("round_up: zero multiple");
  return (n + multiple - 1) / multiple * multiple;
}

template <typename T>
Tensor<T> pad_to_multiple(const Tensor<T>& x, std::size_t multiple) {
  if (x.rank() < 2) {
    throw ShapeError("pad_to_multiple: need at least 2 axes, got " +
                     shape_str(x.shape()));
  }
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  const std::size_t hp = round_up(h, multiple), wp = round_up(w, multiple);
  const std::size_t planes = x.numel() / (h * w);
  Shape shape = x.shape();
  shape[shape.size() - 2] = hp;
  shape[shape.size() - 1] = wp;
  Buffer<T> out(planes * hp * wp, T(0));
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < h; ++y) {
      const T* src = x.data().data() + (p * h + y) * w;
      std::copy(src, src + w, out.data() + (p * hp + y) * wp);
    }
  }
  return make_result<T>(std::move(shape), std::move(out), {}, nullptr);
}

void SpectralCompression::validate() const {
  if (!(exponent > 0 && exponent <= 1)) {
    throw std::invalid_argument("compression exponent must be in (0, 1]");
  }
  if (!(scale > 0) || !std::isfinite(scale)) {
    throw std::invalid_argument("compression scale must be positive");
  }
}

namespace {

Tensor<double> map_magnitudes(const Tensor<double>& ri, double exponent, double scale) {
  if (ri.rank() < 3 || ri.dim(ri.rank() - 3) != 2) {
    throw ShapeError("spectral compression: expected [..., 2, F, T], got " +
                     shape_str(ri.shape()));
  }
  const std::size_t plane = ri.dim(ri.rank() - 2) * ri.dim(ri.rank() - 1);
  const std::size_t items = ri.numel() / (2 * plane);
  const auto src = ri.data();
  std::vector<double> out(src.size());
  for (std::size_t n = 0; n < items; ++n) {
    const std::size_t re0 = n * 2 * plane, im0 = re0 + plane;
    for (std::size_t k = 0; k < plane; ++k) {
      const double re = src[re0 + k], im = src[im0 + k];
      const double mag = std::hypot(re, im);
      // |c|^e * c/|c| = c * |c|^(e-1); zero bins stay zero.
      const double gain = mag > 0 ? scale * std::pow(mag, exponent - 1.0) : 0.0;
      out[re0 + k] = re * gain;
      out[im0 + k] = im * gain;
    }
  }
  return Tensor<double>(ri.shape(), std::move(out));
}

}  // namespace

Tensor<double> compress(const Tensor<double>& ri, const SpectralCompression& c) {
  c.validate();
  return map_magnitudes(ri, c.exponent, c.scale);
}

Tensor<double> decompress(const Tensor<double>& ri, const SpectralCompression& c) {
  c.validate();
  // |y| = s |c|^e  =>  |c| = (|y| / s)^(1/e).
  const double e = 1.0 / c.exponent;
  return map_magnitudes(ri, e, std::pow(c.scale, -e));
}

template Tensor<float> pad_to_multiple(const Tensor<float>&, std::size_t);
template Tensor<double> pad_to_multiple(const Tensor<double>&, std::size_t);

}  // namespace rage
