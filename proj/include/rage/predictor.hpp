#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "rage/layers.hpp"
#include "rage/model.hpp"
#include "rage/stft.hpp"

namespace rage {

struct InitOptions {
  std::uint64_t seed = 0;
  // Zero 3x3 collapse heads make the untrained model output an all-zero
  // spectrogram.
  bool zero_heads = true;
};

/// Intermediate values recorded by a forward pass.
template <typename T>
struct ForwardTrace {
  std::vector<Tensor<T>> alphas;           // every gate, every branch
  std::vector<Tensor<T>> branch_outputs;   // aggregated output per decoder
  std::vector<std::vector<T>> attention;   // bottleneck attention matrices
};

enum class Branch { left = 0, middle = 1, right = 2 };

/// Attention-gated ResNet U-Net over [N,2,F,T] real/imaginary spectrograms,
/// optionally wrapped in the three-decoder reverse-attention scheme:
///   N_s = E_r,s * sigmoid(-E_c,s)
///   out = dec_L(E_c) + dec_M(E_c - N) + dec_R(-E_c)
/// Input extents must be multiples of 2^depth.
template <typename T>
class Predictor {
 public:
  explicit Predictor(const ModelConfig& cfg, InitOptions init = {});
  Predictor(const Predictor&) = delete;
  Predictor& operator=(const Predictor&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }
  std::size_t parameter_count() const { return store_.scalar_count(); }

  Tensor<T> forward(const Tensor<T>& x, ForwardTrace<T>* trace = nullptr) const;

  Tensor<T> stem(const Tensor<T>& x) const;
  layers::EncoderFeatures<T> encode(const Tensor<T>& stem_out,
                                    ForwardTrace<T>* trace = nullptr) const;
  /// Second (reverse) encoder; only present with reverse attention.
  layers::EncoderFeatures<T> encode_reverse(const Tensor<T>& stem_out,
                                            ForwardTrace<T>* trace = nullptr) const;
  Tensor<T> decode(Branch branch, const layers::EncoderFeatures<T>& features,
                   ForwardTrace<T>* trace = nullptr) const;

  /// Features fed to the middle and right decoders.
  struct ReverseInputs {
    layers::EncoderFeatures<T> middle;
    layers::EncoderFeatures<T> right;
  };
  static ReverseInputs reverse_inputs(const layers::EncoderFeatures<T>& central,
                                      const layers::EncoderFeatures<T>& reverse);

 private:
  void check_input(const Tensor<T>& x) const;

  ModelConfig cfg_;
  ParameterStore<T> store_;
  layers::Conv2d<T> stem_;
  layers::Encoder<T> encoder_;
  std::optional<layers::Encoder<T>> reverse_encoder_;
  std::vector<layers::Decoder<T>> decoders_;
};

/// The network sees compressed spectrograms divided, per example, by the RMS
/// of the compressed noisy input over its unpadded `bins` x `frames` cells.
/// Targets share the noisy input's divisor, and outputs are multiplied back
/// before decompression.
struct NetworkDomain {
  std::vector<double> divisors;  // one per example; 1 for silent inputs

  /// Fixes the divisors from a raw [N,2,F',T'] noisy batch (zero padding
  /// beyond bins x frames is allowed).
  static NetworkDomain from_noisy(const ModelConfig& cfg, const Tensor<double>& noisy,
                                  std::size_t bins, std::size_t frames);
  Tensor<double> to_network(const ModelConfig& cfg, const Tensor<double>& raw) const;
  Tensor<double> from_network(const ModelConfig& cfg, const Tensor<double>& net) const;
};

/// Pads a single spectrogram to the model's extent multiple, runs the
/// predictor without recording gradients and crops back to [2,F,T].
template <typename T>
RISpectrogram enhance_spectrogram(const Predictor<T>& model,
                                  const RISpectrogram& noisy);

/// Noisy waveform -> STFT -> predictor -> ISTFT, same length as the input.
template <typename T>
WaveBuffer enhance_waveform(const Predictor<T>& model, const WaveBuffer& noisy);

extern template class Predictor<float>;
extern template class Predictor<double>;

}  // namespace rage
