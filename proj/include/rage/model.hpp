#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "rage/stft.hpp"
#include "rage/tensor.hpp"

namespace rage {

/// Topology of the enhancement network. Channel width at resolution level l
/// (0 = input resolution) is min(C * 2^l, 8 * C).
struct ModelConfig {
  std::size_t base_channels = 16;
  std::size_t depth = 4;
  bool use_attention_gates = true;
  bool use_reverse_attention = false;
  StftConfig stft;
  /// Network inputs and targets are compressed spectrograms; outputs are
  /// decompressed before synthesis.
  SpectralCompression compression;

  /// Throws std::invalid_argument for C < 2, D < 1, or RA without AG.
  void validate() const;
  std::size_t channels_at(std::size_t level) const;
  /// Spectrogram extents must be multiples of this (2^depth).
  std::size_t pad_multiple() const { return std::size_t{1} << depth; }
  bool operator==(const ModelConfig&) const = default;
};

/// 8 groups when the width allows it, otherwise a single group.
std::size_t norm_groups(std::size_t channels);
std::size_t gate_inter_channels(std::size_t skip_channels);

/// Scalar parameter count derived layer by layer from the configuration
/// alone, without building tensors.
std::size_t closed_form_param_count(const ModelConfig& cfg);

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

enum class Init { kaiming_uniform, zeros, ones };

/// Owns every trainable tensor of a model under a unique dotted name.
/// Creation order is fixed by the model, so a seed fixes all initial values.
template <typename T>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed) : rng_(seed) {}

  Tensor<T> create(const std::string& name, Shape shape, Init init,
                   std::size_t fan_in = 1);

  std::vector<Parameter<T>>& params() { return params_; }
  const std::vector<Parameter<T>>& params() const { return params_; }
  /// nullptr when absent.
  Tensor<T>* find(const std::string& name);
  const Tensor<T>* find(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::mt19937_64 rng_;
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

}  // namespace rage
