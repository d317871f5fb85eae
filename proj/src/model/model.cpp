#include "rage/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rage {

void ModelConfig::validate() const {
  if (base_channels < 2) {
    throw std::invalid_argument("model: base channels must be >= 2, got " +
                                std::to_string(base_channels));
  }
  if (depth < 1 || depth > 12) {
    throw std::invalid_argument("model: depth must be in [1, 12], got " +
                                std::to_string(depth));
  }
  if (use_reverse_attention && !use_attention_gates) {
    throw std::invalid_argument(
        "model: reverse attention wraps the attention-gated model; enable gates");
  }
  stft.validate();
  compression.validate();
}

std::size_t ModelConfig::channels_at(std::size_t level) const {
  return std::min(base_channels << level, 8 * base_channels);
}

std::size_t norm_groups(std::size_t channels) {
  return channels % 8 == 0 ? 8 : 1;
}

std::size_t gate_inter_channels(std::size_t skip_channels) {
  return std::max<std::size_t>(1, skip_channels / 2);
}

namespace {

std::size_t conv_params(std::size_t in, std::size_t out, std::size_t k) {
  return out * (in * k * k + 1);
}

std::size_t norm_params(std::size_t ch) { return 2 * ch; }

std::size_t resnet_params(std::size_t in, std::size_t out) {
  return conv_params(in, out, 3) + norm_params(out) + conv_params(out, out, 3) +
         norm_params(out) + (in == out ? 0 : conv_params(in, out, 1));
}

std::size_t gate_params(std::size_t skip, std::size_t gating) {
  const std::size_t inter = gate_inter_channels(skip);
  return conv_params(skip, inter, 1) + conv_params(gating, inter, 1) +
         conv_params(inter, 1, 1);
}

std::size_t bottleneck_params(std::size_t ch) {
  return 2 * resnet_params(ch, ch) + norm_params(ch) + 4 * conv_params(ch, ch, 1);
}

}  // namespace

std::size_t closed_form_param_count(const ModelConfig& cfg) {
  cfg.validate();
  std::size_t encoder = 0, decoder = 0;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::size_t ch = cfg.channels_at(l), deeper = cfg.channels_at(l + 1);
    encoder += resnet_params(ch, ch) + conv_params(ch, deeper, 3);
    decoder += conv_params(deeper, ch, 1) + resnet_params(ch, ch) +
               conv_params(ch, 2, 3);
    if (cfg.use_attention_gates) decoder += gate_params(ch, deeper);
  }
  encoder += bottleneck_params(cfg.channels_at(cfg.depth));
  const std::size_t stem = conv_params(2, cfg.base_channels, 1);
  if (cfg.use_reverse_attention) return stem + 2 * encoder + 3 * decoder;
  return stem + encoder + decoder;
}

template <typename T>
Tensor<T> ParameterStore<T>::create(const std::string& name, Shape shape,
                                    Init init, std::size_t fan_in) {
  if (index_.count(name)) {
    throw std::logic_error("parameter store: duplicate name " + name);
  }
  std::vector<T> values(shape_numel(shape), T(0));
  if (init == Init::ones) {
    std::fill(values.begin(), values.end(), T(1));
  } else if (init == Init::kaiming_uniform) {
    // Gain 1: the residual sums and skip adds are not renormalized, so
    // variance-preserving layers keep the trunk at unit scale.
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    for (auto& v : values) {
      // 53 random bits -> [0, 1); independent of the standard library's
      // distribution implementations.
      const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
      v = static_cast<T>((2.0 * u - 1.0) * bound);
    }
  }
  Tensor<T> t(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  index_.emplace(name, params_.size());
  params_.push_back({name, t});
  return t;
}

template <typename T>
Tensor<T>* ParameterStore<T>::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second].tensor;
}

template <typename T>
const Tensor<T>* ParameterStore<T>::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second].tensor;
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template class ParameterStore<float>;
template class ParameterStore<double>;

}  // namespace rage
