#include "rage/layers.hpp"

#include "rage/ops.hpp"

namespace rage::layers {

using ops::operator+;
using ops::operator*;

template <typename T>
Conv2d<T>::Conv2d(ParameterStore<T>& store, const std::string& prefix,
                  std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                  std::size_t stride_, std::size_t padding_, Init weight_init)
    : weight(store.create(prefix + ".weight", {out_ch, in_ch, kernel, kernel},
                          weight_init, in_ch * kernel * kernel)),
      bias(store.create(prefix + ".bias", {out_ch}, Init::zeros)),
      stride(stride_),
      padding(padding_) {}

template <typename T>
Tensor<T> Conv2d<T>::operator()(const Tensor<T>& x) const {
  return ops::conv2d(x, weight, bias, stride, padding);
}

template <typename T>
GroupNorm<T>::GroupNorm(ParameterStore<T>& store, const std::string& prefix,
                        std::size_t channels)
    : gamma(store.create(prefix + ".gamma", {channels}, Init::ones)),
      beta(store.create(prefix + ".beta", {channels}, Init::zeros)),
      groups(norm_groups(channels)) {}

template <typename T>
Tensor<T> GroupNorm<T>::operator()(const Tensor<T>& x) const {
  return ops::group_norm(x, gamma, beta, groups);
}

template <typename T>
ResnetBlock<T>::ResnetBlock(ParameterStore<T>& store, const std::string& prefix,
                            std::size_t in_ch, std::size_t out_ch)
    : conv1(store, prefix + ".conv1", in_ch, out_ch, 3, 1, 1),
      norm1(store, prefix + ".norm1", out_ch),
      conv2(store, prefix + ".conv2", out_ch, out_ch, 3, 1, 1),
      norm2(store, prefix + ".norm2", out_ch) {
  if (in_ch != out_ch) shortcut.emplace(store, prefix + ".shortcut", in_ch, out_ch, 1, 1, 0);
}

template <typename T>
Tensor<T> ResnetBlock<T>::operator()(const Tensor<T>& x) const {
  Tensor<T> h = norm2(conv2(ops::relu(norm1(conv1(x)))));
  return (shortcut ? (*shortcut)(x) : x) + h;
}

template <typename T>
Downsample<T>::Downsample(ParameterStore<T>& store, const std::string& prefix,
                          std::size_t in_ch, std::size_t out_ch)
    : conv(store, prefix, in_ch, out_ch, 3, 2, 1) {}

template <typename T>
Tensor<T> Downsample<T>::operator()(const Tensor<T>& x) const {
  if (x.rank() != 4 || x.dim(2) % 2 || x.dim(3) % 2) {
    throw ShapeError("downsample: spatial extents must be even, got " +
                     shape_str(x.shape()));
  }
  return conv(x);
}

template <typename T>
AttentionGate<T>::AttentionGate(ParameterStore<T>& store, const std::string& prefix,
                                std::size_t skip_ch, std::size_t gate_ch)
    : wx(store, prefix + ".wx", skip_ch, gate_inter_channels(skip_ch), 1, 2, 0),
      wg(store, prefix + ".wg", gate_ch, gate_inter_channels(skip_ch), 1, 1, 0),
      psi(store, prefix + ".psi", gate_inter_channels(skip_ch), 1, 1, 1, 0) {}

template <typename T>
Tensor<T> AttentionGate<T>::operator()(const Tensor<T>& x_l, const Tensor<T>& g,
                                       Tensor<T>* alpha_out) const {
  if (x_l.rank() != 4 || g.rank() != 4 || x_l.dim(0) != g.dim(0) ||
      x_l.dim(2) != 2 * g.dim(2) || x_l.dim(3) != 2 * g.dim(3)) {
    throw ShapeError("attention gate: skip " + shape_str(x_l.shape()) +
                     " must have twice the extent of gating signal " +
                     shape_str(g.shape()));
  }
  Tensor<T> coarse = ops::sigmoid(psi(ops::relu(wx(x_l) + wg(g))));
  Tensor<T> alpha = ops::upsample2x(coarse);
  if (alpha_out) *alpha_out = alpha;
  return x_l * ops::broadcast_channels(alpha, x_l.dim(1));
}

template <typename T>
SelfAttention<T>::SelfAttention(ParameterStore<T>& store, const std::string& prefix,
                                std::size_t channels)
    : norm(store, prefix + ".norm", channels),
      query(store, prefix + ".q", channels, channels, 1, 1, 0),
      key(store, prefix + ".k", channels, channels, 1, 1, 0),
      value(store, prefix + ".v", channels, channels, 1, 1, 0),
      out(store, prefix + ".out", channels, channels, 1, 1, 0) {}

template <typename T>
Tensor<T> SelfAttention<T>::operator()(const Tensor<T>& x,
                                       std::vector<T>* weights_out) const {
  const Tensor<T> h = norm(x);
  Tensor<T> attended = ops::scaled_dot_attention(
      ops::to_sequence(query(h)), ops::to_sequence(key(h)),
      ops::to_sequence(value(h)), weights_out);
  return x + out(ops::from_sequence(attended, x.dim(2), x.dim(3)));
}

template <typename T>
Bottleneck<T>::Bottleneck(ParameterStore<T>& store, const std::string& prefix,
                          std::size_t channels)
    : res1(store, prefix + ".res1", channels, channels),
      attention(store, prefix + ".attn", channels),
      res2(store, prefix + ".res2", channels, channels) {}

template <typename T>
Tensor<T> Bottleneck<T>::operator()(const Tensor<T>& x,
                                    std::vector<T>* weights_out) const {
  return res2(attention(res1(x), weights_out));
}

namespace {

template <typename T>
std::vector<ResnetBlock<T>> encoder_blocks(ParameterStore<T>& store,
                                           const std::string& prefix,
                                           const ModelConfig& cfg) {
  std::vector<ResnetBlock<T>> blocks;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::size_t ch = cfg.channels_at(l);
    blocks.emplace_back(store, prefix + "." + std::to_string(l) + ".res", ch, ch);
  }
  return blocks;
}

template <typename T>
std::vector<Downsample<T>> encoder_downs(ParameterStore<T>& store,
                                         const std::string& prefix,
                                         const ModelConfig& cfg) {
  std::vector<Downsample<T>> downs;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    downs.emplace_back(store, prefix + "." + std::to_string(l) + ".down",
                       cfg.channels_at(l), cfg.channels_at(l + 1));
  }
  return downs;
}

}  // namespace

template <typename T>
Encoder<T>::Encoder(ParameterStore<T>& store, const std::string& prefix,
                    const ModelConfig& cfg)
    : blocks(encoder_blocks(store, prefix, cfg)),
      downs(encoder_downs(store, prefix, cfg)),
      bottleneck(store, prefix + ".bottleneck", cfg.channels_at(cfg.depth)) {}

template <typename T>
EncoderFeatures<T> Encoder<T>::operator()(const Tensor<T>& x,
                                          std::vector<T>* attention_out) const {
  EncoderFeatures<T> f;
  Tensor<T> h = x;
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    h = blocks[l](h);
    f.skips.push_back(h);
    h = downs[l](h);
  }
  f.bottleneck = bottleneck(h, attention_out);
  return f;
}

template <typename T>
DecoderStage<T>::DecoderStage(ParameterStore<T>& store, const std::string& prefix,
                              std::size_t in_ch, std::size_t skip_ch,
                              bool use_gate, bool zero_head)
    : up(store, prefix + ".up", in_ch, skip_ch, 1, 1, 0),
      gate(use_gate ? std::optional<AttentionGate<T>>(
                          std::in_place, store, prefix + ".gate", skip_ch, in_ch)
                    : std::nullopt),
      res(store, prefix + ".res", skip_ch, skip_ch),
      head(store, prefix + ".head", skip_ch, 2, 3, 1, 1,
           zero_head ? Init::zeros : Init::kaiming_uniform) {}

template <typename T>
typename DecoderStage<T>::Output DecoderStage<T>::operator()(
    const Tensor<T>& d_in, const Tensor<T>& skip, Tensor<T>* alpha_out) const {
  Tensor<T> u = up(ops::upsample2x(d_in));
  Tensor<T> s = gate ? (*gate)(skip, d_in, alpha_out) : skip;
  Output o;
  o.features = ops::relu(res(u + s));
  o.head = head(o.features);
  return o;
}

template <typename T>
Tensor<T> aggregate_heads(const std::vector<Tensor<T>>& heads) {
  if (heads.empty()) throw std::invalid_argument("aggregate_heads: no heads");
  Tensor<T> acc = heads.front();
  for (std::size_t i = 1; i < heads.size(); ++i) {
    const auto& h = heads[i];
    if (h.rank() != 4 || h.dim(2) != 2 * acc.dim(2) || h.dim(3) != 2 * acc.dim(3)) {
      throw ShapeError("aggregate_heads: head " + shape_str(h.shape()) +
                       " is not twice the extent of " + shape_str(acc.shape()));
    }
    acc = ops::upsample2x(acc) + h;
  }
  return acc;
}

template <typename T>
Decoder<T>::Decoder(ParameterStore<T>& store, const std::string& prefix,
                    const ModelConfig& cfg, bool zero_heads) {
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    stages.emplace_back(store, prefix + "." + std::to_string(l),
                        cfg.channels_at(l + 1), cfg.channels_at(l),
                        cfg.use_attention_gates, zero_heads);
  }
}

template <typename T>
Tensor<T> Decoder<T>::operator()(const EncoderFeatures<T>& features,
                                 std::vector<Tensor<T>>* alphas_out) const {
  if (features.skips.size() != stages.size()) {
    throw ShapeError("decoder: expected " + std::to_string(stages.size()) +
                     " skip levels, got " + std::to_string(features.skips.size()));
  }
  std::vector<Tensor<T>> heads;
  Tensor<T> d = features.bottleneck;
  for (std::size_t l = stages.size(); l-- > 0;) {
    Tensor<T> alpha;
    auto o = stages[l](d, features.skips[l], alphas_out ? &alpha : nullptr);
    if (alphas_out && stages[l].gate) alphas_out->push_back(alpha);
    d = o.features;
    heads.push_back(o.head);
  }
  return aggregate_heads(heads);
}

#define RAGE_INSTANTIATE_LAYERS(T)                                   \
  template struct Conv2d<T>;                                         \
  template struct GroupNorm<T>;                                      \
  template struct ResnetBlock<T>;                                    \
  template struct Downsample<T>;                                     \
  template struct AttentionGate<T>;                                  \
  template struct SelfAttention<T>;                                  \
  template struct Bottleneck<T>;                                     \
  template struct Encoder<T>;                                        \
  template struct DecoderStage<T>;                                   \
  template struct Decoder<T>;                                        \
  template Tensor<T> aggregate_heads(const std::vector<Tensor<T>>&);

RAGE_INSTANTIATE_LAYERS(float)
RAGE_INSTANTIATE_LAYERS(double)

}  // namespace rage::layers
