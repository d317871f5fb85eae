#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rage/model.hpp"
#include "rage/tensor.hpp"

// Building blocks of the enhancement U-Net. Every layer registers its
// parameters in a ParameterStore under `prefix` at construction.
namespace rage::layers {

template <typename T>
struct Conv2d {
  Tensor<T> weight, bias;
  std::size_t stride = 1, padding = 0;

  Conv2d(ParameterStore<T>& store, const std::string& prefix, std::size_t in_ch,
         std::size_t out_ch, std::size_t kernel, std::size_t stride,
         std::size_t padding, Init weight_init = Init::kaiming_uniform);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

template <typename T>
struct GroupNorm {
  Tensor<T> gamma, beta;
  std::size_t groups;

  GroupNorm(ParameterStore<T>& store, const std::string& prefix,
            std::size_t channels);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

/// shortcut(x) + norm2(conv2(relu(norm1(conv1(x))))), 3x3 convs, padding 1.
/// The shortcut is the identity when widths agree, else a 1x1 conv.
template <typename T>
struct ResnetBlock {
  Conv2d<T> conv1;
  GroupNorm<T> norm1;
  Conv2d<T> conv2;
  GroupNorm<T> norm2;
  std::optional<Conv2d<T>> shortcut;

  ResnetBlock(ParameterStore<T>& store, const std::string& prefix,
              std::size_t in_ch, std::size_t out_ch);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

/// Strided 3x3 conv halving both spatial extents. Odd extents are rejected.
template <typename T>
struct Downsample {
  Conv2d<T> conv;

  Downsample(ParameterStore<T>& store, const std::string& prefix,
             std::size_t in_ch, std::size_t out_ch);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

/// Additive attention gate on a skip connection. The gating signal g has half
/// the spatial extent of the skip feature x_l; coefficients are computed at
/// g's resolution and upsampled:
///   alpha = up2(sigmoid(psi(relu(W_x(x_l; stride 2) + W_g(g)))))
///   out   = alpha * x_l   (alpha broadcast across channels)
template <typename T>
struct AttentionGate {
  Conv2d<T> wx, wg, psi;

  AttentionGate(ParameterStore<T>& store, const std::string& prefix,
                std::size_t skip_ch, std::size_t gate_ch);
  /// When `alpha_out` is non-null the [N,1,H,W] coefficients are stored there.
  Tensor<T> operator()(const Tensor<T>& x_l, const Tensor<T>& g,
                       Tensor<T>* alpha_out = nullptr) const;
};

/// Single-head self-attention over spatial positions with channels as the
/// embedding, added back onto its input.
template <typename T>
struct SelfAttention {
  GroupNorm<T> norm;  // q, k and v see normalized features
  Conv2d<T> query, key, value, out;

  SelfAttention(ParameterStore<T>& store, const std::string& prefix,
                std::size_t channels);
  Tensor<T> operator()(const Tensor<T>& x,
                       std::vector<T>* weights_out = nullptr) const;
};

/// ResnetBlock -> SelfAttention -> ResnetBlock at the coarsest resolution.
template <typename T>
struct Bottleneck {
  ResnetBlock<T> res1;
  SelfAttention<T> attention;
  ResnetBlock<T> res2;

  Bottleneck(ParameterStore<T>& store, const std::string& prefix,
             std::size_t channels);
  Tensor<T> operator()(const Tensor<T>& x,
                       std::vector<T>* weights_out = nullptr) const;
};

/// Encoder outputs: skips[l] is the ResNet output at resolution level l
/// (before its downsampler), `bottleneck` the deepest feature.
template <typename T>
struct EncoderFeatures {
  std::vector<Tensor<T>> skips;
  Tensor<T> bottleneck;
};

template <typename T>
struct Encoder {
  std::vector<ResnetBlock<T>> blocks;
  std::vector<Downsample<T>> downs;
  Bottleneck<T> bottleneck;

  Encoder(ParameterStore<T>& store, const std::string& prefix,
          const ModelConfig& cfg);
  EncoderFeatures<T> operator()(const Tensor<T>& x,
                                std::vector<T>* attention_out = nullptr) const;
};

/// One upsampling stage: u = conv1x1(up2(d_in)), c = u + gate(skip, d_in),
/// d_out = relu(resnet(c)), head = conv3x3(d_out) -> 2 channels.
template <typename T>
struct DecoderStage {
  Conv2d<T> up;
  std::optional<AttentionGate<T>> gate;
  ResnetBlock<T> res;
  Conv2d<T> head;

  DecoderStage(ParameterStore<T>& store, const std::string& prefix,
               std::size_t in_ch, std::size_t skip_ch, bool use_gate,
               bool zero_head);

  struct Output {
    Tensor<T> features;
    Tensor<T> head;
  };
  Output operator()(const Tensor<T>& d_in, const Tensor<T>& skip,
                    Tensor<T>* alpha_out = nullptr) const;
};

/// Upsample-and-add of per-stage 2-channel heads ordered coarsest first.
template <typename T>
Tensor<T> aggregate_heads(const std::vector<Tensor<T>>& heads);

template <typename T>
struct Decoder {
  // stages[l] consumes skip level l; it runs deepest level first.
  std::vector<DecoderStage<T>> stages;

  Decoder(ParameterStore<T>& store, const std::string& prefix,
          const ModelConfig& cfg, bool zero_heads);
  /// Aggregated 2-channel output at the finest resolution. Gate coefficients
  /// are appended to `alphas_out`, deepest stage first.
  Tensor<T> operator()(const EncoderFeatures<T>& features,
                       std::vector<Tensor<T>>* alphas_out = nullptr) const;
};

}  // namespace rage::layers
