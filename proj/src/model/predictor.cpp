#include "rage/predictor.hpp"

#include <stdexcept>

#include "rage/ops.hpp"

namespace rage {

using ops::operator+;
using ops::operator-;
using ops::operator*;

namespace {

const ModelConfig& validated(const ModelConfig& cfg) {
  cfg.validate();
  return cfg;
}

const char* decoder_name(Branch b) {
  switch (b) {
    case Branch::left: return "dec_l";
    case Branch::middle: return "dec_m";
    case Branch::right: return "dec_r";
  }
  return "dec";
}

}  // namespace

template <typename T>
Predictor<T>::Predictor(const ModelConfig& cfg, InitOptions init)
    : cfg_(validated(cfg)),
      store_(init.seed),
      stem_(store_, "stem", 2, cfg_.base_channels, 1, 1, 0),
      encoder_(store_, "enc", cfg_) {
  if (cfg_.use_reverse_attention) {
    reverse_encoder_.emplace(store_, "enc_r", cfg_);
    for (Branch b : {Branch::left, Branch::middle, Branch::right}) {
      decoders_.emplace_back(store_, decoder_name(b), cfg_, init.zero_heads);
    }
  } else {
    decoders_.emplace_back(store_, "dec", cfg_, init.zero_heads);
  }
}

template <typename T>
void Predictor<T>::check_input(const Tensor<T>& x) const {
  const std::size_t m = cfg_.pad_multiple();
  if (x.rank() != 4 || x.dim(1) != 2 || x.dim(0) == 0 || x.dim(2) == 0 ||
      x.dim(3) == 0 || x.dim(2) % m || x.dim(3) % m) {
    throw ShapeError("predictor: expected [N,2,H,W] with H and W multiples of " +
                     std::to_string(m) + ", got " + shape_str(x.shape()));
  }
}

template <typename T>
Tensor<T> Predictor<T>::stem(const Tensor<T>& x) const {
  check_input(x);
  return stem_(x);
}

template <typename T>
layers::EncoderFeatures<T> Predictor<T>::encode(const Tensor<T>& stem_out,
                                                ForwardTrace<T>* trace) const {
  std::vector<T> attention;
  auto f = encoder_(stem_out, trace ? &attention : nullptr);
  if (trace) trace->attention.push_back(std::move(attention));
  return f;
}

template <typename T>
layers::EncoderFeatures<T> Predictor<T>::encode_reverse(const Tensor<T>& stem_out,
                                                        ForwardTrace<T>* trace) const {
  if (!reverse_encoder_) {
    throw std::logic_error("predictor: no reverse encoder without reverse attention");
  }
  std::vector<T> attention;
  auto f = (*reverse_encoder_)(stem_out, trace ? &attention : nullptr);
  if (trace) trace->attention.push_back(std::move(attention));
  return f;
}

template <typename T>
Tensor<T> Predictor<T>::decode(Branch branch,
                               const layers::EncoderFeatures<T>& features,
                               ForwardTrace<T>* trace) const {
  const auto idx = static_cast<std::size_t>(branch);
  if (idx >= decoders_.size()) {
    throw std::logic_error("predictor: only the left decoder exists without reverse attention");
  }
  Tensor<T> out = decoders_[idx](features, trace ? &trace->alphas : nullptr);
  if (trace) trace->branch_outputs.push_back(out);
  return out;
}

template <typename T>
typename Predictor<T>::ReverseInputs Predictor<T>::reverse_inputs(
    const layers::EncoderFeatures<T>& central,
    const layers::EncoderFeatures<T>& reverse) {
  if (central.skips.size() != reverse.skips.size()) {
    throw ShapeError("reverse attention: encoder depth mismatch");
  }
  auto split = [](const Tensor<T>& c, const Tensor<T>& r, Tensor<T>& middle,
                  Tensor<T>& right) {
    Tensor<T> negative = r * ops::sigmoid(-c);
    middle = c - negative;
    right = -c;
  };
  ReverseInputs in;
  in.middle.skips.resize(central.skips.size());
  in.right.skips.resize(central.skips.size());
  for (std::size_t s = 0; s < central.skips.size(); ++s) {
    split(central.skips[s], reverse.skips[s], in.middle.skips[s], in.right.skips[s]);
  }
  split(central.bottleneck, reverse.bottleneck, in.middle.bottleneck,
        in.right.bottleneck);
  return in;
}

template <typename T>
Tensor<T> Predictor<T>::forward(const Tensor<T>& x, ForwardTrace<T>* trace) const {
  const Tensor<T> s = stem(x);
  const auto central = encode(s, trace);
  if (!cfg_.use_reverse_attention) return decode(Branch::left, central, trace);
  const auto in = reverse_inputs(central, encode_reverse(s, trace));
  Tensor<T> left = decode(Branch::left, central, trace);
  Tensor<T> middle = decode(Branch::middle, in.middle, trace);
  Tensor<T> right = decode(Branch::right, in.right, trace);
  return left + middle + right;
}

NetworkDomain NetworkDomain::from_noisy(const ModelConfig& cfg, const Tensor<double>& noisy,
                                        std::size_t bins, std::size_t frames) {
  if (noisy.rank() != 4 || noisy.dim(1) != 2 || bins == 0 || frames == 0 ||
      noisy.dim(2) < bins || noisy.dim(3) < frames) {
    throw ShapeError("network domain: expected [N,2,>=" + std::to_string(bins) + ",>=" +
                     std::to_string(frames) + "], got " + shape_str(noisy.shape()));
  }
  const Tensor<double> c = compress(noisy, cfg.compression);
  const std::size_t per = c.numel() / c.dim(0);
  NetworkDomain d;
  for (std::size_t n = 0; n < c.dim(0); ++n) {
    double sum = 0.0;
    for (std::size_t i = 0; i < per; ++i) sum += c.data()[n * per + i] * c.data()[n * per + i];
    const double rms = std::sqrt(sum / double(2 * bins * frames));
    d.divisors.push_back(rms > 0 ? rms : 1.0);
  }
  return d;
}

namespace {

Tensor<double> scale_examples(const Tensor<double>& x, const std::vector<double>& factors,
                              bool divide) {
  if (x.rank() == 0 || x.dim(0) != factors.size()) {
    throw ShapeError("network domain: " + std::to_string(factors.size()) +
                     " divisors for batch " + shape_str(x.shape()));
  }
  const std::size_t per = x.numel() / x.dim(0);
  std::vector<double> v(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = divide ? v[i] / factors[i / per] : v[i] * factors[i / per];
  }
  return Tensor<double>(x.shape(), std::move(v));
}

}  // namespace

Tensor<double> NetworkDomain::to_network(const ModelConfig& cfg,
                                         const Tensor<double>& raw) const {
  return scale_examples(compress(raw, cfg.compression), divisors, true);
}

Tensor<double> NetworkDomain::from_network(const ModelConfig& cfg,
                                           const Tensor<double>& net) const {
  return decompress(scale_examples(net, divisors, false), cfg.compression);
}

template <typename T>
RISpectrogram enhance_spectrogram(const Predictor<T>& model,
                                  const RISpectrogram& noisy) {
  noisy.validate();
  const auto& cfg = model.config();
  const std::size_t f = noisy.bins(), t = noisy.frames();
  const auto raw = noisy.data.data();
  const Tensor<double> batch({1, 2, f, t}, std::vector<double>(raw.begin(), raw.end()));
  const auto domain = NetworkDomain::from_noisy(cfg, batch, f, t);
  const auto src = domain.to_network(cfg, batch);
  Tensor<T> x({1, 2, f, t}, std::vector<T>(src.data().begin(), src.data().end()));
  NoGradGuard no_grad;
  Tensor<T> y = ops::crop2d(model.forward(pad_to_multiple(x, cfg.pad_multiple())), f, t);
  const auto out = y.data();
  const auto est = domain.from_network(
      cfg, Tensor<double>({1, 2, f, t}, std::vector<double>(out.begin(), out.end())));
  return RISpectrogram{Tensor<double>({2, f, t}, std::vector<double>(est.data().begin(),
                                                                     est.data().end())),
                       noisy.config};
}

template <typename T>
WaveBuffer enhance_waveform(const Predictor<T>& model, const WaveBuffer& noisy) {
  noisy.validate();
  const auto spec = enhance_spectrogram(model, stft(noisy, model.config().stft));
  return istft(spec, noisy.size(), noisy.sample_rate_hz);
}

template class Predictor<float>;
template class Predictor<double>;
template RISpectrogram enhance_spectrogram(const Predictor<float>&, const RISpectrogram&);
template RISpectrogram enhance_spectrogram(const Predictor<double>&, const RISpectrogram&);
template WaveBuffer enhance_waveform(const Predictor<float>&, const WaveBuffer&);
template WaveBuffer enhance_waveform(const Predictor<double>&, const WaveBuffer&);

}  // namespace rage
