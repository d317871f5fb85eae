#include "rage/config_io.hpp"

#include <cmath>
#include <limits>

namespace rage {

using nlohmann::json;

void to_json(json& j, const StftConfig& c) {
  j = json{{"n_fft", c.n_fft}, {"hop", c.hop}};
}

void from_json(const json& j, StftConfig& c) {
  c.n_fft = j.at("n_fft").get<std::size_t>();
  c.hop = j.at("hop").get<std::size_t>();
  c.validate();
}

void to_json(json& j, const SpectralCompression& c) {
  j = json{{"exponent", c.exponent}, {"scale", c.scale}};
}

void from_json(const json& j, SpectralCompression& c) {
  c.exponent = j.at("exponent").get<double>();
  c.scale = j.at("scale").get<double>();
  c.validate();
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"base_channels", c.base_channels},
           {"depth", c.depth},
           {"attention_gates", c.use_attention_gates},
           {"reverse_attention", c.use_reverse_attention},
           {"stft", c.stft},
           {"compression", c.compression}};
}

void from_json(const json& j, ModelConfig& c) {
  c.base_channels = j.at("base_channels").get<std::size_t>();
  c.depth = j.at("depth").get<std::size_t>();
  c.use_attention_gates = j.at("attention_gates").get<bool>();
  c.use_reverse_attention = j.at("reverse_attention").get<bool>();
  c.stft = j.at("stft").get<StftConfig>();
  c.compression = j.at("compression").get<SpectralCompression>();
  c.validate();
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"max_epochs", c.max_epochs},
           {"patience", c.patience},
           {"learning_rate", c.learning_rate},
           {"batch_size", c.batch_size},
           {"segment_seconds", c.segment_seconds},
           {"seed", c.seed},
           {"loss", to_string(c.loss)},
           {"clip_norm", c.clip_norm}};
}

void from_json(const json& j, TrainConfig& c) {
  c.max_epochs = j.at("max_epochs").get<std::size_t>();
  c.patience = j.at("patience").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.segment_seconds = j.at("segment_seconds").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.loss = parse_loss_kind(j.at("loss").get<std::string>());
  c.clip_norm = j.at("clip_norm").get<double>();
  c.validate();
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_or_inf(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

}  // namespace rage
