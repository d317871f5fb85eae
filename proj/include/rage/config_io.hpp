#pragma once

#include <json.hpp>

#include "rage/model.hpp"
#include "rage/stft.hpp"
#include "rage/trainer.hpp"

// JSON forms of the configuration types, found by nlohmann::json through ADL.
// Readers require every key and validate the result.
namespace rage {

void to_json(nlohmann::json& j, const StftConfig& c);
void from_json(const nlohmann::json& j, StftConfig& c);
void to_json(nlohmann::json& j, const SpectralCompression& c);
void from_json(const nlohmann::json& j, SpectralCompression& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Non-finite values map to null and back to +inf.
nlohmann::json finite_or_null(double v);
double number_or_inf(const nlohmann::json& j);

}  // namespace rage
