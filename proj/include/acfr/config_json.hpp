#pragma once

// JSON mapping of the configuration structs. Readers start from the
// defaults of the struct and reject any key they do not know.

#include "acfr/datagen.hpp"
#include "acfr/model.hpp"
#include "acfr/trainer.hpp"

#include <nlohmann/json.hpp>

#include <stdexcept>
#include <string>

namespace acfr {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

nlohmann::json to_json(const SplineConfig& cfg);
nlohmann::json to_json(const ModelConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const DatasetSpec& spec);
nlohmann::json to_json(const AdversaryFitConfig& cfg);

SplineConfig spline_config_from_json(const nlohmann::json& j, SplineConfig base = {});
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
DatasetSpec dataset_spec_from_json(const nlohmann::json& j, DatasetSpec base = {});
AdversaryFitConfig adversary_fit_config_from_json(const nlohmann::json& j, AdversaryFitConfig base = {});

}  // namespace acfr
