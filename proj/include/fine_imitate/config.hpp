#pragma once

#include <json.hpp>

#include "fine_imitate/detector.hpp"
#include "fine_imitate/imitation.hpp"
#include "fine_imitate/trainer.hpp"

namespace fi {

// JSON (de)serialisation for the configuration types. Readers start from the
// defaults, reject unknown keys, and validate the result.

nlohmann::json to_json(const detector::DetectorConfig& cfg);
detector::DetectorConfig detector_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const imitation::DistillConfig& cfg);
imitation::DistillConfig distill_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const trainer::TrainConfig& cfg);
trainer::TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const trainer::EvalConfig& cfg);
trainer::EvalConfig eval_config_from_json(const nlohmann::json& j);

/// Throws std::invalid_argument naming the first key of `j` absent from `allowed`.
void reject_unknown_keys(const nlohmann::json& j, const nlohmann::json& allowed, const std::string& section);

}  // namespace fi
