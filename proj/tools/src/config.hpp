#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "tofvae/trainer.hpp"

namespace tofvae::cli {

// Values given on the command line; they win over config-file entries,
// which in turn win over built-in defaults.
struct TrainOverrides {
  std::optional<std::string> loss_mode;
  std::optional<double> learning_rate;
  std::optional<int64_t> batch_size;
  std::optional<int64_t> max_epochs;
  std::optional<int64_t> patience;
  std::optional<double> min_rel_improvement;
  std::optional<uint64_t> seed;
  std::optional<int64_t> patches_per_volume;
  std::optional<double> validation_fraction;
};

// Parses a JSON object whose keys mirror the TrainConfig fields
// (loss_mode, learning_rate, batch_size, max_epochs, patience,
// min_rel_improvement, seed, patches_per_volume, validation_fraction).
// Unknown keys are rejected by name.
TrainConfig parse_train_config(const std::string& json_text,
                               const std::string& source_name);

TrainConfig resolve_train_config(const std::optional<std::string>& config_path,
                                 const TrainOverrides& overrides);

// Resolved snapshot (defaults applied, learning rate concretized) for
// manifests.
nlohmann::json train_config_json(const TrainConfig& cfg);

} // namespace tofvae::cli
