#include "config.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "tofvae/errors.hpp"

namespace tofvae::cli {

namespace {

constexpr const char* kKnownKeys =
    "loss_mode, learning_rate, batch_size, max_epochs, patience, "
    "min_rel_improvement, seed, patches_per_volume, validation_fraction";

template <typename T>
T get_as(const nlohmann::json& j, const std::string& key,
         const std::string& source) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error::usage(fmt::format("config {}: key '{}' has the wrong type",
                                   source, key));
  }
}

} // namespace

TrainConfig parse_train_config(const std::string& json_text,
                               const std::string& source_name) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error::usage(
        fmt::format("config {}: not valid JSON ({})", source_name, e.what()));
  }
  if (!j.is_object()) {
    throw Error::usage(
        fmt::format("config {}: top level must be a JSON object", source_name));
  }

  TrainConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "loss_mode") {
      const auto name = get_as<std::string>(value, key, source_name);
      try {
        cfg.loss_mode = parse_loss_mode(name);
      } catch (const Error&) {
        throw Error::usage(fmt::format(
            "config {}: loss_mode must be \"l2\" or \"ssim\", got \"{}\"",
            source_name, name));
      }
    } else if (key == "learning_rate") {
      cfg.learning_rate = get_as<double>(value, key, source_name);
    } else if (key == "batch_size") {
      cfg.batch_size = get_as<int64_t>(value, key, source_name);
    } else if (key == "max_epochs") {
      cfg.max_epochs = get_as<int64_t>(value, key, source_name);
    } else if (key == "patience") {
      cfg.patience = get_as<int64_t>(value, key, source_name);
    } else if (key == "min_rel_improvement") {
      cfg.min_rel_improvement = get_as<double>(value, key, source_name);
    } else if (key == "seed") {
      cfg.seed = get_as<uint64_t>(value, key, source_name);
    } else if (key == "patches_per_volume") {
      cfg.patches_per_volume = get_as<int64_t>(value, key, source_name);
    } else if (key == "validation_fraction") {
      cfg.validation_fraction = get_as<double>(value, key, source_name);
    } else {
      throw Error::usage(
          fmt::format("config {}: unknown key '{}' (known keys: {})",
                      source_name, key, kKnownKeys));
    }
  }
  return cfg;
}

TrainConfig resolve_train_config(const std::optional<std::string>& config_path,
                                 const TrainOverrides& o) {
  TrainConfig cfg;
  if (config_path) {
    std::ifstream f(*config_path);
    if (!f) {
      throw Error::usage(
          fmt::format("config file '{}' cannot be opened", *config_path));
    }
    std::ostringstream ss;
    ss << f.rdbuf();
    cfg = parse_train_config(ss.str(), fmt::format("'{}'", *config_path));
  }
  if (o.loss_mode) {
    try {
      cfg.loss_mode = parse_loss_mode(*o.loss_mode);
    } catch (const Error&) {
      throw Error::usage(fmt::format(
          "--loss must be \"l2\" or \"ssim\", got \"{}\"", *o.loss_mode));
    }
  }
  if (o.learning_rate) cfg.learning_rate = *o.learning_rate;
  if (o.batch_size) cfg.batch_size = *o.batch_size;
  if (o.max_epochs) cfg.max_epochs = *o.max_epochs;
  if (o.patience) cfg.patience = *o.patience;
  if (o.min_rel_improvement) cfg.min_rel_improvement = *o.min_rel_improvement;
  if (o.seed) cfg.seed = *o.seed;
  if (o.patches_per_volume) cfg.patches_per_volume = *o.patches_per_volume;
  if (o.validation_fraction) cfg.validation_fraction = *o.validation_fraction;
  cfg.validate();
  return cfg;
}

nlohmann::json train_config_json(const TrainConfig& cfg) {
  return nlohmann::json{
      {"loss_mode", loss_mode_name(cfg.loss_mode)},
      {"learning_rate", cfg.resolved_lr()},
      {"batch_size", cfg.batch_size},
      {"max_epochs", cfg.max_epochs},
      {"patience", cfg.patience},
      {"min_rel_improvement", cfg.min_rel_improvement},
      {"seed", cfg.seed},
      {"patches_per_volume", cfg.patches_per_volume},
      {"validation_fraction", cfg.validation_fraction},
  };
}

} // namespace tofvae::cli
