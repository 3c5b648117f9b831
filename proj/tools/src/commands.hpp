#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include "config.hpp"

namespace tofvae::cli {

struct PhantomOptions {
  int64_t count = 1;
  double aneurysm_fraction = 0.0;
  uint64_t seed = 0;
  std::array<int64_t, 3> dims{64, 64, 64};
  std::string out_dir;
};
int cmd_phantom(const PhantomOptions& opts);

struct TrainOptions {
  std::optional<std::string> config_path;
  std::string data_dir;
  std::string out_dir;
  TrainOverrides overrides;
};
int cmd_train(const TrainOptions& opts);

struct ReconstructOptions {
  std::string model_path;
  std::string input_path;
  std::string output_path;
  int slice_axis = 2;
};
int cmd_reconstruct(const ReconstructOptions& opts);

struct EvaluateOptions {
  std::string original_dir;
  std::string reconstruction_dir;
  std::string out_base; // writes <out_base>.csv and <out_base>.json
};
int cmd_evaluate(const EvaluateOptions& opts);

struct AnomalyOptions {
  std::string original_path;
  std::string reconstruction_path;
  std::string out_dir;
  double threshold = 0.6;
  int slice_axis = 2;
};
int cmd_anomaly(const AnomalyOptions& opts);

struct GradcheckOptions {
  int64_t seeds = 3;
  bool skip_model = false;
};
int cmd_gradcheck(const GradcheckOptions& opts);

} // namespace tofvae::cli
