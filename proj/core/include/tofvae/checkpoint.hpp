#pragma once

#include <string>
#include <utility>

#include "tofvae/losses.hpp"
#include "tofvae/vae.hpp"

namespace tofvae {

struct CheckpointMeta {
  uint32_t version = 0;
  std::string arch_descriptor;
  LossMode loss_mode = LossMode::L2;
  std::string normalization;
};

// Little-endian container: magic "AVAE", u32 version, descriptor / loss-mode /
// normalization strings, then one named f32 tensor per layer weight and bias.
// Round trips bit-exactly.
void save_checkpoint(const std::string& path, const VaeParams<float>& params,
                     const VaeArchitecture& arch, LossMode mode,
                     const std::string& normalization);

std::pair<VaeParams<float>, CheckpointMeta> load_checkpoint(
    const std::string& path, const VaeArchitecture& expected);

}  // namespace tofvae
