#pragma once

namespace tofvae {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace tofvae
