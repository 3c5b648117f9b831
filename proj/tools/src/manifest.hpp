#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace tofvae::cli {

// Written alongside every command's outputs: the resolved configuration
// (seeds included) plus input and output paths, enough to reproduce the
// outputs bit-for-bit by re-running the command with the same settings.
struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
};

void write_manifest(const RunManifest& m, const std::string& path);

} // namespace tofvae::cli
