#include "manifest.hpp"

#include <ctime>
#include <fstream>

#include <fmt/format.h>

#include "tofvae/errors.hpp"
#include "tofvae/version.hpp"

namespace tofvae::cli {

namespace {

std::string utc_timestamp() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

} // namespace

void write_manifest(const RunManifest& m, const std::string& path) {
  nlohmann::json j;
  j["tool"] = "tofvae";
  j["version"] = kVersion;
  j["command"] = m.command;
  j["created_utc"] = utc_timestamp();
  j["config"] = m.config;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  std::ofstream f(path, std::ios::trunc);
  if (!f) {
    throw Error::data(fmt::format("cannot write manifest '{}'", path));
  }
  f << j.dump(2) << "\n";
}

} // namespace tofvae::cli
