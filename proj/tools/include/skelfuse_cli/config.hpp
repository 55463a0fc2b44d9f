#pragma once

#include <cstddef>
#include <filesystem>
#include <string>

#include "skelfuse/fusion.hpp"
#include "skelfuse/rgb_net.hpp"
#include "skelfuse/stgcn.hpp"
#include "skelfuse/synthetic.hpp"

namespace skelfuse::cli {

/// Every hyperparameter of a pipeline run. Text form is one `key = value` per line; '#' starts a
/// comment. See `Config::to_text` for the full key list with defaults.
struct Config {
  std::string template_source = "stick15";  // built-in name or a template file path
  std::string dataset = "synthetic";
  SyntheticSpec synthetic;
  std::size_t parts = 5;    // K_roi
  std::size_t samples = 5;  // L
  std::size_t patch = 16;   // P
  StGcnConfig gcn;
  RgbNetConfig rgb;
  TrainConfig train;
  std::filesystem::path out = "skelfuse_out";

  /// usage-error on inconsistent geometry or network plans.
  void validate() const;
  SkeletonTemplate load_template() const;
  std::size_t subject_slots() const { return synthetic.two_subject ? 2 : 1; }
  /// Resolved form; parsing it back yields an identical Config.
  std::string to_text() const;
};

Config parse_config(const std::string& text);
/// data-error naming the path when the file cannot be read.
Config load_config(const std::filesystem::path& path);
/// SKELFUSE_SEED and SKELFUSE_OUT override the file.
void apply_environment(Config& config);

/// Version string of this build, e.g. "skelfuse 0.1.0 (abc1234)".
std::string version_string();

/// Writes `<out>/resolved.cfg`: the version line, then the resolved config.
void write_resolved_config(const Config& config);

}  // namespace skelfuse::cli
