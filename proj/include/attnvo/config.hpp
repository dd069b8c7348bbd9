#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "attnvo/metrics.hpp"
#include "attnvo/synth.hpp"
#include "attnvo/training.hpp"
#include "attnvo/trajectory.hpp"

namespace attnvo {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// "key = value" lines; blank lines and '#' comments are skipped.
KeyValues parse_key_values(std::istream& in);
KeyValues read_key_values(const std::filesystem::path& path);
void write_key_values(const KeyValues& kv, std::ostream& out);
/// Splits "key=value"; throws ConfigError without '='.
std::pair<std::string, std::string> parse_assignment(std::string_view text);

struct ServeConfig {
  /// Frames between throughput lines on the diagnostics channel; 0 = off.
  std::size_t report_interval = 100;
  /// Read frames on a separate thread while inference runs.
  bool pipeline = true;
};

struct EvalConfig {
  std::vector<double> lengths = default_path_lengths();
  double truncation = kDefaultTruncation;
};

/// Every tunable in one place, addressable as section.field keys.
struct AppConfig {
  TrainConfig train;
  WindowConfig window;
  SynthDatasetConfig synth;
  EvalConfig eval;
  ServeConfig serve;
};

/// Applies keys in order; unknown keys and bad values throw ConfigError.
void apply_key_values(AppConfig& cfg, const KeyValues& kv);
KeyValues to_key_values(const AppConfig& cfg);

KeyValues model_key_values(const ModelConfig& cfg);
ModelConfig model_from_key_values(const KeyValues& kv);

}  // namespace attnvo
