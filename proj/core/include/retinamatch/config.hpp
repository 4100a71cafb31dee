#pragma once

// Config files: flat [section] headers with key = value lines, where values
// are integers, floats, booleans or quoted strings, and # starts a comment.
// Four sections are understood — [train], [pke], [match], [metrics] — and
// overlay the corresponding library config structs; CLI flags are applied on
// top by the tool. Unknown sections or keys are errors, so typos fail fast.

#include <map>
#include <string>

#include "retinamatch/matching.hpp"
#include "retinamatch/metrics.hpp"
#include "retinamatch/trainer.hpp"

namespace retina {

struct ConfigValue {
  enum class Kind { Int, Float, Bool, String };
  Kind kind = Kind::Int;
  int64_t i = 0;
  double f = 0.0;
  bool b = false;
  std::string s;
  int line = 0;
};

struct ConfigDoc {
  // section -> key -> value; parse order is irrelevant for a flat layout.
  std::map<std::string, std::map<std::string, ConfigValue>> sections;
};

/// Parses the text form; malformed lines throw ConfigError naming the line.
ConfigDoc parse_config_text(const std::string& text);
ConfigDoc parse_config_file(const std::string& path);

struct MetricParams {
  double auc_max_threshold = kDefaultAucMaxThreshold;
  double mee_threshold = kAcceptableMee;
  double mae_threshold = kAcceptableMae;
};

struct RunConfig {
  TrainConfig train;
  MatchConfig match;
  MetricParams metrics;
  int verify_threshold = 10;  // surviving-match count for an accept
};

/// Overlays a parsed document onto the run config. Unknown section, unknown
/// key or a type mismatch throws ConfigError naming the offender.
void apply_config(const ConfigDoc& doc, RunConfig& cfg);
void apply_config_file(const std::string& path, RunConfig& cfg);

/// A complete config file listing every key with its default value;
/// parsing it back yields a default RunConfig.
std::string default_config_text();

}  // namespace retina
