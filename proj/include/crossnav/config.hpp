#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "crossnav/critic.hpp"
#include "crossnav/learner.hpp"
#include "crossnav/navigator.hpp"
#include "crossnav/worldsim.hpp"

namespace crossnav {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Everything a run needs. Model vocab/feature/orientation sizes are taken
/// from the dataset at training time; the rest comes from here.
struct RunConfig {
  SplitConfig split;
  TrainConfig train;
  RewardConfig reward;
  NavigatorConfig navigator;
  CriticConfig critic;
  std::uint64_t seed = 1;
  int workers = 1;

  bool operator==(const RunConfig&) const = default;
};

/// Flat "key = value" lines; '#' starts a comment. Unknown keys, malformed
/// values and out-of-range values raise ConfigError naming the line.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

/// Canonical text form; parse_config(format_config(c)) == c.
std::string format_config(const RunConfig& config);

std::vector<std::string> config_keys();

}  // namespace crossnav
