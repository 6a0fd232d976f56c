#pragma once

#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "crossnav/navigator.hpp"
#include "crossnav/worldsim.hpp"

namespace crossnav {

struct EpisodeResult {
  int episode_id = 0;
  Trajectory trajectory;
  double pl = 0.0;  // path length, meters
  double ne = 0.0;  // navigation error, meters
  int success = 0;
  int oracle_success = 0;
  double spl = 0.0;
};

struct MetricsReport {
  std::vector<EpisodeResult> episodes;
  double pl = 0.0;   // mean, meters
  double ne = 0.0;   // mean, meters
  double osr = 0.0;  // percent
  double sr = 0.0;   // percent
  double spl = 0.0;  // percent
};

/// Success within d meters of the target; SPL = S * l / max(p, l) with l the
/// start-to-target geodesic and p the executed path length (l = 0 gives S).
EpisodeResult evaluate_episode(const WorldGraph& world, const EpisodeSpec& episode, const Trajectory& trajectory,
                               double d_success);

MetricsReport aggregate(std::vector<EpisodeResult> results);

/// Fixed-width table with columns PL NE OSR SR SPL.
void print_report(std::ostream& os, const std::string& label, const MetricsReport& report);
void print_report_table(std::ostream& os, const std::vector<std::pair<std::string, MetricsReport>>& rows);

}  // namespace crossnav
