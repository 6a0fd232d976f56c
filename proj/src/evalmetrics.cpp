#include "crossnav/evalmetrics.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

namespace crossnav {

EpisodeResult evaluate_episode(const WorldGraph& world, const EpisodeSpec& episode, const Trajectory& trajectory,
                               double d_success) {
  if (trajectory.steps.empty()) throw std::invalid_argument("cannot evaluate an empty trajectory");
  const auto visited = trajectory.visited();
  for (int v : visited)
    if (!world.has_viewpoint(v)) throw std::out_of_range("trajectory references unknown viewpoint");
  const int target = episode.target();

  EpisodeResult r;
  r.episode_id = episode.id();
  r.trajectory = trajectory;
  for (std::size_t k = 0; k + 1 < visited.size(); ++k) {
    const auto& nbrs = world.neighbors(visited[k]);
    if (!std::binary_search(nbrs.begin(), nbrs.end(), visited[k + 1]))
      throw std::invalid_argument("trajectory traverses a non-existent edge");
    r.pl += world.edge_length(visited[k], visited[k + 1]);
  }
  r.ne = geodesic_distance(world, visited.back(), target);
  r.success = r.ne <= d_success ? 1 : 0;
  double closest = r.ne;
  for (int v : visited) closest = std::min(closest, geodesic_distance(world, v, target));
  r.oracle_success = closest <= d_success ? 1 : 0;
  const double l = geodesic_distance(world, episode.start().viewpoint, target);
  if (l == 0.0) {
    r.spl = r.success;
  } else {
    r.spl = r.success * l / std::max(r.pl, l);
  }
  return r;
}

MetricsReport aggregate(std::vector<EpisodeResult> results) {
  if (results.empty()) throw std::invalid_argument("cannot aggregate an empty result list");
  MetricsReport m;
  const double n = static_cast<double>(results.size());
  double osr = 0, sr = 0, spl = 0;
  for (const auto& r : results) {
    m.pl += r.pl;
    m.ne += r.ne;
    osr += r.oracle_success;
    sr += r.success;
    spl += r.spl;
  }
  m.pl /= n;
  m.ne /= n;
  m.osr = 100.0 * osr / n;
  m.sr = 100.0 * sr / n;
  m.spl = 100.0 * spl / n;
  m.episodes = std::move(results);
  return m;
}

namespace {

void header(std::ostream& os) {
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %8s %8s %8s %8s %8s\n", "split", "PL", "NE", "OSR", "SR", "SPL");
  os << line;
}

void row(std::ostream& os, const std::string& label, const MetricsReport& r) {
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %8.2f %8.2f %8.1f %8.1f %8.1f\n", label.c_str(), r.pl, r.ne, r.osr, r.sr,
                r.spl);
  os << line;
}

}  // namespace

void print_report(std::ostream& os, const std::string& label, const MetricsReport& report) {
  header(os);
  row(os, label, report);
}

void print_report_table(std::ostream& os, const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  header(os);
  for (const auto& [label, report] : rows) row(os, label, report);
}

}  // namespace crossnav
