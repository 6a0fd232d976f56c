#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "crossnav/config.hpp"
#include "crossnav/learner.hpp"
#include "crossnav/worldsim.hpp"

namespace crossnav {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- dataset ("CROSSNAV-WORLD v1" text) -------------------------------------------------

/// Sealed episodes are written without target or demonstration.
void write_dataset(std::ostream& os, const Dataset& data);
Dataset read_dataset(std::istream& is);
void save_dataset(const std::string& path, const Dataset& data);
Dataset load_dataset(const std::string& path);

// ---- checkpoints ("CROSSNAV-CKPT v1": text header, then little-endian doubles) -------------

struct Checkpoint {
  RunConfig config;
  TrainerState state;  // state.phase is the phase tag
};

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is);
/// Writes to a temporary file and renames it into place.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

bool same_state(const TrainerState& a, const TrainerState& b);

// ---- trace log ---------------------------------------------------------------------------

inline constexpr const char* kTraceHeader = "CROSSNAV-TRACE v1";

struct StepRecord {
  int episode_id = 0;
  int t = 0;
  int viewpoint = 0;
  double heading = 0.0;
  int action_index = 0;
  double log_prob = 0.0;
  double immediate_reward = 0.0;
  bool operator==(const StepRecord&) const = default;
};

struct EpisodeRecord {
  int episode_id = 0;
  double intrinsic = 0.0;
  double return0 = 0.0;
  double pl = 0.0;
  double ne = 0.0;
  int success = 0;
  int oracle_success = 0;
  double spl = 0.0;
  bool operator==(const EpisodeRecord&) const = default;
};

using TraceRecord = std::variant<StepRecord, EpisodeRecord, EpochRecord>;

/// One tab-separated line per record. The first line names the schema; an
/// optional second line carries a wall-clock timestamp.
class TraceWriter {
 public:
  TraceWriter(std::ostream& os, bool timestamp);
  void write(const TraceRecord& record);

 private:
  std::ostream* os_;
};

std::string format_record(const TraceRecord& record);
TraceRecord parse_record(const std::string& line);
/// Skips the header and timestamp lines.
std::vector<TraceRecord> read_trace(std::istream& is);

}  // namespace crossnav
