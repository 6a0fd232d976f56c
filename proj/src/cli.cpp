#include "crossnav/cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>

#include "crossnav/config.hpp"
#include "crossnav/gradsuite.hpp"
#include "crossnav/learner.hpp"
#include "crossnav/persist.hpp"

namespace crossnav {

namespace fs = std::filesystem;

namespace {

struct CliError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "run";
  std::string checkpoint;
  std::string mode = "unseen";
  std::optional<int> workers;
  bool no_timestamp = false;
  std::string trace_path;
};

// Advisory lock on a run directory, released on scope exit.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
      throw CliError("run directory " + dir.string() + " is locked by another process (remove " + path_.string() +
                     " if it is stale)");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

RunConfig resolve_config(const Options& o, const Checkpoint* ckpt) {
  RunConfig c;
  if (!o.config_path.empty()) {
    if (!fs::exists(o.config_path)) throw CliError("config file '" + o.config_path + "' does not exist");
    c = load_config(o.config_path);
  } else if (ckpt) {
    c = ckpt->config;
  }
  if (o.seed) c.seed = *o.seed;
  if (o.workers) c.workers = *o.workers;
  return c;
}

fs::path dataset_path(const Options& o) { return fs::path(o.out_dir) / "dataset.txt"; }

Dataset require_dataset(const Options& o) {
  const auto p = dataset_path(o);
  if (!fs::exists(p)) throw CliError("no dataset at " + p.string() + "; run gen-data first");
  return load_dataset(p.string());
}

std::optional<Checkpoint> maybe_checkpoint(const Options& o) {
  if (o.checkpoint.empty()) return std::nullopt;
  return load_checkpoint(o.checkpoint);
}

void check_compatible(const TrainerState& s, const Dataset& data) {
  const auto nc = navigator_config_for(data, s.navigator.config);
  if (nc.vocab_size != s.navigator.config.vocab_size || nc.feature_dim != s.navigator.config.feature_dim ||
      nc.orientation_dim != s.navigator.config.orientation_dim)
    throw CliError("checkpoint model does not match the dataset dimensions");
}

TrainerState starting_state(const RunConfig& cfg, const Dataset& data, std::optional<Checkpoint>& ckpt) {
  if (ckpt) {
    check_compatible(ckpt->state, data);
    return std::move(ckpt->state);
  }
  return init_trainer(navigator_config_for(data, cfg.navigator), critic_config_for(data, cfg.critic), cfg.seed);
}

void print_epoch(std::ostream& out, const EpochRecord& r) {
  char line[200];
  if (r.phase == "critic") {
    std::snprintf(line, sizeof line, "%-10s epoch %3d  %-10s loss %.4f\n", r.phase.c_str(), r.epoch, r.split.c_str(),
                  r.loss);
  } else {
    std::snprintf(line, sizeof line, "%-10s epoch %3d  %-10s SR %5.1f  SPL %5.1f  NE %5.2f  loss %.4f\n",
                  r.phase.c_str(), r.epoch, r.split.c_str(), r.sr, r.spl, r.ne, r.loss);
  }
  out << line;
}

// Runs one training phase, writes its trace and checkpoint.
template <typename Phase>
int run_phase(const Options& o, std::ostream& out, const std::string& tag, Phase&& phase) {
  RunLock lock(o.out_dir);
  auto ckpt = maybe_checkpoint(o);
  const RunConfig cfg = resolve_config(o, ckpt ? &*ckpt : nullptr);
  const Dataset data = require_dataset(o);
  TrainerState state = starting_state(cfg, data, ckpt);

  const fs::path trace_path = fs::path(o.out_dir) / (tag + ".trace");
  std::ofstream trace_file(trace_path);
  if (!trace_file) throw CliError("cannot write " + trace_path.string());
  TraceWriter trace(trace_file, !o.no_timestamp);
  phase(state, data, cfg, [&](const EpochRecord& r) {
    trace.write(r);
    print_epoch(out, r);
  });
  const fs::path ckpt_path = fs::path(o.out_dir) / (tag + ".ckpt");
  save_checkpoint(ckpt_path.string(), Checkpoint{cfg, state});
  out << "wrote " << ckpt_path.string() << "\n";
  return 0;
}

int cmd_gen_data(const Options& o, std::ostream& out) {
  RunLock lock(o.out_dir);
  const RunConfig cfg = resolve_config(o, nullptr);
  const Dataset data = generate_split(cfg.split, cfg.seed);
  save_dataset(dataset_path(o).string(), data);
  out << "wrote " << dataset_path(o).string() << ": " << data.worlds.size() << " worlds, " << data.train.size()
      << " train, " << data.seen_val.size() << " seen_val, " << data.unseen_val.size() << " unseen_val episodes\n";
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  RunLock lock(o.out_dir);
  auto ckpt = maybe_checkpoint(o);
  const RunConfig cfg = resolve_config(o, ckpt ? &*ckpt : nullptr);
  const Dataset data = require_dataset(o);
  Navigator nav;
  Critic critic;
  if (ckpt) {
    check_compatible(ckpt->state, data);
    nav = ckpt->state.navigator;
    critic = ckpt->state.critic;
  } else {
    nav = make_zero_navigator(navigator_config_for(data, cfg.navigator));
    critic = make_zero_critic(critic_config_for(data, cfg.critic));
  }

  const fs::path trace_path = fs::path(o.out_dir) / "eval.trace";
  std::ofstream trace_file(trace_path);
  if (!trace_file) throw CliError("cannot write " + trace_path.string());
  TraceWriter trace(trace_file, !o.no_timestamp);

  std::vector<std::pair<std::string, MetricsReport>> rows;
  const std::pair<const char*, const std::vector<EpisodeSpec>*> splits[] = {
      {"train", &data.train}, {"seen_val", &data.seen_val}, {"unseen_val", &data.unseen_val}};
  for (const auto& [name, eps] : splits) {
    if (eps->empty() || !std::all_of(eps->begin(), eps->end(), [](const auto& e) { return e.has_supervision(); }))
      continue;
    auto report = evaluate_split(nav, data, *eps, cfg.reward, cfg.train.max_path, cfg.workers);
    for (std::size_t i = 0; i < eps->size(); ++i) {
      const auto& ep = (*eps)[i];
      const auto& res = report.episodes[i];
      const auto& world = data.world(ep.world_id());
      const auto rewards = compute_rewards(world, ep, res.trajectory, critic, cfg.reward);
      for (std::size_t t = 0; t < res.trajectory.steps.size(); ++t) {
        const auto& st = res.trajectory.steps[t];
        trace.write(StepRecord{ep.id(), static_cast<int>(t), st.state.viewpoint, st.state.heading, st.action,
                               st.log_prob, rewards.immediate[t]});
      }
      const double intrinsic =
          intrinsic_reward(critic, ep.instruction(), world, res.trajectory, cfg.reward.intrinsic_form).value;
      trace.write(EpisodeRecord{ep.id(), intrinsic, rewards.returns.front(), res.pl, res.ne, res.success,
                                res.oracle_success, res.spl});
    }
    EpochRecord summary;
    summary.phase = "eval";
    summary.split = name;
    summary.pl = report.pl;
    summary.ne = report.ne;
    summary.osr = report.osr;
    summary.sr = report.sr;
    summary.spl = report.spl;
    trace.write(summary);
    rows.emplace_back(name, std::move(report));
  }
  if (rows.empty()) throw CliError("no split with targets to evaluate");
  print_report_table(out, rows);
  return 0;
}

int cmd_grad_check(const Options& o, std::ostream& out) {
  const auto results = standard_grad_checks(o.seed.value_or(1));
  bool ok = true;
  char line[200];
  std::snprintf(line, sizeof line, "%-16s %14s %12s  %s\n", "module", "max_rel_error", "coordinates", "worst");
  out << line;
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%-16s %14.3e %12zu  %s\n", r.module.c_str(), r.max_relative_error,
                  r.coordinates, r.worst_param.c_str());
    out << line;
    ok = ok && r.max_relative_error < 1e-4;
  }
  out << (ok ? "PASS" : "FAIL") << " (threshold 1e-4)\n";
  return ok ? 0 : 1;
}

int cmd_trace_dump(const Options& o, std::ostream& out) {
  const std::string path = o.trace_path.empty() ? (fs::path(o.out_dir) / "eval.trace").string() : o.trace_path;
  std::ifstream in(path);
  if (!in) throw CliError("cannot read trace '" + path + "'");
  const auto records = read_trace(in);
  char line[240];
  std::size_t steps = 0, episodes = 0, epochs = 0;
  for (const auto& rec : records) {
    if (const auto* s = std::get_if<StepRecord>(&rec)) {
      std::snprintf(line, sizeof line, "  ep %5d  t %2d  at %3d  heading %6.1f deg  action %2d  logp %8.4f  r %7.3f\n",
                    s->episode_id, s->t, s->viewpoint, s->heading * 360.0 / kTwoPi, s->action_index, s->log_prob,
                    s->immediate_reward);
      ++steps;
    } else if (const auto* e = std::get_if<EpisodeRecord>(&rec)) {
      std::snprintf(line, sizeof line,
                    "episode %5d  R_intr %.4f  R_0 %7.3f  PL %6.2f  NE %6.2f  success %d  oracle %d  SPL %.3f\n",
                    e->episode_id, e->intrinsic, e->return0, e->pl, e->ne, e->success, e->oracle_success, e->spl);
      ++episodes;
    } else {
      const auto& r = std::get<EpochRecord>(rec);
      std::snprintf(line, sizeof line,
                    "epoch  %-10s %3d %-10s PL %6.2f NE %6.2f OSR %5.1f SR %5.1f SPL %5.1f loss %.4f\n",
                    r.phase.c_str(), r.epoch, r.split.c_str(), r.pl, r.ne, r.osr, r.sr, r.spl, r.loss);
      ++epochs;
    }
    out << line;
  }
  out << steps << " step, " << episodes << " episode, " << epochs << " epoch records\n";
  return 0;
}

SilMode parse_mode(const std::string& m) {
  if (m == "train") return SilMode::Train;
  if (m == "unseen") return SilMode::Unseen;
  throw CliError("--mode must be train or unseen");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"crossnav: cross-modal navigation agent with self-imitation"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  std::uint64_t seed = 0;
  int workers = 1;
  app.add_option("--config", o.config_path, "config file (key = value lines)");
  auto* seed_opt = app.add_option("--seed", seed, "run seed");
  app.add_option("--out", o.out_dir, "run directory")->capture_default_str();
  app.add_option("--checkpoint", o.checkpoint, "checkpoint to start from");
  app.add_option("--mode", o.mode, "self-imitation split")->check(CLI::IsMember({"train", "unseen"}));
  auto* workers_opt = app.add_option("--workers", workers, "evaluation threads")->check(CLI::Range(1, 256));
  app.add_flag("--no-timestamp", o.no_timestamp, "omit the timestamp line from traces");

  auto* gen = app.add_subcommand("gen-data", "generate worlds and episodes");
  auto* critic = app.add_subcommand("pretrain-critic", "pretrain the matching critic on demonstrations");
  auto* sl = app.add_subcommand("train-sl", "supervised training on demonstrations");
  auto* rl = app.add_subcommand("train-rl", "policy-gradient training with extrinsic and intrinsic reward");
  auto* sil = app.add_subcommand("train-sil", "self-supervised imitation");
  auto* eval = app.add_subcommand("eval", "greedy evaluation of every split with targets");
  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient checks");
  auto* dump = app.add_subcommand("trace-dump", "print a trace file");
  dump->add_option("trace", o.trace_path, "trace file (default: <out>/eval.trace)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  if (*seed_opt) o.seed = seed;
  if (*workers_opt) o.workers = workers;

  try {
    if (gen->parsed()) return cmd_gen_data(o, out);
    if (critic->parsed())
      return run_phase(o, out, "critic", [](TrainerState& s, const Dataset& d, const RunConfig& c, const auto& cb) {
        pretrain_critic(s, d, c.train, cb);
      });
    if (sl->parsed())
      return run_phase(o, out, "sl", [](TrainerState& s, const Dataset& d, const RunConfig& c, const auto& cb) {
        train_sl(s, d, c.train, c.reward, cb);
      });
    if (rl->parsed())
      return run_phase(o, out, "rl", [](TrainerState& s, const Dataset& d, const RunConfig& c, const auto& cb) {
        train_rl(s, d, c.train, c.reward, cb);
      });
    if (sil->parsed()) {
      const SilMode mode = parse_mode(o.mode);
      return run_phase(o, out, "sil-" + o.mode,
                       [mode](TrainerState& s, const Dataset& d, const RunConfig& c, const auto& cb) {
                         train_sil(s, d, c.train, c.reward, mode, cb);
                       });
    }
    if (eval->parsed()) return cmd_eval(o, out);
    if (gc->parsed()) return cmd_grad_check(o, out);
    if (dump->parsed()) return cmd_trace_dump(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << "error: no subcommand\n";
  return 2;
}

}  // namespace crossnav
