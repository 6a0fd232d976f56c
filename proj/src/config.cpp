#include "crossnav/config.hpp"

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace crossnav {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Parse helpers throw std::invalid_argument with a short reason; the caller adds the line.
double to_double(const std::string& s) {
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v))
    throw std::invalid_argument("expected a real number, got '" + s + "'");
  return v;
}

long long to_int(const std::string& s) {
  long long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw std::invalid_argument("expected an integer, got '" + s + "'");
  return v;
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw std::invalid_argument("expected a non-negative integer, got '" + s + "'");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("expected true or false, got '" + s + "'");
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::out_of_range(what);
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

Field int_field(std::string key, std::function<int&(RunConfig&)> ref, long long lo, long long hi) {
  Field f;
  f.key = key;
  f.set = [=](RunConfig& c, const std::string& v) {
    const long long x = to_int(v);
    require(x >= lo && x <= hi, key + " must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    ref(c) = static_cast<int>(x);
  };
  f.get = [=](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); };
  return f;
}

// Range check is lo <= x <= hi, or lo < x when open_lo.
Field real_field(std::string key, std::function<double&(RunConfig&)> ref, double lo, double hi, bool open_lo) {
  Field f;
  f.key = key;
  f.set = [=](RunConfig& c, const std::string& v) {
    const double x = to_double(v);
    const bool ok = (open_lo ? x > lo : x >= lo) && x <= hi;
    require(ok, key + " must lie in " + std::string(open_lo ? "(" : "[") + fmt_double(lo) + ", " + fmt_double(hi) +
                    "]");
    ref(c) = x;
  };
  f.get = [=](const RunConfig& c) { return fmt_double(ref(const_cast<RunConfig&>(c))); };
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    constexpr double kInf = 1e300;
    constexpr long long kBig = 1000000000;
    std::vector<Field> t;
    // world
    t.push_back(int_field("n_viewpoints", [](RunConfig& c) -> int& { return c.split.world.n_viewpoints; }, 2, kBig));
    t.push_back(real_field("mean_degree", [](RunConfig& c) -> double& { return c.split.world.mean_degree; }, 0, kInf, true));
    t.push_back(int_field("feature_dim", [](RunConfig& c) -> int& { return c.split.world.feature_dim; }, 1, kBig));
    t.push_back(int_field("patch_count", [](RunConfig& c) -> int& { return c.split.world.patch_count; }, 1, kBig));
    t.push_back(int_field("landmark_vocab", [](RunConfig& c) -> int& { return c.split.world.landmark_vocab; }, 1, kBig));
    t.push_back(real_field("noise_sigma", [](RunConfig& c) -> double& { return c.split.world.noise_sigma; }, 0, kInf, false));
    t.push_back(int_field("tile_factor", [](RunConfig& c) -> int& { return c.split.world.tile_factor; }, 1, kBig));
    t.push_back(real_field("spacing", [](RunConfig& c) -> double& { return c.split.world.spacing; }, 0, kInf, true));
    t.push_back(real_field("style_sigma", [](RunConfig& c) -> double& { return c.split.world.style_sigma; }, 0, kInf, false));
    t.push_back({"landmark_seed",
                 [](RunConfig& c, const std::string& v) { c.split.world.landmark_seed = to_u64(v); },
                 [](const RunConfig& c) { return std::to_string(c.split.world.landmark_seed); }});
    // episodes
    t.push_back(int_field("min_hops", [](RunConfig& c) -> int& { return c.split.episode.min_hops; }, 1, kBig));
    t.push_back(int_field("max_hops", [](RunConfig& c) -> int& { return c.split.episode.max_hops; }, 1, kBig));
    t.push_back({"d_success",
                 [](RunConfig& c, const std::string& v) {
                   const double x = to_double(v);
                   require(x > 0, "d_success must be positive");
                   c.split.episode.d_success = x;
                   c.reward.d_success = x;
                 },
                 [](const RunConfig& c) { return fmt_double(c.reward.d_success); }});
    t.push_back({"max_path",
                 [](RunConfig& c, const std::string& v) {
                   const long long x = to_int(v);
                   require(x >= 1 && x <= kBig, "max_path must be at least 1");
                   c.split.episode.max_path_length = static_cast<int>(x);
                   c.train.max_path = static_cast<int>(x);
                 },
                 [](const RunConfig& c) { return std::to_string(c.train.max_path); }});
    t.push_back({"max_instruction",
                 [](RunConfig& c, const std::string& v) {
                   const long long x = to_int(v);
                   require(x >= 1 && x <= kBig, "max_instruction must be at least 1");
                   c.split.episode.max_instruction_length = static_cast<int>(x);
                   c.train.max_instruction = static_cast<int>(x);
                 },
                 [](const RunConfig& c) { return std::to_string(c.train.max_instruction); }});
    // split sizes
    t.push_back(int_field("train_worlds", [](RunConfig& c) -> int& { return c.split.train_worlds; }, 1, kBig));
    t.push_back(int_field("unseen_worlds", [](RunConfig& c) -> int& { return c.split.unseen_worlds; }, 1, kBig));
    t.push_back(int_field("train_episodes", [](RunConfig& c) -> int& { return c.split.train_episodes; }, 1, kBig));
    t.push_back(int_field("seen_val_episodes", [](RunConfig& c) -> int& { return c.split.seen_val_episodes; }, 1, kBig));
    t.push_back(int_field("unseen_val_episodes", [](RunConfig& c) -> int& { return c.split.unseen_val_episodes; }, 1, kBig));
    // training
    t.push_back(real_field("lr_sl", [](RunConfig& c) -> double& { return c.train.lr_sl; }, 0, 1, true));
    t.push_back(real_field("lr_rl", [](RunConfig& c) -> double& { return c.train.lr_rl; }, 0, 1, true));
    t.push_back(real_field("lr_sil", [](RunConfig& c) -> double& { return c.train.lr_sil; }, 0, 1, true));
    t.push_back(real_field("lr_critic", [](RunConfig& c) -> double& { return c.train.lr_critic; }, 0, 1, true));
    t.push_back({"dropout",
                 [](RunConfig& c, const std::string& v) {
                   const double x = to_double(v);
                   require(x >= 0 && x < 1, "dropout must lie in [0, 1)");
                   c.train.dropout = x;
                   c.navigator.dropout = x;
                 },
                 [](const RunConfig& c) { return fmt_double(c.train.dropout); }});
    t.push_back(real_field("weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; }, 0, kInf, false));
    t.push_back(int_field("sil_rollouts", [](RunConfig& c) -> int& { return c.train.sil_rollouts; }, 1, kBig));
    t.push_back(int_field("epochs_critic", [](RunConfig& c) -> int& { return c.train.epochs_critic; }, 0, kBig));
    t.push_back(int_field("epochs_sl", [](RunConfig& c) -> int& { return c.train.epochs_sl; }, 0, kBig));
    t.push_back(int_field("epochs_rl", [](RunConfig& c) -> int& { return c.train.epochs_rl; }, 0, kBig));
    t.push_back(int_field("epochs_sil", [](RunConfig& c) -> int& { return c.train.epochs_sil; }, 0, kBig));
    t.push_back(int_field("batch_size", [](RunConfig& c) -> int& { return c.train.batch_size; }, 1, kBig));
    t.push_back(int_field("patience", [](RunConfig& c) -> int& { return c.train.patience; }, 1, kBig));
    t.push_back({"advantage_baseline",
                 [](RunConfig& c, const std::string& v) { c.train.advantage_baseline = to_bool(v); },
                 [](const RunConfig& c) { return std::string(c.train.advantage_baseline ? "true" : "false"); }});
    t.push_back({"sil_loss",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "weighted") c.train.sil_loss = SilLoss::Weighted;
                   else if (v == "imitation") c.train.sil_loss = SilLoss::Imitation;
                   else throw std::invalid_argument("sil_loss must be weighted or imitation");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.train.sil_loss == SilLoss::Weighted ? "weighted" : "imitation");
                 }});
    // reward
    t.push_back(real_field("gamma", [](RunConfig& c) -> double& { return c.reward.gamma; }, 0, 1, false));
    t.push_back(real_field("delta", [](RunConfig& c) -> double& { return c.reward.delta; }, 0, kInf, false));
    t.push_back({"intrinsic_form",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "geometric_mean") c.reward.intrinsic_form = IntrinsicForm::GeometricMean;
                   else if (v == "mean_log_prob") c.reward.intrinsic_form = IntrinsicForm::MeanLogProb;
                   else throw std::invalid_argument("intrinsic_form must be geometric_mean or mean_log_prob");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.reward.intrinsic_form == IntrinsicForm::GeometricMean ? "geometric_mean"
                                                                                               : "mean_log_prob");
                 }});
    t.push_back({"success_indicator",
                 [](RunConfig& c, const std::string& v) { c.reward.success_indicator = to_bool(v); },
                 [](const RunConfig& c) { return std::string(c.reward.success_indicator ? "true" : "false"); }});
    // navigator sizes
    t.push_back(int_field("embed_dim", [](RunConfig& c) -> int& { return c.navigator.embed_dim; }, 1, kBig));
    t.push_back(int_field("hidden_dim", [](RunConfig& c) -> int& { return c.navigator.hidden_dim; }, 1, kBig));
    t.push_back(int_field("action_embed_dim", [](RunConfig& c) -> int& { return c.navigator.action_embed_dim; }, 1, kBig));
    t.push_back(int_field("attn_panoramic", [](RunConfig& c) -> int& { return c.navigator.attn_panoramic; }, 1, kBig));
    t.push_back(int_field("attn_textual", [](RunConfig& c) -> int& { return c.navigator.attn_textual; }, 1, kBig));
    t.push_back(int_field("attn_visual", [](RunConfig& c) -> int& { return c.navigator.attn_visual; }, 1, kBig));
    t.push_back(int_field("predictor_dim", [](RunConfig& c) -> int& { return c.navigator.predictor_dim; }, 1, kBig));
    // critic sizes
    t.push_back(int_field("critic_embed_dim", [](RunConfig& c) -> int& { return c.critic.embed_dim; }, 1, kBig));
    t.push_back(int_field("critic_hidden_dim", [](RunConfig& c) -> int& { return c.critic.hidden_dim; }, 1, kBig));
    t.push_back(int_field("critic_action_embed_dim", [](RunConfig& c) -> int& { return c.critic.action_embed_dim; }, 1, kBig));
    t.push_back(int_field("critic_attn_panoramic", [](RunConfig& c) -> int& { return c.critic.attn_panoramic; }, 1, kBig));
    t.push_back(int_field("critic_attn_decoder", [](RunConfig& c) -> int& { return c.critic.attn_decoder; }, 1, kBig));
    t.push_back(int_field("critic_head_dim", [](RunConfig& c) -> int& { return c.critic.head_dim; }, 1, kBig));
    // run
    t.push_back({"seed", [](RunConfig& c, const std::string& v) { c.seed = to_u64(v); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    t.push_back(int_field("workers", [](RunConfig& c) -> int& { return c.workers; }, 1, 256));
    return t;
  }();
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  auto fail = [&line_no](const std::string& msg) { throw ConfigError("line " + std::to_string(line_no) + ": " + msg); };
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail("missing key");
    const Field* f = find_field(key);
    if (!f) fail("unknown key '" + key + "'");
    if (auto it = seen.find(key); it != seen.end())
      fail("duplicate key '" + key + "' (first set on line " + std::to_string(it->second) + ")");
    seen[key] = line_no;
    try {
      f->set(c, value);
    } catch (const std::exception& e) {
      fail(e.what());
    }
  }
  const auto cross = [&](bool ok, const std::string& key_a, const std::string& key_b, const std::string& msg) {
    if (ok) return;
    const int la = seen.count(key_a) ? seen[key_a] : 0;
    const int lb = seen.count(key_b) ? seen[key_b] : 0;
    line_no = std::max(la, lb);
    fail(msg);
  };
  cross(c.split.episode.min_hops <= c.split.episode.max_hops, "min_hops", "max_hops",
        "min_hops must not exceed max_hops");
  cross(c.split.episode.max_hops + 1 <= c.split.episode.max_path_length, "max_hops", "max_path",
        "max_hops + 1 must not exceed max_path");
  cross(c.split.world.mean_degree < c.split.world.n_viewpoints, "mean_degree", "n_viewpoints",
        "mean_degree must be below n_viewpoints");
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string format_config(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

}  // namespace crossnav
