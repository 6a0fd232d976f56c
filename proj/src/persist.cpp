#include "crossnav/persist.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace crossnav {

namespace {

std::string real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_real(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw FormatError("malformed real '" + s + "'");
  return v;
}

long long parse_int(const std::string& s) {
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size()) throw FormatError("malformed integer '" + s + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& s) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (s.empty() || s[0] == '-' || end != s.c_str() + s.size()) throw FormatError("malformed integer '" + s + "'");
  return v;
}

// Whitespace-separated token reader that reports where it stopped.
class Tokens {
 public:
  explicit Tokens(std::istream& is) : is_(is) {}
  std::string next(const char* what) {
    std::string s;
    if (!(is_ >> s)) throw FormatError(std::string("unexpected end of input while reading ") + what);
    return s;
  }
  void expect(const std::string& word) {
    const auto s = next(word.c_str());
    if (s != word) throw FormatError("expected '" + word + "', found '" + s + "'");
  }
  double real(const char* what) { return parse_real(next(what)); }
  long long integer(const char* what) { return parse_int(next(what)); }
  std::uint64_t u64(const char* what) { return parse_u64(next(what)); }
  int count(const char* what) {
    const long long n = integer(what);
    if (n < 0 || n > 100000000) throw FormatError(std::string("implausible count for ") + what);
    return static_cast<int>(n);
  }

 private:
  std::istream& is_;
};

void write_matrix(std::ostream& os, const Tensor& t) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto row = t.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) os << (c ? " " : "") << real(row[c]);
    os << "\n";
  }
}

Tensor read_matrix(Tokens& tok, std::size_t rows, std::size_t cols) {
  Tensor t({rows, cols});
  for (auto& v : t.values()) v = tok.real("matrix entry");
  return t;
}

void write_world_config(std::ostream& os, const WorldConfig& c) {
  os << "world_config n_viewpoints " << c.n_viewpoints << " mean_degree " << real(c.mean_degree) << " feature_dim "
     << c.feature_dim << " patch_count " << c.patch_count << " landmark_vocab " << c.landmark_vocab
     << " noise_sigma " << real(c.noise_sigma) << " tile_factor " << c.tile_factor << " spacing "
     << real(c.spacing) << " style_sigma " << real(c.style_sigma) << " landmark_seed " << c.landmark_seed << "\n";
}

WorldConfig read_world_config(Tokens& tok) {
  WorldConfig c;
  tok.expect("world_config");
  tok.expect("n_viewpoints");
  c.n_viewpoints = static_cast<int>(tok.integer("n_viewpoints"));
  tok.expect("mean_degree");
  c.mean_degree = tok.real("mean_degree");
  tok.expect("feature_dim");
  c.feature_dim = static_cast<int>(tok.integer("feature_dim"));
  tok.expect("patch_count");
  c.patch_count = static_cast<int>(tok.integer("patch_count"));
  tok.expect("landmark_vocab");
  c.landmark_vocab = static_cast<int>(tok.integer("landmark_vocab"));
  tok.expect("noise_sigma");
  c.noise_sigma = tok.real("noise_sigma");
  tok.expect("tile_factor");
  c.tile_factor = static_cast<int>(tok.integer("tile_factor"));
  tok.expect("spacing");
  c.spacing = tok.real("spacing");
  tok.expect("style_sigma");
  c.style_sigma = tok.real("style_sigma");
  tok.expect("landmark_seed");
  c.landmark_seed = tok.u64("landmark_seed");
  return c;
}

void write_episode(std::ostream& os, const EpisodeSpec& e) {
  const char* state = e.sealed() ? "sealed" : (e.has_supervision() ? "full" : "stripped");
  os << "episode " << e.id() << " " << e.world_id() << " " << e.start().viewpoint << " " << real(e.start().heading)
     << " " << real(e.start().elevation) << " " << e.noise_seed() << " " << state;
  const auto& toks = e.instruction().tokens;
  os << " tokens " << toks.size();
  for (int t : toks) os << " " << t;
  if (e.has_supervision()) {
    os << " target " << e.target() << " path " << e.demonstration().size();
    for (int v : e.demonstration()) os << " " << v;
  }
  os << "\n";
}

EpisodeSpec read_episode(Tokens& tok) {
  tok.expect("episode");
  const int id = static_cast<int>(tok.integer("episode id"));
  const int world = static_cast<int>(tok.integer("world id"));
  AgentState start;
  start.viewpoint = static_cast<int>(tok.integer("start viewpoint"));
  start.heading = tok.real("heading");
  start.elevation = tok.real("elevation");
  const auto noise = tok.u64("noise seed");
  const auto state = tok.next("episode state");
  if (state != "full" && state != "sealed" && state != "stripped")
    throw FormatError("unknown episode state '" + state + "'");
  tok.expect("tokens");
  Instruction ins;
  const int n = tok.count("token count");
  for (int i = 0; i < n; ++i) ins.tokens.push_back(static_cast<int>(tok.integer("token")));
  if (state == "full") {
    tok.expect("target");
    const int target = static_cast<int>(tok.integer("target"));
    tok.expect("path");
    const int m = tok.count("path length");
    std::vector<int> path;
    for (int i = 0; i < m; ++i) path.push_back(static_cast<int>(tok.integer("path viewpoint")));
    return EpisodeSpec(id, world, std::move(ins), start, target, std::move(path), noise);
  }
  EpisodeSpec e(id, world, std::move(ins), start, -1, {}, noise);
  return state == "sealed" ? e.sealed_copy() : e;
}

// ---- checkpoint helpers ----

struct DirEntry {
  std::string name;
  std::vector<std::size_t> shape;
};

void append_group(std::vector<std::pair<std::string, const Tensor*>>& out, const std::string& prefix,
                  const ParamSet& p) {
  for (const auto& e : p) out.emplace_back(prefix + e.name, &e.tensor);
}

void write_le(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

std::string nav_line(const NavigatorConfig& c) {
  std::ostringstream os;
  os << "navigator " << c.vocab_size << " " << c.feature_dim << " " << c.orientation_dim << " " << c.embed_dim << " "
     << c.hidden_dim << " " << c.action_embed_dim << " " << c.attn_panoramic << " " << c.attn_textual << " "
     << c.attn_visual << " " << c.predictor_dim << " " << real(c.dropout);
  return os.str();
}

std::string critic_line(const CriticConfig& c) {
  std::ostringstream os;
  os << "critic " << c.vocab_size << " " << c.feature_dim << " " << c.orientation_dim << " " << c.embed_dim << " "
     << c.hidden_dim << " " << c.action_embed_dim << " " << c.attn_panoramic << " " << c.attn_decoder << " "
     << c.head_dim;
  return os.str();
}

std::string read_line(std::istream& is, const char* what) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError(std::string("checkpoint truncated in ") + what);
  return line;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  std::string s;
  while (is >> s) out.push_back(s);
  return out;
}

bool bit_equal(const ParamSet& a, const ParamSet& b) {
  if (!a.same_layout(b)) return false;
  auto bi = b.begin();
  for (auto ai = a.begin(); ai != a.end(); ++ai, ++bi)
    if (std::memcmp(ai->tensor.data(), bi->tensor.data(), ai->tensor.size() * sizeof(double)) != 0) return false;
  return true;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

}  // namespace

// ---- dataset ------------------------------------------------------------------------------

void write_dataset(std::ostream& os, const Dataset& data) {
  if (!data.landmarks) throw FormatError("dataset has no landmark table");
  if (data.worlds.empty()) throw FormatError("dataset has no worlds");
  os << "CROSSNAV-WORLD v1\n";
  write_world_config(os, data.worlds.front().config());
  os << "landmarks " << data.landmarks->embeddings.rows() << " " << data.landmarks->embeddings.cols() << "\n";
  write_matrix(os, data.landmarks->embeddings);
  os << "worlds " << data.worlds.size() << "\n";
  for (const auto& w : data.worlds) {
    os << "world " << w.id() << " " << w.seed() << " viewpoints " << w.size() << " edges " << w.edges().size()
       << "\n";
    os << "style\n";
    write_matrix(os, w.style());
    for (const auto& v : w.viewpoints())
      os << "viewpoint " << v.id << " " << real(v.position[0]) << " " << real(v.position[1]) << " "
         << real(v.position[2]) << " " << v.landmark_id << "\n";
    for (const auto& e : w.edges()) os << "edge " << e.a << " " << e.b << " " << real(e.length) << "\n";
  }
  const std::pair<const char*, const std::vector<EpisodeSpec>*> splits[] = {
      {"train", &data.train}, {"seen_val", &data.seen_val}, {"unseen_val", &data.unseen_val}};
  for (const auto& [name, eps] : splits) {
    os << "split " << name << " " << eps->size() << "\n";
    for (const auto& e : *eps) write_episode(os, e);
  }
  os << "end\n";
  if (!os) throw FormatError("write failure");
}

Dataset read_dataset(std::istream& is) {
  std::string magic;
  if (!std::getline(is, magic) || magic != "CROSSNAV-WORLD v1") throw FormatError("not a CROSSNAV-WORLD v1 document");
  Tokens tok(is);
  const WorldConfig config = read_world_config(tok);
  Dataset ds;
  tok.expect("landmarks");
  const int lv = tok.count("landmark rows");
  const int lf = tok.count("landmark cols");
  ds.landmarks = std::make_shared<const LandmarkTable>(
      LandmarkTable{read_matrix(tok, static_cast<std::size_t>(lv), static_cast<std::size_t>(lf))});
  tok.expect("worlds");
  const int nw = tok.count("world count");
  for (int w = 0; w < nw; ++w) {
    tok.expect("world");
    const int id = static_cast<int>(tok.integer("world id"));
    const auto seed = tok.u64("world seed");
    tok.expect("viewpoints");
    const int nv = tok.count("viewpoint count");
    tok.expect("edges");
    const int ne = tok.count("edge count");
    tok.expect("style");
    Tensor style = read_matrix(tok, static_cast<std::size_t>(lv), static_cast<std::size_t>(lf));
    std::vector<Viewpoint> vps;
    for (int i = 0; i < nv; ++i) {
      tok.expect("viewpoint");
      Viewpoint v;
      v.id = static_cast<int>(tok.integer("viewpoint id"));
      for (auto& p : v.position) p = tok.real("position");
      v.landmark_id = static_cast<int>(tok.integer("landmark id"));
      vps.push_back(v);
    }
    std::vector<Edge> edges;
    for (int i = 0; i < ne; ++i) {
      tok.expect("edge");
      Edge e;
      e.a = static_cast<int>(tok.integer("edge end"));
      e.b = static_cast<int>(tok.integer("edge end"));
      e.length = tok.real("edge length");
      edges.push_back(e);
    }
    ds.worlds.emplace_back(id, seed, std::move(vps), std::move(edges), ds.landmarks, std::move(style), config);
  }
  for (auto* out : {&ds.train, &ds.seen_val, &ds.unseen_val}) {
    tok.expect("split");
    tok.next("split name");
    const int n = tok.count("episode count");
    for (int i = 0; i < n; ++i) {
      auto e = read_episode(tok);
      const auto& world = ds.world(e.world_id());
      if (!world.has_viewpoint(e.start().viewpoint)) throw FormatError("episode start outside its world");
      out->push_back(std::move(e));
    }
  }
  tok.expect("end");
  return ds;
}

void save_dataset(const std::string& path, const Dataset& data) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write '" + path + "'");
  write_dataset(os, data);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read '" + path + "'");
  return read_dataset(is);
}

// ---- checkpoint ---------------------------------------------------------------------------

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  const auto& s = ckpt.state;
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  append_group(tensors, "param/", s.navigator.params);
  append_group(tensors, "param/", s.critic.params);
  append_group(tensors, "nav_opt.m/", s.nav_opt.m);
  append_group(tensors, "nav_opt.v/", s.nav_opt.v);
  append_group(tensors, "critic_opt.m/", s.critic_opt.m);
  append_group(tensors, "critic_opt.v/", s.critic_opt.v);

  const std::string cfg = format_config(ckpt.config);
  std::size_t cfg_lines = 0;
  for (char ch : cfg) cfg_lines += ch == '\n';
  std::ostringstream rng_text;
  rng_text << s.rng;

  std::size_t total = 0;
  os << "CROSSNAV-CKPT v1\n";
  os << "phase " << s.phase << "\n";
  os << "config " << cfg_lines << "\n" << cfg;
  os << nav_line(s.navigator.config) << "\n";
  os << critic_line(s.critic.config) << "\n";
  os << "rng " << rng_text.str() << "\n";
  os << "nav_opt_step " << s.nav_opt.step << "\n";
  os << "critic_opt_step " << s.critic_opt.step << "\n";
  os << "tensors " << tensors.size() << "\n";
  for (const auto& [name, t] : tensors) {
    os << name << " " << t->rank();
    for (auto d : t->shape()) os << " " << d;
    os << "\n";
    total += t->size();
  }
  os << "payload " << total * 8 << "\n";
  for (const auto& [name, t] : tensors)
    for (double v : t->values()) write_le(os, v);
  if (!os) throw FormatError("checkpoint write failure");
}

Checkpoint read_checkpoint(std::istream& is) {
  std::string magic;
  if (!std::getline(is, magic) || magic != "CROSSNAV-CKPT v1") throw FormatError("checkpoint magic mismatch");
  Checkpoint ck;
  auto& s = ck.state;

  auto words = split_ws(read_line(is, "phase"));
  if (words.size() != 2 || words[0] != "phase") throw FormatError("checkpoint header: expected phase");
  s.phase = words[1];

  words = split_ws(read_line(is, "config"));
  if (words.size() != 2 || words[0] != "config") throw FormatError("checkpoint header: expected config");
  const long long n_cfg = parse_int(words[1]);
  std::string cfg;
  for (long long i = 0; i < n_cfg; ++i) cfg += read_line(is, "config") + "\n";
  try {
    ck.config = parse_config(cfg);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }

  words = split_ws(read_line(is, "navigator"));
  if (words.size() != 12 || words[0] != "navigator") throw FormatError("checkpoint header: expected navigator");
  NavigatorConfig nc;
  int* nav_ints[] = {&nc.vocab_size,  &nc.feature_dim,      &nc.orientation_dim, &nc.embed_dim,   &nc.hidden_dim,
                     &nc.action_embed_dim, &nc.attn_panoramic, &nc.attn_textual,    &nc.attn_visual, &nc.predictor_dim};
  for (std::size_t i = 0; i < 10; ++i) *nav_ints[i] = static_cast<int>(parse_int(words[i + 1]));
  nc.dropout = parse_real(words[11]);

  words = split_ws(read_line(is, "critic"));
  if (words.size() != 10 || words[0] != "critic") throw FormatError("checkpoint header: expected critic");
  CriticConfig cc;
  int* critic_ints[] = {&cc.vocab_size,       &cc.feature_dim,    &cc.orientation_dim,
                        &cc.embed_dim,        &cc.hidden_dim,     &cc.action_embed_dim,
                        &cc.attn_panoramic,   &cc.attn_decoder,   &cc.head_dim};
  for (std::size_t i = 0; i < 9; ++i) *critic_ints[i] = static_cast<int>(parse_int(words[i + 1]));

  const std::string rng_line = read_line(is, "rng");
  if (rng_line.rfind("rng ", 0) != 0) throw FormatError("checkpoint header: expected rng");
  {
    std::istringstream rs(rng_line.substr(4));
    rs >> s.rng;
    if (!rs) throw FormatError("checkpoint rng state is malformed");
  }
  words = split_ws(read_line(is, "optimizer"));
  if (words.size() != 2 || words[0] != "nav_opt_step") throw FormatError("checkpoint header: expected nav_opt_step");
  const auto nav_step = parse_u64(words[1]);
  words = split_ws(read_line(is, "optimizer"));
  if (words.size() != 2 || words[0] != "critic_opt_step")
    throw FormatError("checkpoint header: expected critic_opt_step");
  const auto critic_step = parse_u64(words[1]);

  words = split_ws(read_line(is, "directory"));
  if (words.size() != 2 || words[0] != "tensors") throw FormatError("checkpoint header: expected tensors");
  const long long n_tensors = parse_int(words[1]);
  std::vector<DirEntry> dir;
  std::size_t total = 0;
  for (long long i = 0; i < n_tensors; ++i) {
    words = split_ws(read_line(is, "directory"));
    if (words.size() < 2) throw FormatError("checkpoint directory entry is malformed");
    DirEntry d;
    d.name = words[0];
    const long long rank = parse_int(words[1]);
    if (rank < 0 || static_cast<std::size_t>(rank) + 2 != words.size())
      throw FormatError("checkpoint directory entry has a bad rank: " + d.name);
    std::size_t count = 1;
    for (long long k = 0; k < rank; ++k) {
      d.shape.push_back(static_cast<std::size_t>(parse_u64(words[static_cast<std::size_t>(k) + 2])));
      count *= d.shape.back();
    }
    total += count;
    dir.push_back(std::move(d));
  }
  words = split_ws(read_line(is, "payload"));
  if (words.size() != 2 || words[0] != "payload") throw FormatError("checkpoint header: expected payload");
  if (parse_u64(words[1]) != total * 8) throw FormatError("checkpoint payload size disagrees with directory");

  std::vector<unsigned char> payload(total * 8);
  is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (static_cast<std::size_t>(is.gcount()) != payload.size()) throw FormatError("checkpoint payload truncated");
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint has trailing bytes");

  // Expected layout from the stored model configs.
  Navigator nav = make_zero_navigator(nc);
  Critic critic = make_zero_critic(cc);
  AdamState nav_opt = AdamState::for_params(nav.params);
  AdamState critic_opt = AdamState::for_params(critic.params);
  std::vector<std::pair<std::string, Tensor*>> expected;
  auto expect_group = [&expected](const std::string& prefix, ParamSet& p) {
    for (auto& e : p) expected.emplace_back(prefix + e.name, &e.tensor);
  };
  expect_group("param/", nav.params);
  expect_group("param/", critic.params);
  expect_group("nav_opt.m/", nav_opt.m);
  expect_group("nav_opt.v/", nav_opt.v);
  expect_group("critic_opt.m/", critic_opt.m);
  expect_group("critic_opt.v/", critic_opt.v);
  if (expected.size() != dir.size()) throw FormatError("checkpoint tensor count does not match the model");
  std::size_t offset = 0;
  for (std::size_t i = 0; i < dir.size(); ++i) {
    auto& [name, tensor] = expected[i];
    if (dir[i].name != name) throw FormatError("checkpoint tensor '" + dir[i].name + "' where '" + name + "' expected");
    if (dir[i].shape != tensor->shape()) throw FormatError("checkpoint shape mismatch for " + name);
    for (auto& v : tensor->values()) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(payload[offset + static_cast<std::size_t>(b)]) << (8 * b);
      std::memcpy(&v, &bits, sizeof v);
      offset += 8;
    }
  }
  nav_opt.step = nav_step;
  critic_opt.step = critic_step;
  s.navigator = std::move(nav);
  s.critic = std::move(critic);
  s.nav_opt = std::move(nav_opt);
  s.critic_opt = std::move(critic_opt);
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot write '" + tmp + "'");
    write_checkpoint(os, ckpt);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot read '" + path + "'");
  return read_checkpoint(is);
}

bool same_state(const TrainerState& a, const TrainerState& b) {
  return a.phase == b.phase && a.navigator.config == b.navigator.config && a.critic.config == b.critic.config &&
         bit_equal(a.navigator.params, b.navigator.params) && bit_equal(a.critic.params, b.critic.params) &&
         a.nav_opt.step == b.nav_opt.step && bit_equal(a.nav_opt.m, b.nav_opt.m) &&
         bit_equal(a.nav_opt.v, b.nav_opt.v) && a.critic_opt.step == b.critic_opt.step &&
         bit_equal(a.critic_opt.m, b.critic_opt.m) && bit_equal(a.critic_opt.v, b.critic_opt.v) && a.rng == b.rng;
}

// ---- trace --------------------------------------------------------------------------------

TraceWriter::TraceWriter(std::ostream& os, bool timestamp) : os_(&os) {
  *os_ << kTraceHeader
       << "\tstep:episode_id,t,viewpoint,heading,action_index,log_prob,immediate_reward"
          "\tepisode:episode_id,r_intr,return_0,pl,ne,success,oracle_success,spl"
          "\tepoch:phase,epoch,split,pl,ne,osr,sr,spl,loss\n";
  if (timestamp) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[64];
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    *os_ << "# started " << buf << "\n";
  }
}

void TraceWriter::write(const TraceRecord& record) {
  *os_ << format_record(record) << "\n";
  if (!*os_) throw FormatError("trace write failure");
}

std::string format_record(const TraceRecord& record) {
  std::ostringstream os;
  if (const auto* s = std::get_if<StepRecord>(&record)) {
    os << "step\t" << s->episode_id << "\t" << s->t << "\t" << s->viewpoint << "\t" << real(s->heading) << "\t"
       << s->action_index << "\t" << real(s->log_prob) << "\t" << real(s->immediate_reward);
  } else if (const auto* e = std::get_if<EpisodeRecord>(&record)) {
    os << "episode\t" << e->episode_id << "\t" << real(e->intrinsic) << "\t" << real(e->return0) << "\t"
       << real(e->pl) << "\t" << real(e->ne) << "\t" << e->success << "\t" << e->oracle_success << "\t"
       << real(e->spl);
  } else {
    const auto& r = std::get<EpochRecord>(record);
    os << "epoch\t" << r.phase << "\t" << r.epoch << "\t" << r.split << "\t" << real(r.pl) << "\t" << real(r.ne)
       << "\t" << real(r.osr) << "\t" << real(r.sr) << "\t" << real(r.spl) << "\t" << real(r.loss);
  }
  return os.str();
}

TraceRecord parse_record(const std::string& line) {
  const auto f = split_tabs(line);
  auto need = [&](std::size_t n) {
    if (f.size() != n) throw FormatError("trace record '" + f[0] + "' has " + std::to_string(f.size()) + " fields");
  };
  auto i32 = [](const std::string& s) { return static_cast<int>(parse_int(s)); };
  if (f[0] == "step") {
    need(8);
    return StepRecord{i32(f[1]), i32(f[2]), i32(f[3]), parse_real(f[4]), i32(f[5]), parse_real(f[6]),
                      parse_real(f[7])};
  }
  if (f[0] == "episode") {
    need(9);
    return EpisodeRecord{i32(f[1]),        parse_real(f[2]), parse_real(f[3]), parse_real(f[4]), parse_real(f[5]),
                         i32(f[6]),        i32(f[7]),        parse_real(f[8])};
  }
  if (f[0] == "epoch") {
    need(10);
    EpochRecord r;
    r.phase = f[1];
    r.epoch = i32(f[2]);
    r.split = f[3];
    r.pl = parse_real(f[4]);
    r.ne = parse_real(f[5]);
    r.osr = parse_real(f[6]);
    r.sr = parse_real(f[7]);
    r.spl = parse_real(f[8]);
    r.loss = parse_real(f[9]);
    return r;
  }
  throw FormatError("unknown trace record kind '" + f[0] + "'");
}

std::vector<TraceRecord> read_trace(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind(kTraceHeader, 0) != 0) throw FormatError("not a CROSSNAV-TRACE v1 file");
  std::vector<TraceRecord> out;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    out.push_back(parse_record(line));
  }
  return out;
}

}  // namespace crossnav
