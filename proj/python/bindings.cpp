#include <sstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "crossnav/cli.hpp"
#include "crossnav/config.hpp"
#include "crossnav/gradsuite.hpp"
#include "crossnav/learner.hpp"
#include "crossnav/persist.hpp"

namespace py = pybind11;
using namespace crossnav;

namespace {

py::dict metrics_dict(const MetricsReport& m) {
  py::dict d;
  d["pl"] = m.pl;
  d["ne"] = m.ne;
  d["osr"] = m.osr;
  d["sr"] = m.sr;
  d["spl"] = m.spl;
  d["episodes"] = m.episodes.size();
  return d;
}

py::list history_list(const History& h) {
  py::list out;
  for (const auto& r : h) {
    py::dict d;
    d["phase"] = r.phase;
    d["epoch"] = r.epoch;
    d["split"] = r.split;
    d["sr"] = r.sr;
    d["spl"] = r.spl;
    d["loss"] = r.loss;
    out.append(d);
  }
  return out;
}

// A dataset plus trainer state, driven phase by phase from Python.
class Session {
 public:
  explicit Session(const std::string& config_text) : config_(parse_config(config_text)) {
    data_ = generate_split(config_.split, config_.seed);
    reset();
  }

  void reset() {
    state_ = init_trainer(navigator_config_for(data_, config_.navigator), critic_config_for(data_, config_.critic),
                          config_.seed);
  }

  py::list pretrain_critic_() { return run([&] { return pretrain_critic(state_, data_, config_.train); }); }
  py::list train_sl_() { return run([&] { return train_sl(state_, data_, config_.train, config_.reward); }); }
  py::list train_rl_() { return run([&] { return train_rl(state_, data_, config_.train, config_.reward); }); }
  py::list train_sil_(const std::string& mode) {
    SilMode m;
    if (mode == "train") m = SilMode::Train;
    else if (mode == "unseen") m = SilMode::Unseen;
    else throw py::value_error("mode must be 'train' or 'unseen'");
    return run([&] { return train_sil(state_, data_, config_.train, config_.reward, m); });
  }

  py::dict evaluate(const std::string& split) const {
    const std::vector<EpisodeSpec>* eps = nullptr;
    if (split == "train") eps = &data_.train;
    else if (split == "seen_val") eps = &data_.seen_val;
    else if (split == "unseen_val") eps = &data_.unseen_val;
    else throw py::value_error("unknown split: " + split);
    MetricsReport m;
    {
      py::gil_scoped_release release;
      m = evaluate_split(state_.navigator, data_, *eps, config_.reward, config_.train.max_path, config_.workers);
    }
    return metrics_dict(m);
  }

  void save_checkpoint_(const std::string& path) const { save_checkpoint(path, Checkpoint{config_, state_}); }
  void load_checkpoint_(const std::string& path) {
    auto ck = load_checkpoint(path);
    config_ = ck.config;
    state_ = std::move(ck.state);
  }
  void save_dataset_(const std::string& path) const { save_dataset(path, data_); }

  std::string phase() const { return state_.phase; }
  std::string config() const { return format_config(config_); }
  py::dict sizes() const {
    py::dict d;
    d["worlds"] = data_.worlds.size();
    d["train"] = data_.train.size();
    d["seen_val"] = data_.seen_val.size();
    d["unseen_val"] = data_.unseen_val.size();
    d["vocab"] = data_.vocab_size();
    return d;
  }

 private:
  template <class F>
  py::list run(F&& f) {
    History h;
    {
      py::gil_scoped_release release;
      h = f();
    }
    return history_list(h);
  }

  RunConfig config_;
  Dataset data_;
  TrainerState state_;
};

}  // namespace

PYBIND11_MODULE(_crossnav, m) {
  m.doc() = "Instruction-following navigation on procedural graph worlds";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  m.def("default_config", [] { return format_config(RunConfig{}); });
  m.def("config_keys", &config_keys);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run a crossnav subcommand; returns (exit_code, stdout, stderr).");

  m.def(
      "grad_check",
      [](std::uint64_t seed, double epsilon) {
        py::dict d;
        for (const auto& r : standard_grad_checks(seed, epsilon)) d[py::str(r.module)] = r.max_relative_error;
        return d;
      },
      py::arg("seed") = 1, py::arg("epsilon") = 1e-5);

  m.def(
      "discounted_returns",
      [](const std::vector<double>& rewards, double gamma) { return discounted_returns(rewards, gamma); },
      py::arg("rewards"), py::arg("gamma"));

  py::class_<Session>(m, "Session")
      .def(py::init<const std::string&>(), py::arg("config") = "")
      .def("reset", &Session::reset)
      .def("pretrain_critic", &Session::pretrain_critic_)
      .def("train_sl", &Session::train_sl_)
      .def("train_rl", &Session::train_rl_)
      .def("train_sil", &Session::train_sil_, py::arg("mode") = "unseen")
      .def("evaluate", &Session::evaluate, py::arg("split") = "unseen_val")
      .def("save_checkpoint", &Session::save_checkpoint_)
      .def("load_checkpoint", &Session::load_checkpoint_)
      .def("save_dataset", &Session::save_dataset_)
      .def_property_readonly("phase", &Session::phase)
      .def_property_readonly("config", &Session::config)
      .def_property_readonly("sizes", &Session::sizes);
}
