// Python bindings: configuration, experiments, the environment and a few
// channel helpers.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "v2x/env.hpp"
#include "v2x/evalkit.hpp"
#include "v2x/experiment.hpp"
#include "v2x/geo_channel.hpp"
#include "v2x/marl.hpp"
#include "v2x/neuro.hpp"

namespace py = pybind11;
using namespace v2x;

namespace {

py::dict metrics_dict(const evalkit::RunMetrics& m) {
  py::dict d;
  d["variant"] = m.variant;
  d["seed"] = m.seed;
  d["payload_bytes"] = m.payload_bytes;
  d["config_digest"] = m.config_digest;
  const bool any = !m.outcomes.empty();
  d["v2i_sum_mbps"] = m.v2i_sum_bps.empty() ? py::float_(NAN) : py::float_(evalkit::v2i_sum_capacity_mbps(m));
  d["delivery_rate"] = any ? py::float_(evalkit::delivery_rate(m)) : py::float_(NAN);
  std::vector<double> times;
  for (const auto& o : m.outcomes) {
    if (o.success) times.push_back(o.time_ms);
  }
  d["delivery_times_ms"] = times;
  d["lost"] = static_cast<long>(m.outcomes.size() - times.size());
  return d;
}

// One episode at a time on a scenario built from an experiment config.
class Simulator {
 public:
  Simulator(const std::string& config_json, std::uint64_t trace_seed)
      : cfg_(experiment::parse_config(config_json)),
        scenario_(experiment::build_scenario(cfg_, trace_seed)),
        env_(cfg_.network) {}

  int num_snapshots() const { return static_cast<int>(scenario_.traces.snapshots.size()); }
  int num_actions() const { return cfg_.network.num_actions(); }
  int observation_size() const { return cfg_.network.observation_size(); }

  std::vector<env::Observation> reset(int snapshot, std::uint64_t seed, double epsilon,
                                      double iteration) {
    if (snapshot < 0 || snapshot >= num_snapshots()) throw py::index_error("snapshot out of range");
    rng_ = make_rng(seed, 0);
    geo::ShadowingState shadow;
    const auto& scene = scenario_.traces.snapshots[static_cast<std::size_t>(snapshot)];
    const auto roles = geo::assign_links(scene, cfg_.network.num_v2i, cfg_.network.num_v2v);
    const auto large = geo::compute_large_scale(scene, roles, cfg_.network.num_v2i, shadow,
                                                scenario_.propagation, rng_);
    fp_ = {epsilon, iteration};
    return env_.reset(large, fp_, rng_);
  }

  py::dict step(const std::vector<int>& actions) {
    std::vector<env::Action> acts;
    for (int a : actions) {
      if (a < 0 || a >= num_actions()) throw py::value_error("malformed action index");
      acts.push_back(env::Action::from_flat(a, cfg_.network.num_power_levels()));
    }
    const auto out = env_.step(acts, fp_, rng_);
    py::dict d;
    d["reward"] = out.reward;
    d["observations"] = out.observations;
    d["done"] = out.done;
    d["v2i_rates_bps"] = out.v2i_rates_bps;
    d["v2v_rates_bps"] = out.v2v_rates_bps;
    d["delivered"] = env_.state().delivered;
    d["remaining_bits"] = [&] {
      std::vector<double> r;
      for (int k = 0; k < cfg_.network.num_v2v; ++k) r.push_back(std::max(0.0, env_.state().remaining_bits(k)));
      return r;
    }();
    return d;
  }

 private:
  experiment::ExperimentConfig cfg_;
  marl::Scenario scenario_;
  env::Environment env_;
  Rng rng_;
  env::Fingerprint fp_;
};

}  // namespace

PYBIND11_MODULE(_v2x_marl, m) {
  m.doc() = "Multi-agent deep Q-learning for V2X spectrum sharing";

  py::register_exception<experiment::ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("default_config", [] { return experiment::dump_config(experiment::ExperimentConfig{}); },
        "Canonical JSON of the built-in defaults.");
  m.def("normalize_config",
        [](const std::string& text) { return experiment::dump_config(experiment::parse_config(text)); },
        py::arg("config_json"), "Parse, validate and re-emit a configuration with every field filled in.");

  m.def("link_rate", &env::link_rate, py::arg("sinr"), py::arg("bandwidth_hz"));
  m.def("free_space_loss_1m_db", &geo::free_space_loss_1m_db, py::arg("carrier_hz"));
  m.def(
      "large_scale_gain_db",
      [](std::pair<double, double> tx, std::pair<double, double> rx, const std::string& cls,
         double shadowing_db) {
        geo::LinkClass c;
        if (cls == "los") c = geo::LinkClass::los;
        else if (cls == "nlos_v") c = geo::LinkClass::nlos_v;
        else if (cls == "nlos_b") c = geo::LinkClass::nlos_b;
        else throw py::value_error("link class must be los, nlos_v or nlos_b");
        return geo::large_scale_gain_db({tx.first, tx.second}, {rx.first, rx.second}, c, shadowing_db,
                                        geo::PropagationParams{});
      },
      py::arg("tx"), py::arg("rx"), py::arg("link_class"), py::arg("shadowing_db") = 0.0);

  m.def(
      "run_experiment",
      [](const std::string& config_json, const std::string& expert_checkpoint, bool write_files) {
        auto cfg = experiment::parse_config(config_json);
        std::vector<neuro::QNetwork> expert;
        if (!expert_checkpoint.empty()) {
          cfg.expert_checkpoint = expert_checkpoint;
          experiment::validate(cfg);
          expert = neuro::load_checkpoint(expert_checkpoint);
        }
        experiment::RunOptions opts;
        opts.write_files = write_files;
        experiment::ExperimentResult result;
        {
          py::gil_scoped_release release;
          result = experiment::run_experiment(cfg, expert.empty() ? nullptr : &expert, opts);
        }
        py::list cells;
        for (const auto& c : result.cells) cells.append(metrics_dict(c.metrics));
        py::dict out;
        out["cells"] = cells;
        out["audit_violations"] = result.audit.violations;
        out["agent_episodes"] = result.audit.agent_episodes;
        out["warnings"] = result.warnings;
        return out;
      },
      py::arg("config_json"), py::arg("expert_checkpoint") = "", py::arg("write_files") = true,
      "Train and evaluate every (variant, payload, seed) cell of the configuration.");

  m.def(
      "train_expert",
      [](const std::string& config_json, const std::filesystem::path& checkpoint) {
        const auto cfg = experiment::parse_config(config_json);
        marl::TrainResult result;
        {
          py::gil_scoped_release release;
          result = experiment::train_expert(cfg);
        }
        neuro::save_checkpoint(checkpoint, marl::online_networks(result.agents));
        return result.warnings;
      },
      py::arg("config_json"), py::arg("checkpoint"));

  m.def(
      "aggregate",
      [](const std::filesystem::path& results_csv) {
        py::list rows;
        for (const auto& r : experiment::aggregate_results(results_csv)) {
          py::dict d;
          d["variant"] = r.variant;
          d["payload_bytes"] = r.payload_bytes;
          d["runs"] = r.runs;
          d["v2i_sum_mbps_mean"] = r.v2i_mean_mbps;
          d["v2i_sum_mbps_sd"] = r.v2i_sd_mbps;
          d["v2v_delivery_rate_mean"] = r.delivery_mean;
          d["v2v_delivery_rate_sd"] = r.delivery_sd;
          rows.append(d);
        }
        return rows;
      },
      py::arg("results_csv"));

  m.def(
      "grad_check",
      [](const std::vector<int>& layer_sizes, int batch, std::uint64_t seed, double tolerance) {
        const auto net = neuro::QNetwork::init(layer_sizes, seed);
        auto rng = make_rng(seed, 1);
        std::normal_distribution<double> normal(0.0, 1.0);
        neuro::Matrix x(batch, net.input_size());
        neuro::Matrix dy(batch, net.output_size());
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
        for (Eigen::Index i = 0; i < dy.size(); ++i) dy.data()[i] = normal(rng);
        neuro::GradCheckOptions opts;
        opts.tolerance = tolerance;
        const auto r = neuro::grad_check(net, x, dy, opts);
        py::dict d;
        d["passed"] = r.passed;
        d["max_relative_error"] = r.max_relative_error;
        d["worst_coordinate"] = r.worst_coordinate;
        d["checked"] = r.checked;
        d["skipped_kinks"] = r.skipped_kinks;
        return d;
      },
      py::arg("layer_sizes"), py::arg("batch") = 4, py::arg("seed") = 0, py::arg("tolerance") = 1e-4);

  py::class_<Simulator>(m, "Simulator",
                        "Environment on the scenario of an experiment configuration and trace seed.")
      .def(py::init<const std::string&, std::uint64_t>(), py::arg("config_json"), py::arg("trace_seed") = 0)
      .def_property_readonly("num_snapshots", &Simulator::num_snapshots)
      .def_property_readonly("num_actions", &Simulator::num_actions)
      .def_property_readonly("observation_size", &Simulator::observation_size)
      .def("reset", &Simulator::reset, py::arg("snapshot"), py::arg("seed") = 0,
           py::arg("epsilon") = 0.02, py::arg("iteration") = 1.0)
      .def("step", &Simulator::step, py::arg("actions"));
}
