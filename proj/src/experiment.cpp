#include "v2x/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <zlib.h>

#include "json.hpp"

namespace v2x::experiment {

using nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

// Reads one JSON object, remembering which keys were consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    const json* v = find(key);
    if (!v) return;
    out = convert<T>(*v, join(path_, key));
  }

  template <typename T>
  void get_list(const std::string& key, std::vector<T>& out) {
    const json* v = find(key);
    if (!v) return;
    const auto p = join(path_, key);
    if (!v->is_array()) throw ConfigError(p, "expected an array");
    out.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      out.push_back(convert<T>((*v)[i], fmt::format("{}[{}]", p, i)));
    }
  }

  const json* child(const std::string& key) { return find(key); }
  std::string path(const std::string& key) const { return join(path_, key); }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError(join(path_, key), "unknown key");
    }
  }

 private:
  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <typename T>
  static T convert(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path, "expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) throw ConfigError(path, "expected a non-negative integer");
      return v.get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
      const auto x = v.get<std::int64_t>();
      if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max()) {
        throw ConfigError(path, "integer out of range");
      }
      return static_cast<T>(x);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(path, "expected a number");
      return v.get<double>();
    } else {
      if (!v.is_string()) throw ConfigError(path, "expected a string");
      return v.get<std::string>();
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_network(Section s, env::NetworkConfig& n) {
  s.get("num_v2i", n.num_v2i);
  s.get("num_v2v", n.num_v2v);
  s.get("bandwidth_hz", n.bandwidth_hz);
  s.get("carrier_hz", n.carrier_hz);
  s.get("v2i_power_dbm", n.v2i_power_dbm);
  s.get_list("power_levels_dbm", n.power_levels_dbm);
  s.get("noise_dbm", n.noise_dbm);
  s.get("payload_bytes", n.payload_bytes);
  s.get("budget_ms", n.budget_ms);
  s.get("coherence_ms", n.coherence_ms);
  s.get("beta", n.beta);
  s.get("lambda_c", n.lambda_c);
  s.get("lambda_d", n.lambda_d);
  s.get("v2i_reward_scale", n.v2i_reward_scale);
  s.get("v2v_reward_scale", n.v2v_reward_scale);
  s.get("obs_gain_offset_db", n.obs_gain_offset_db);
  s.get("obs_interference_offset_db", n.obs_interference_offset_db);
  s.finish();
}

json write_network(const env::NetworkConfig& n) {
  return {{"num_v2i", n.num_v2i},
          {"num_v2v", n.num_v2v},
          {"bandwidth_hz", n.bandwidth_hz},
          {"carrier_hz", n.carrier_hz},
          {"v2i_power_dbm", n.v2i_power_dbm},
          {"power_levels_dbm", n.power_levels_dbm},
          {"noise_dbm", n.noise_dbm},
          {"payload_bytes", n.payload_bytes},
          {"budget_ms", n.budget_ms},
          {"coherence_ms", n.coherence_ms},
          {"beta", n.beta},
          {"lambda_c", n.lambda_c},
          {"lambda_d", n.lambda_d},
          {"v2i_reward_scale", n.v2i_reward_scale},
          {"v2v_reward_scale", n.v2v_reward_scale},
          {"obs_gain_offset_db", n.obs_gain_offset_db},
          {"obs_interference_offset_db", n.obs_interference_offset_db}};
}

void read_schedule(Section s, marl::TrainSchedule& t) {
  s.get("episodes", t.episodes);
  s.get("epsilon_start", t.epsilon_start);
  s.get("epsilon_end", t.epsilon_end);
  s.get("anneal_fraction", t.anneal_fraction);
  s.get("target_sync_steps", t.target_sync_steps);
  s.get("refresh_episodes", t.refresh_episodes);
  s.get("gamma", t.gamma);
  s.get("batch_size", t.batch_size);
  s.get("updates_per_episode", t.updates_per_episode);
  s.get("replay_capacity", t.replay_capacity);
  s.get("transfer_weight", t.transfer_weight);
  s.get("anneal_transfer", t.anneal_transfer);
  s.get_list("hidden", t.hidden);
  if (const json* o = s.child("optimizer")) {
    Section opt(*o, s.path("optimizer"));
    opt.get("learning_rate", t.optimizer.learning_rate);
    opt.get("decay", t.optimizer.decay);
    opt.get("epsilon", t.optimizer.epsilon);
    opt.finish();
  }
  s.finish();
}

json write_schedule(const marl::TrainSchedule& t) {
  return {{"episodes", t.episodes},
          {"epsilon_start", t.epsilon_start},
          {"epsilon_end", t.epsilon_end},
          {"anneal_fraction", t.anneal_fraction},
          {"target_sync_steps", t.target_sync_steps},
          {"refresh_episodes", t.refresh_episodes},
          {"gamma", t.gamma},
          {"batch_size", t.batch_size},
          {"updates_per_episode", t.updates_per_episode},
          {"replay_capacity", t.replay_capacity},
          {"transfer_weight", t.transfer_weight},
          {"anneal_transfer", t.anneal_transfer},
          {"hidden", t.hidden},
          {"optimizer",
           {{"learning_rate", t.optimizer.learning_rate},
            {"decay", t.optimizer.decay},
            {"epsilon", t.optimizer.epsilon}}}};
}

void read_scenario(Section s, ScenarioConfig& c) {
  std::string kind = c.kind == ScenarioConfig::Kind::grid ? "grid" : "trace";
  s.get("kind", kind);
  if (kind == "grid") {
    c.kind = ScenarioConfig::Kind::grid;
  } else if (kind == "trace") {
    c.kind = ScenarioConfig::Kind::trace;
  } else {
    throw ConfigError(s.path("kind"), "expected \"grid\" or \"trace\"");
  }
  if (const json* g = s.child("grid")) {
    Section grid(*g, s.path("grid"));
    grid.get("width_m", c.grid.width_m);
    grid.get("height_m", c.grid.height_m);
    grid.get("vehicles", c.grid.vehicles);
    grid.get("speed_mps", c.grid.speed_mps);
    grid.get("block_m", c.grid.block_m);
    grid.get("buildings", c.grid.buildings);
    grid.get("street_width_m", c.grid.street_width_m);
    grid.finish();
  }
  s.get("trace_file", c.trace_file);
  s.get("obstacle_file", c.obstacle_file);
  s.get("duration_ms", c.duration_ms);
  s.get("period_ms", c.period_ms);
  s.get("train_snapshots", c.train_snapshots);
  s.finish();
}

json write_scenario(const ScenarioConfig& c) {
  return {{"kind", c.kind == ScenarioConfig::Kind::grid ? "grid" : "trace"},
          {"grid",
           {{"width_m", c.grid.width_m},
            {"height_m", c.grid.height_m},
            {"vehicles", c.grid.vehicles},
            {"speed_mps", c.grid.speed_mps},
            {"block_m", c.grid.block_m},
            {"buildings", c.grid.buildings},
            {"street_width_m", c.grid.street_width_m}}},
          {"trace_file", c.trace_file},
          {"obstacle_file", c.obstacle_file},
          {"duration_ms", c.duration_ms},
          {"period_ms", c.period_ms},
          {"train_snapshots", c.train_snapshots}};
}

json to_json(const ExperimentConfig& c) {
  return {{"network", write_network(c.network)},
          {"schedule", write_schedule(c.schedule)},
          {"tql_episodes", c.tql_episodes},
          {"scenario", write_scenario(c.scenario)},
          {"variants", c.variants},
          {"payload_multipliers", c.payload_multipliers},
          {"seeds", c.seeds},
          {"expert_seed", c.expert_seed},
          {"output_dir", c.output_dir},
          {"expert_checkpoint", c.expert_checkpoint},
          {"eval_episodes", c.eval_episodes},
          {"histogram_bin_ms", c.histogram_bin_ms}};
}

std::string crc_hex(const std::string& text) {
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(text.data()),
                         static_cast<uInt>(text.size()));
  return fmt::format("{:08x}", static_cast<std::uint32_t>(crc));
}

bool is_tql(const std::string& variant) {
  return marl::parse_variant(variant) == marl::Variant::ddqn_tql;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("short write to " + path.string());
}

}  // namespace

bool ExperimentConfig::operator==(const ExperimentConfig& o) const {
  return to_json(*this) == to_json(o);
}

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("malformed JSON: ") + e.what());
  }
  ExperimentConfig c;
  Section root(j, "");
  if (const json* n = root.child("network")) read_network(Section(*n, "network"), c.network);
  if (const json* s = root.child("schedule")) read_schedule(Section(*s, "schedule"), c.schedule);
  root.get("tql_episodes", c.tql_episodes);
  if (const json* s = root.child("scenario")) read_scenario(Section(*s, "scenario"), c.scenario);
  root.get_list("variants", c.variants);
  root.get_list("payload_multipliers", c.payload_multipliers);
  root.get_list("seeds", c.seeds);
  root.get("expert_seed", c.expert_seed);
  root.get("output_dir", c.output_dir);
  root.get("expert_checkpoint", c.expert_checkpoint);
  root.get("eval_episodes", c.eval_episodes);
  root.get("histogram_bin_ms", c.histogram_bin_ms);
  root.finish();
  validate(c);
  return c;
}

std::string dump_config(const ExperimentConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void validate(const ExperimentConfig& c) {
  try {
    c.network.validate();
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    const auto colon = msg.find(':');
    throw ConfigError("network." + msg.substr(0, colon), msg.substr(colon + 2));
  }
  try {
    c.schedule.validate();
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    const auto colon = msg.find(':');
    throw ConfigError("schedule." + msg.substr(0, colon), msg.substr(colon + 2));
  }
  if (c.tql_episodes < 0) throw ConfigError("tql_episodes", "must be >= 0");

  const auto& s = c.scenario;
  if (s.kind == ScenarioConfig::Kind::grid) {
    if (!(s.grid.width_m > 0.0)) throw ConfigError("scenario.grid.width_m", "must be > 0");
    if (!(s.grid.height_m > 0.0)) throw ConfigError("scenario.grid.height_m", "must be > 0");
    if (!(s.grid.speed_mps > 0.0)) throw ConfigError("scenario.grid.speed_mps", "must be > 0");
    if (!(s.grid.block_m > 0.0)) throw ConfigError("scenario.grid.block_m", "must be > 0");
    if (!(s.grid.street_width_m > 0.0 && s.grid.street_width_m < s.grid.block_m)) {
      throw ConfigError("scenario.grid.street_width_m", "must be in (0, block_m)");
    }
    const int needed = std::max(c.network.num_v2i, 2 * c.network.num_v2v);
    if (s.grid.vehicles < needed) {
      throw ConfigError("scenario.grid.vehicles", fmt::format("need at least {} vehicles", needed));
    }
    if (!(s.period_ms > 0.0)) throw ConfigError("scenario.period_ms", "must be > 0");
    if (!(s.duration_ms > 0.0)) throw ConfigError("scenario.duration_ms", "must be > 0");
    const double snaps = s.duration_ms / s.period_ms;
    if (std::abs(snaps - std::round(snaps)) > 1e-9) {
      throw ConfigError("scenario.period_ms", "must divide duration_ms");
    }
    if (std::lround(snaps) + 1 <= s.train_snapshots) {
      throw ConfigError("scenario.train_snapshots", "leaves no snapshots for evaluation");
    }
  } else {
    if (s.trace_file.empty()) throw ConfigError("scenario.trace_file", "required for trace scenarios");
    if (!std::filesystem::exists(s.trace_file)) {
      throw ConfigError("scenario.trace_file", "file not found: " + s.trace_file);
    }
    if (!s.obstacle_file.empty() && !std::filesystem::exists(s.obstacle_file)) {
      throw ConfigError("scenario.obstacle_file", "file not found: " + s.obstacle_file);
    }
  }
  if (s.train_snapshots < 1) throw ConfigError("scenario.train_snapshots", "must be >= 1");

  if (c.variants.empty()) throw ConfigError("variants", "must not be empty");
  std::set<std::string> names;
  for (std::size_t i = 0; i < c.variants.size(); ++i) {
    const auto path = fmt::format("variants[{}]", i);
    try {
      marl::parse_variant(c.variants[i]);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(path, e.what());
    }
    if (!names.insert(c.variants[i]).second) throw ConfigError(path, "duplicate variant");
  }
  if (c.payload_multipliers.empty()) throw ConfigError("payload_multipliers", "must not be empty");
  for (std::size_t i = 0; i < c.payload_multipliers.size(); ++i) {
    if (c.payload_multipliers[i] < 1) {
      throw ConfigError(fmt::format("payload_multipliers[{}]", i), "must be >= 1");
    }
  }
  if (c.seeds.empty()) throw ConfigError("seeds", "must not be empty");
  std::set<std::uint64_t> seen;
  for (std::size_t i = 0; i < c.seeds.size(); ++i) {
    if (!seen.insert(c.seeds[i]).second) {
      throw ConfigError(fmt::format("seeds[{}]", i), "seeds must be distinct");
    }
  }
  if (!c.expert_checkpoint.empty() && !std::filesystem::exists(c.expert_checkpoint)) {
    throw ConfigError("expert_checkpoint", "file not found: " + c.expert_checkpoint);
  }
  if (c.eval_episodes < 0) throw ConfigError("eval_episodes", "must be >= 0");
  if (!(c.histogram_bin_ms > 0.0)) throw ConfigError("histogram_bin_ms", "must be > 0");
  const double bins = c.network.budget_ms / c.histogram_bin_ms;
  if (std::abs(bins - std::round(bins)) > 1e-9) {
    throw ConfigError("histogram_bin_ms", "must divide network.budget_ms");
  }
}

std::string cell_digest(const ExperimentConfig& cfg, const std::string& variant,
                        int payload_multiplier) {
  auto network = cfg.network;
  network.payload_bytes = payload_multiplier * kPayloadUnitBytes;
  json j{{"network", write_network(network)},
         {"scenario", write_scenario(cfg.scenario)},
         {"variant", variant},
         {"eval_episodes", cfg.eval_episodes}};
  if (marl::parse_variant(variant) != marl::Variant::random) {
    auto sched = cfg.schedule;
    if (is_tql(variant)) sched.episodes = cfg.tql_episodes;
    j["schedule"] = write_schedule(sched);
  }
  return crc_hex(j.dump());
}

marl::Scenario build_scenario(const ExperimentConfig& cfg, std::uint64_t trace_seed) {
  const auto& s = cfg.scenario;
  marl::Scenario out;
  out.train_snapshots = s.train_snapshots;
  out.propagation.carrier_hz = cfg.network.carrier_hz;
  if (s.kind == ScenarioConfig::Kind::grid) {
    geo::GridTraceParams p;
    p.width_m = s.grid.width_m;
    p.height_m = s.grid.height_m;
    p.vehicles = s.grid.vehicles;
    p.speed_mps = s.grid.speed_mps;
    p.duration_ms = s.duration_ms;
    p.period_ms = s.period_ms;
    p.block_m = s.grid.block_m;
    p.seed = mix_seed(trace_seed, 0);
    out.traces = geo::generate_grid_traces(p);
    if (s.grid.buildings) {
      const auto bs = out.traces.snapshots.front().base_station;
      geo::attach_environment(
          out.traces,
          geo::grid_buildings(s.grid.width_m, s.grid.height_m, s.grid.block_m,
                              s.grid.street_width_m),
          bs);
    }
  } else {
    out.traces = geo::load_traces(s.trace_file);
    std::vector<geo::Obstacle> obstacles;
    if (!s.obstacle_file.empty()) obstacles = geo::load_obstacles(s.obstacle_file);
    geo::attach_environment(out.traces, obstacles,
                            geo::BaseStation{geo::trace_centroid(out.traces), true});
  }
  out.validate();
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const std::vector<neuro::QNetwork>* expert,
                                const RunOptions& options) {
  validate(cfg);
  const bool needs_expert = std::any_of(cfg.variants.begin(), cfg.variants.end(), is_tql);
  if (needs_expert && (!expert || expert->empty())) {
    throw ConfigError("expert_checkpoint", "transfer Q-learning variant needs an expert checkpoint");
  }
  if (needs_expert && static_cast<int>(expert->size()) != cfg.network.num_v2v) {
    throw ConfigError("expert_checkpoint",
                      fmt::format("expert holds {} networks, expected {}", expert->size(),
                                  cfg.network.num_v2v));
  }
  auto say = [&](const std::string& msg) {
    if (options.progress) options.progress(msg);
  };

  const std::filesystem::path out_dir = cfg.output_dir;
  if (options.write_files) std::filesystem::create_directories(out_dir);

  ExperimentResult result;
  std::map<std::uint64_t, marl::Scenario> scenarios;
  for (const auto& variant_name : cfg.variants) {
    const auto variant = marl::parse_variant(variant_name);
    for (int mult : cfg.payload_multipliers) {
      auto network = cfg.network;
      network.payload_bytes = mult * kPayloadUnitBytes;
      const auto digest = cell_digest(cfg, variant_name, mult);
      for (auto seed : cfg.seeds) {
        if (!scenarios.contains(seed)) scenarios.emplace(seed, build_scenario(cfg, seed));
        const auto& scenario = scenarios.at(seed);
        say(fmt::format("cell {} payload={} seed={}", variant_name, network.payload_bytes, seed));

        CellResult cell;
        cell.variant = variant_name;
        cell.payload_multiplier = mult;
        cell.seed = seed;
        marl::EvalOptions eval;
        eval.episodes = cfg.eval_episodes;
        eval.seed = seed;
        eval.variant_label = variant_name;

        std::vector<neuro::QNetwork> policies;
        if (variant != marl::Variant::random) {
          auto sched = cfg.schedule;
          if (variant == marl::Variant::ddqn_tql) sched.episodes = cfg.tql_episodes;
          auto trained = marl::train(scenario, network, sched, variant,
                                     variant == marl::Variant::ddqn_tql ? expert : nullptr, seed,
                                     &result.audit);
          for (auto& w : trained.warnings) {
            say("warning: " + w);
            if (std::find(result.warnings.begin(), result.warnings.end(), w) ==
                result.warnings.end()) {
              result.warnings.push_back(w);
            }
          }
          policies = marl::online_networks(trained.agents);
          cell.log = std::move(trained.log);
          eval.fingerprint = trained.final_fingerprint;
        }
        cell.fingerprint = eval.fingerprint;
        cell.metrics = marl::evaluate(policies.empty() ? nullptr : &policies, scenario, network,
                                      eval, &result.audit);
        cell.metrics.config_digest = digest;
        try {
          cell.metrics.validate();
        } catch (const std::invalid_argument& e) {
          result.audit.check(false, e.what());
        }
        if (!cell.metrics.outcomes.empty()) {
          const auto hist = evalkit::delivery_time_histogram(cell.metrics, cfg.histogram_bin_ms);
          result.audit.check(hist.total() == static_cast<long>(cell.metrics.outcomes.size()),
                             "histogram mass not conserved");
        }
        if (options.keep_policies) {
          cell.policies = std::move(policies);
          cell.scenario = scenario;
        }
        result.cells.push_back(std::move(cell));
      }
    }
  }

  if (options.write_files) {
    std::string results = std::string(evalkit::kResultsHeader) + "\n";
    for (const auto& c : result.cells) results += evalkit::results_row(c.metrics) + "\n";
    write_text(out_dir / "results.csv", results);

    std::vector<evalkit::RunMetrics> runs;
    for (const auto& c : result.cells) runs.push_back(c.metrics);
    std::ostringstream summary;
    if (cfg.eval_episodes > 0) {
      evalkit::compare_runs(runs);  // digest consistency
      // Summarize the rows as written so that `aggregate` reproduces this file.
      std::istringstream written(results);
      evalkit::write_summary(summary, evalkit::compare_rows(evalkit::parse_results(written)));
    } else {
      summary << evalkit::kSummaryHeader << '\n';
    }
    write_text(out_dir / "summary.csv", summary.str());

    for (int mult : cfg.payload_multipliers) {
      std::ostringstream hist;
      hist << evalkit::kHistogramHeader << '\n';
      for (const auto& variant_name : cfg.variants) {
        evalkit::RunMetrics pooled;
        pooled.budget_ms = cfg.network.budget_ms;
        for (const auto& c : result.cells) {
          if (c.variant != variant_name || c.payload_multiplier != mult) continue;
          pooled.outcomes.insert(pooled.outcomes.end(), c.metrics.outcomes.begin(),
                                 c.metrics.outcomes.end());
        }
        evalkit::write_histogram(hist, variant_name,
                                 evalkit::delivery_time_histogram(pooled, cfg.histogram_bin_ms));
      }
      write_text(out_dir / fmt::format("histogram_{}.csv", mult * kPayloadUnitBytes), hist.str());
    }

    for (const auto& c : result.cells) {
      if (c.log.empty()) continue;
      std::ostringstream log;
      marl::write_train_log(log, c.log);
      write_text(out_dir / fmt::format("train_log_{}_{}_{}.csv", c.variant,
                                       c.payload_multiplier * kPayloadUnitBytes, c.seed),
                 log.str());
    }
  }
  return result;
}

marl::TrainResult train_expert(const ExperimentConfig& cfg, const RunOptions& options) {
  validate(cfg);
  const auto scenario = build_scenario(cfg, cfg.expert_seed);
  auto result = marl::train(scenario, cfg.network, cfg.schedule, marl::Variant::ddqn, nullptr,
                            cfg.expert_seed);
  if (cfg.schedule.episodes < cfg.schedule.refresh_episodes) {
    result.warnings.push_back(fmt::format(
        "expert trained for only {} episodes; the checkpoint will be weak", cfg.schedule.episodes));
  }
  if (options.progress) {
    for (const auto& w : result.warnings) options.progress("warning: " + w);
  }
  return result;
}

std::vector<evalkit::ComparisonRow> aggregate_results(const std::filesystem::path& results_csv) {
  std::ifstream in(results_csv);
  if (!in) throw std::runtime_error("cannot open " + results_csv.string());
  const auto rows = evalkit::parse_results(in);
  return evalkit::compare_rows(rows);
}

}  // namespace v2x::experiment
