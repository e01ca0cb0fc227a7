#pragma once

// Experiment configuration and the (variant, payload, seed) runner behind the
// command line tool.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "v2x/env.hpp"
#include "v2x/evalkit.hpp"
#include "v2x/geo_channel.hpp"
#include "v2x/marl.hpp"

namespace v2x::experiment {

inline constexpr int kPayloadUnitBytes = 1060;

// Validation failure pinned to a dotted field path, e.g. "schedule.gamma".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& message)
      : std::runtime_error(path + ": " + message), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct GridScenario {
  double width_m = 500.0;
  double height_m = 500.0;
  int vehicles = 8;
  double speed_mps = 10.0;
  double block_m = 50.0;
  bool buildings = true;
  double street_width_m = 10.0;

  bool operator==(const GridScenario&) const = default;
};

struct ScenarioConfig {
  enum class Kind { grid, trace };
  Kind kind = Kind::grid;
  GridScenario grid;
  std::string trace_file;
  std::string obstacle_file;  // optional for trace scenarios
  double duration_ms = 13000.0;
  double period_ms = 100.0;
  int train_snapshots = 30;

  bool operator==(const ScenarioConfig&) const = default;
};

struct ExperimentConfig {
  env::NetworkConfig network;
  marl::TrainSchedule schedule;
  int tql_episodes = 1800;
  ScenarioConfig scenario;
  std::vector<std::string> variants{"dqn", "ddqn", "random"};
  std::vector<int> payload_multipliers{1, 2, 3, 4, 5, 6};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::uint64_t expert_seed = 1000;  // trace seed of the expert's training run
  std::string output_dir = "results";
  std::string expert_checkpoint;
  int eval_episodes = 100;
  double histogram_bin_ms = 5.0;

  bool operator==(const ExperimentConfig&) const;
};

// Missing keys keep their defaults; unknown keys and bad values raise
// ConfigError. File checks happen here too.
ExperimentConfig parse_config(const std::string& json_text);
// Canonical, fully populated JSON document.
std::string dump_config(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);
void validate(const ExperimentConfig& cfg);

// Hex CRC-32 over the canonical JSON of everything that shapes one cell's
// numbers except the seed.
std::string cell_digest(const ExperimentConfig& cfg, const std::string& variant,
                        int payload_multiplier);

// Builds the scenario a run with this trace seed sees.
marl::Scenario build_scenario(const ExperimentConfig& cfg, std::uint64_t trace_seed);

struct CellResult {
  std::string variant;
  int payload_multiplier = 0;
  std::uint64_t seed = 0;
  evalkit::RunMetrics metrics;
  std::vector<marl::TrainLogRow> log;
  std::vector<neuro::QNetwork> policies;  // empty for the random baseline
  env::Fingerprint fingerprint;
  marl::Scenario scenario;
};

struct ExperimentResult {
  std::vector<CellResult> cells;
  marl::AccountingAudit audit;
  std::vector<std::string> warnings;
};

struct RunOptions {
  bool write_files = true;
  bool keep_policies = false;
  std::function<void(const std::string&)> progress;
};

// Trains and evaluates every cell in (variant, payload, seed) order, then
// writes results.csv, summary.csv, histogram_<bytes>.csv and per-cell
// training logs. Throws ConfigError when a TQL variant lacks its expert.
ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const std::vector<neuro::QNetwork>* expert,
                                const RunOptions& options = {});

// Double DQN on the expert trace seed with the full schedule.
marl::TrainResult train_expert(const ExperimentConfig& cfg, const RunOptions& options = {});

// Re-aggregates results.csv into summary rows.
std::vector<evalkit::ComparisonRow> aggregate_results(const std::filesystem::path& results_csv);

}  // namespace v2x::experiment
