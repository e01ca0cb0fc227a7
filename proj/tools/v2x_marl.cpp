// Command line front end: train-expert, run, gradcheck, aggregate.

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "v2x/experiment.hpp"
#include "v2x/neuro.hpp"

namespace {

namespace ex = v2x::experiment;

constexpr int kExitFailure = 1;
constexpr int kExitBadConfig = 2;
constexpr int kExitNoExpert = 3;

struct Common {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> variants;
  std::vector<int> payload_mults;
  std::string out;
  std::string expert;
  int episodes = -1;
};

std::string default_out() {
  const char* env = std::getenv("V2X_MARL_OUT");
  return env && *env ? env : "";
}

ex::ExperimentConfig resolve(const Common& c) {
  ex::ExperimentConfig cfg;
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    if (!in) throw ex::ConfigError("--config", "cannot open " + c.config);
    std::stringstream ss;
    ss << in.rdbuf();
    cfg = ex::parse_config(ss.str());
  }
  // The environment only replaces the built-in default, never a configured path.
  if (const auto env_out = default_out(); !env_out.empty() && cfg.output_dir == ex::ExperimentConfig{}.output_dir) {
    cfg.output_dir = env_out;
  }
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (!c.seeds.empty()) cfg.seeds = c.seeds;
  if (!c.variants.empty()) cfg.variants = c.variants;
  if (!c.payload_mults.empty()) cfg.payload_multipliers = c.payload_mults;
  if (!c.expert.empty()) cfg.expert_checkpoint = c.expert;
  if (c.episodes >= 0) cfg.schedule.episodes = c.episodes;
  ex::validate(cfg);
  return cfg;
}

void log_line(const std::string& msg) { std::cerr << msg << '\n'; }

int cmd_run(const Common& c) {
  const auto cfg = resolve(c);
  std::vector<v2x::neuro::QNetwork> expert;
  const bool tql = std::find(cfg.variants.begin(), cfg.variants.end(), "ddqn-tql") != cfg.variants.end();
  if (tql) {
    if (cfg.expert_checkpoint.empty()) {
      std::cerr << "error: expert_checkpoint: the ddqn-tql variant needs --expert\n";
      return kExitNoExpert;
    }
    expert = v2x::neuro::load_checkpoint(cfg.expert_checkpoint);
  }
  ex::RunOptions opts;
  opts.progress = log_line;
  const auto result = ex::run_experiment(cfg, tql ? &expert : nullptr, opts);
  if (result.audit.violations > 0) {
    for (const auto& m : result.audit.messages) std::cerr << "accounting: " << m << '\n';
    return kExitFailure;
  }
  std::cout << fmt::format("{} cells written to {}\n", result.cells.size(), cfg.output_dir);
  return 0;
}

int cmd_train_expert(const Common& c, std::string checkpoint) {
  auto cfg = resolve(c);
  if (!c.seeds.empty()) cfg.expert_seed = c.seeds.front();
  ex::RunOptions opts;
  opts.progress = log_line;
  const auto result = ex::train_expert(cfg, opts);
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
  if (checkpoint.empty()) checkpoint = (std::filesystem::path(cfg.output_dir) / "expert.bin").string();
  const auto parent = std::filesystem::path(checkpoint).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  const auto nets = v2x::marl::online_networks(result.agents);
  v2x::neuro::save_checkpoint(checkpoint, nets);
  std::cout << fmt::format("expert with {} networks written to {}\n", nets.size(), checkpoint);
  return 0;
}

int cmd_gradcheck(double tolerance, bool inject, int nets, int batches) {
  v2x::neuro::GradCheckOptions opts;
  opts.tolerance = tolerance;
  auto rng = v2x::make_rng(2024, 0);
  std::uniform_int_distribution<int> width(2, 12);
  std::normal_distribution<double> normal(0.0, 1.0);
  int failures = 0;
  double worst = 0.0;
  for (int n = 0; n < nets; ++n) {
    std::vector<int> sizes{width(rng)};
    const int hidden = 1 + n % 3;
    for (int h = 0; h < hidden; ++h) sizes.push_back(width(rng));
    sizes.push_back(width(rng));
    const auto net = v2x::neuro::QNetwork::init(sizes, v2x::mix_seed(2024, 100 + n));
    for (int b = 0; b < batches; ++b) {
      const int rows = 1 + b % 5;
      v2x::neuro::Matrix x(rows, sizes.front());
      v2x::neuro::Matrix dy(rows, sizes.back());
      for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
      for (Eigen::Index i = 0; i < dy.size(); ++i) dy.data()[i] = normal(rng);
      std::optional<std::size_t> corrupt;
      if (inject && n == 0 && b == 0) {
        const auto g = v2x::neuro::flatten(net.backward(x, dy));
        std::size_t best = 0;
        for (std::size_t i = 1; i < g.size(); ++i) {
          if (std::abs(g[i]) > std::abs(g[best])) best = i;
        }
        corrupt = best;
      }
      const auto report = v2x::neuro::grad_check(net, x, dy, opts, corrupt);
      worst = std::max(worst, report.max_relative_error);
      if (!report.passed) {
        ++failures;
        std::cout << fmt::format("FAIL net {} batch {}: {} relative error {:.3e} (tolerance {:.1e})\n",
                                 n, b, report.worst_coordinate, report.max_relative_error,
                                 tolerance);
      }
    }
  }
  std::cout << fmt::format("gradcheck: {} of {} checks failed, worst relative error {:.3e}\n",
                           failures, nets * batches, worst);
  return failures == 0 ? 0 : kExitFailure;
}

int cmd_aggregate(const std::string& results, std::string out) {
  const auto rows = ex::aggregate_results(results);
  if (out.empty()) {
    v2x::evalkit::write_summary(std::cout, rows);
    return 0;
  }
  std::ofstream file(out);
  if (!file) throw std::runtime_error("cannot write " + out);
  v2x::evalkit::write_summary(file, rows);
  return 0;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON experiment configuration");
  app->add_option("--seed", c.seeds, "Seed(s), replacing the configured list");
  app->add_option("--variant", c.variants, "Variant(s): dqn, ddqn, ddqn-tql, random");
  app->add_option("--payload-mult", c.payload_mults, "Payload multiplier(s) of 1060 bytes");
  app->add_option("--out", c.out, "Output directory (default from V2X_MARL_OUT)");
  app->add_option("--expert", c.expert, "Expert checkpoint for ddqn-tql");
  app->add_option("--episodes", c.episodes, "Override the training episode count");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-agent deep Q-learning for V2X spectrum sharing"};
  app.require_subcommand(1);

  Common run_opts;
  auto* run = app.add_subcommand("run", "Train and evaluate every (variant, payload, seed) cell");
  add_common(run, run_opts);

  Common expert_opts;
  std::string checkpoint;
  auto* train = app.add_subcommand("train-expert", "Train the Double DQN expert for transfer");
  add_common(train, expert_opts);
  train->add_option("--checkpoint", checkpoint, "Checkpoint path (default <out>/expert.bin)");

  double tolerance = 1e-4;
  bool inject = false;
  int nets = 10;
  int batches = 10;
  auto* grad = app.add_subcommand("gradcheck", "Compare backprop with finite differences");
  grad->add_option("--tolerance", tolerance, "Relative error bound")->check(CLI::PositiveNumber);
  grad->add_flag("--inject-fault", inject, "Flip one analytic gradient entry");
  grad->add_option("--nets", nets)->check(CLI::PositiveNumber);
  grad->add_option("--batches", batches)->check(CLI::PositiveNumber);

  std::string results;
  std::string summary_out;
  auto* agg = app.add_subcommand("aggregate", "Summarize a results.csv");
  agg->add_option("--results", results, "results.csv path")->required();
  agg->add_option("--out", summary_out, "Summary CSV path (stdout when omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_opts);
    if (*train) return cmd_train_expert(expert_opts, checkpoint);
    if (*grad) return cmd_gradcheck(tolerance, inject, nets, batches);
    if (*agg) return cmd_aggregate(results, summary_out);
  } catch (const ex::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    if (e.path() == "expert_checkpoint") return kExitNoExpert;
    return kExitBadConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return 0;
}
