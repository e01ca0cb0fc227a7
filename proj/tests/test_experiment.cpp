#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "v2x/experiment.hpp"

using namespace v2x;
using namespace v2x::experiment;

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string error_path(const std::string& json_text) {
  try {
    parse_config(json_text);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "<accepted>";
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("v2x_experiment_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

ExperimentConfig tiny_config(const std::filesystem::path& out) {
  ExperimentConfig c;
  c.schedule.episodes = 2;
  c.schedule.refresh_episodes = 1;
  c.schedule.batch_size = 16;
  c.schedule.hidden = {8};
  c.scenario.duration_ms = 500.0;
  c.scenario.train_snapshots = 3;
  c.eval_episodes = 2;
  c.output_dir = out.string();
  return c;
}

}  // namespace

TEST_CASE("defaults round-trip through JSON") {
  const ExperimentConfig c;
  const auto text = dump_config(c);
  CHECK(parse_config(text) == c);
  CHECK(parse_config("{}") == c);

  ExperimentConfig d;
  d.network.payload_bytes = 3 * 1060;
  d.schedule.gamma = 0.5;
  d.schedule.hidden = {32, 16};
  d.scenario.grid.width_m = 1000.0;
  d.seeds = {7, 9};
  d.variants = {"ddqn"};
  const auto back = parse_config(dump_config(d));
  CHECK(back == d);
  CHECK_FALSE(back == c);
  CHECK(back.schedule.hidden == std::vector<int>{32, 16});
}

TEST_CASE("config errors name the field") {
  CHECK(error_path(R"({"schedule": {"gama": 0.9}})") == "schedule.gama");
  CHECK(error_path(R"({"schedule": {"gamma": "high"}})") == "schedule.gamma");
  CHECK(error_path(R"({"schedule": {"gamma": 1.5}})") == "schedule.gamma");
  CHECK(error_path(R"({"network": {"num_v2v": 0}})").rfind("network.", 0) == 0);
  CHECK(error_path(R"({"seeds": [1, 2, 2]})") == "seeds[2]");
  CHECK(error_path(R"({"seeds": [1, -2]})") == "seeds[1]");
  CHECK(error_path(R"({"payload_multipliers": [1, 0]})") == "payload_multipliers[1]");
  CHECK(error_path(R"({"variants": ["dqn", "sarsa"]})") == "variants[1]");
  CHECK(error_path(R"({"scenario": {"grid": {"vehicles": 5}}})") == "scenario.grid.vehicles");
  CHECK(error_path(R"({"scenario": {"kind": "trace"}})") == "scenario.trace_file");
  CHECK(error_path(R"({"scenario": {"train_snapshots": 131}})") == "scenario.train_snapshots");
  CHECK(error_path(R"({"expert_checkpoint": "/no/such/file.bin"})") == "expert_checkpoint");
  CHECK(error_path(R"({"histogram_bin_ms": 3})") == "histogram_bin_ms");
  CHECK(error_path(R"({"extra": 1})") == "extra");
  CHECK(error_path("{not json") == "<root>");
  CHECK(error_path("[]") == "<root>");
  CHECK_THROWS_AS(load_config("/no/such/config.json"), ConfigError);
}

TEST_CASE("cell digest tracks what shapes the numbers") {
  const ExperimentConfig c;
  const auto base = cell_digest(c, "dqn", 1);
  CHECK(base.size() == 8);
  CHECK(cell_digest(c, "dqn", 1) == base);
  CHECK(cell_digest(c, "dqn", 2) != base);
  CHECK(cell_digest(c, "ddqn", 1) != base);

  auto seeds = c;
  seeds.seeds = {42};
  CHECK(cell_digest(seeds, "dqn", 1) == base);
  auto out = c;
  out.output_dir = "elsewhere";
  CHECK(cell_digest(out, "dqn", 1) == base);

  auto sched = c;
  sched.schedule.gamma = 0.5;
  CHECK(cell_digest(sched, "dqn", 1) != base);
  CHECK(cell_digest(sched, "random", 1) == cell_digest(c, "random", 1));

  auto tql = c;
  tql.tql_episodes = 100;
  CHECK(cell_digest(tql, "ddqn-tql", 1) != cell_digest(c, "ddqn-tql", 1));
}

TEST_CASE("grid scenarios are reproducible per trace seed") {
  auto c = tiny_config(scratch("scenario"));
  const auto a = build_scenario(c, 3);
  const auto b = build_scenario(c, 3);
  const auto other = build_scenario(c, 4);
  REQUIRE(a.traces.snapshots.size() == 6);
  CHECK(a.train_snapshots == 3);
  CHECK(a.eval_snapshots() == 3);
  CHECK(a.traces.snapshots[2].vehicles[0].position.x == b.traces.snapshots[2].vehicles[0].position.x);
  bool differs = false;
  for (std::size_t v = 0; v < 8; ++v) {
    differs |= a.traces.snapshots[5].vehicles[v].position.x != other.traces.snapshots[5].vehicles[v].position.x ||
               a.traces.snapshots[5].vehicles[v].position.y != other.traces.snapshots[5].vehicles[v].position.y;
  }
  CHECK(differs);
  CHECK_FALSE(a.traces.snapshots[0].obstacles.empty());
  c.scenario.grid.buildings = false;
  CHECK(build_scenario(c, 3).traces.snapshots[0].obstacles.empty());
}

TEST_CASE("trace scenarios load from files") {
  const auto dir = scratch("trace");
  std::filesystem::create_directories(dir);
  {
    std::ofstream t(dir / "trace.csv");
    t << "t_ms,vehicle_id,x_m,y_m,heading_rad\n";
    for (int s = 0; s < 4; ++s) {
      for (int v = 0; v < 8; ++v) t << s * 100 << ',' << v << ',' << v * 20.0 + s << ',' << (v % 2) * 15.0 << ",0\n";
    }
    std::ofstream o(dir / "obstacles.csv");
    o << "id,kind,xmin_m,ymin_m,xmax_m,ymax_m\n1,building,30,3,40,12\n";
  }
  ExperimentConfig c;
  c.scenario.kind = ScenarioConfig::Kind::trace;
  c.scenario.trace_file = (dir / "trace.csv").string();
  c.scenario.obstacle_file = (dir / "obstacles.csv").string();
  c.scenario.train_snapshots = 2;
  validate(c);
  const auto sc = build_scenario(c, 0);
  CHECK(sc.traces.snapshots.size() == 4);
  CHECK(sc.traces.snapshots[1].obstacles.size() == 1);
  c.scenario.train_snapshots = 4;
  CHECK_THROWS(build_scenario(c, 0));
  std::filesystem::remove_all(dir);
}

TEST_CASE("random baseline over every payload and seed") {
  const auto out = scratch("random");
  auto c = tiny_config(out);
  c.variants = {"random", "dqn"};
  const auto result = run_experiment(c, nullptr);
  CHECK(result.cells.size() == 60);
  CHECK(result.audit.violations == 0);
  CHECK(result.audit.agent_episodes > 0);

  std::istringstream results(read_file(out / "results.csv"));
  std::string line;
  std::getline(results, line);
  CHECK(line == evalkit::kResultsHeader);
  int rows = 0;
  while (std::getline(results, line)) ++rows;
  CHECK(rows == 60);

  for (int mult = 1; mult <= 6; ++mult) {
    const auto path = out / ("histogram_" + std::to_string(mult * 1060) + ".csv");
    REQUIRE(std::filesystem::exists(path));
    std::istringstream h(read_file(path));
    std::getline(h, line);
    long mass = 0;
    while (std::getline(h, line)) {
      if (line.rfind("random,", 0) == 0) mass += std::stol(line.substr(line.rfind(',') + 1));
    }
    CHECK(mass == 5 * 2 * 4);  // seeds x episodes x agents
  }
  CHECK(std::filesystem::exists(out / "train_log_dqn_1060_0.csv"));
  CHECK_FALSE(std::filesystem::exists(out / "train_log_random_1060_0.csv"));

  const auto summary = aggregate_results(out / "results.csv");
  REQUIRE(summary.size() == 12);
  CHECK(summary[0].variant == "random");
  CHECK(summary[0].runs == 5);

  // Re-running reproduces every byte.
  const auto first = read_file(out / "results.csv");
  run_experiment(c, nullptr);
  CHECK(read_file(out / "results.csv") == first);
  std::filesystem::remove_all(out);
}

TEST_CASE("transfer variant needs an expert") {
  auto c = tiny_config(scratch("tql"));
  c.variants = {"ddqn-tql"};
  c.payload_multipliers = {1};
  c.seeds = {0};
  RunOptions quiet;
  quiet.write_files = false;
  try {
    run_experiment(c, nullptr, quiet);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.path() == "expert_checkpoint");
  }
  std::vector<neuro::QNetwork> too_few(2, neuro::QNetwork::init({24, 8, 16}, 1));
  CHECK_THROWS_AS(run_experiment(c, &too_few, quiet), ConfigError);

  const auto expert = train_expert(c, quiet);
  const auto nets = marl::online_networks(expert.agents);
  c.tql_episodes = 2;
  const auto r = run_experiment(c, &nets, quiet);
  CHECK(r.cells.size() == 1);
  CHECK(r.audit.violations == 0);
}

TEST_CASE("zero evaluation episodes write nan rates") {
  const auto out = scratch("noeval");
  auto c = tiny_config(out);
  c.variants = {"random"};
  c.payload_multipliers = {1};
  c.seeds = {0};
  c.eval_episodes = 0;
  run_experiment(c, nullptr);
  const auto text = read_file(out / "results.csv");
  CHECK(text.find("random,0,1060,nan,nan,,0") != std::string::npos);
  std::filesystem::remove_all(out);
}
