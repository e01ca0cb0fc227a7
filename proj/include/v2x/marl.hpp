#pragma once

// Independent per-agent deep Q-learners sharing a global reward: replay,
// fingerprinted epsilon-greedy exploration, target networks and the DQN,
// Double DQN and Double DQN with transfer Q-learning losses.

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "v2x/env.hpp"
#include "v2x/evalkit.hpp"
#include "v2x/geo_channel.hpp"
#include "v2x/neuro.hpp"
#include "v2x/rng.hpp"

namespace v2x::marl {

using env::Observation;
using neuro::QNetwork;

enum class Variant { dqn, ddqn, ddqn_tql, random };

const char* to_string(Variant v);
// Accepts "dqn", "ddqn", "ddqn-tql" and "random".
Variant parse_variant(const std::string& name);

struct Transition {
  Observation state;
  int action = 0;
  double reward = 0.0;
  Observation next_state;
  bool terminal = false;
};

// Bounded FIFO; the oldest transition is evicted once full.
class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity = 100000);

  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  // Oldest first.
  const Transition& at(std::size_t i) const { return items_.at(i); }

  // Uniform without replacement; returns min(n, size()) transitions.
  std::vector<const Transition*> sample(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::deque<Transition> items_;
};

struct TrainSchedule {
  int episodes = 3000;
  double epsilon_start = 1.0;
  double epsilon_end = 0.02;
  double anneal_fraction = 0.8;
  int target_sync_steps = 500;  // tau, gradient steps
  int refresh_episodes = 100;   // large-scale fading held for this many episodes
  double gamma = 0.95;
  int batch_size = 512;
  int updates_per_episode = 1;
  int replay_capacity = 100000;
  double transfer_weight = 0.5;
  bool anneal_transfer = true;  // linear to 0 over training
  std::vector<int> hidden{256, 128, 64};
  neuro::RmsPropParams optimizer;

  void validate() const;
};

double epsilon_at(int episode, const TrainSchedule& sched);

// Fingerprint iteration component: episode / (E - 1), 1 for E <= 1.
double iteration_fraction(int episode, int total_episodes);

// Lowest index wins ties.
int argmax(std::span<const double> values);

// One uniform draw decides exploration; exploring picks uniformly.
int select_action(std::span<const double> q_values, double epsilon, Rng& rng);

double dqn_target(const Transition& t, const QNetwork& target, double gamma);
double ddqn_target(const Transition& t, const QNetwork& online, const QNetwork& target,
                   double gamma);

struct AgentBundle {
  int index = 0;
  QNetwork online;
  QNetwork target;
  std::optional<QNetwork> expert;
  neuro::RmsProp optimizer;
  ReplayMemory memory;
  long gradient_steps = 0;
};

std::vector<int> layer_sizes(const env::NetworkConfig& cfg, const TrainSchedule& sched);

AgentBundle make_agent(int index, const env::NetworkConfig& cfg, const TrainSchedule& sched,
                       std::uint64_t seed);

void sync_target(AgentBundle& agent);

struct LossResult {
  double loss = 0.0;
  neuro::Gradients gradients;
  std::vector<double> targets;
};

// Bootstrap targets for a mini-batch (DQN for Variant::dqn, Double DQN
// otherwise), evaluated in one batched pass per network.
std::vector<double> batch_targets(const AgentBundle& agent,
                                  std::span<const Transition* const> batch, double gamma,
                                  Variant variant);

// Scalar loss with frozen targets:
// mean (y - Q(s, a))^2 + w * mean (Q(s, a) - Q_expert(s, a))^2.
double frozen_loss(const QNetwork& online, std::span<const Transition* const> batch,
                   std::span<const double> targets, const QNetwork* expert, double transfer_weight);

// Gradients flow through the online parameters only. The transfer term is
// active for Variant::ddqn_tql and requires an expert.
LossResult loss_and_gradients(const AgentBundle& agent, std::span<const Transition* const> batch,
                              double gamma, Variant variant, double transfer_weight);

// One RMSProp step plus the periodic target sync. Returns the loss.
double train_step(AgentBundle& agent, std::span<const Transition* const> batch,
                  const TrainSchedule& sched, Variant variant, double transfer_weight);

// Trace snapshots split into a training window followed by the evaluation
// window.
struct Scenario {
  geo::TraceSet traces;
  int train_snapshots = 30;
  geo::PropagationParams propagation;

  int eval_snapshots() const;
  void validate() const;
};

struct TrainLogRow {
  int episode = 0;
  double epsilon = 0.0;
  double mean_loss = 0.0;  // NaN before the first update
  double mean_reward = 0.0;
  double v2i_sum_mbps = 0.0;
  double v2v_delivered_frac = 0.0;
};

inline constexpr const char* kTrainLogHeader =
    "episode,epsilon,mean_loss,mean_reward,v2i_sum_mbps,v2v_delivered_frac";

void write_train_log(std::ostream& out, std::span<const TrainLogRow> rows);

// Per agent-episode bookkeeping checks collected while simulating.
struct AccountingAudit {
  long agent_episodes = 0;
  long violations = 0;
  std::vector<std::string> messages;

  void check(bool ok, const std::string& what);
};

struct TrainResult {
  std::vector<AgentBundle> agents;
  std::vector<TrainLogRow> log;
  std::vector<std::string> warnings;
  env::Fingerprint final_fingerprint;
};

TrainResult train(const Scenario& scenario, const env::NetworkConfig& cfg,
                  const TrainSchedule& sched, Variant variant,
                  const std::vector<QNetwork>* expert, std::uint64_t seed,
                  AccountingAudit* audit = nullptr);

std::vector<QNetwork> online_networks(const std::vector<AgentBundle>& agents);

struct EvalOptions {
  int episodes = 100;
  env::Fingerprint fingerprint{0.02, 1.0};
  std::uint64_t seed = 0;
  std::string variant_label;
};

// Greedy rollouts over consecutive evaluation snapshots, one per episode and
// each run to the full budget. A null policy set selects uniformly random
// actions. Channel draws depend only on the seed, so every policy sees the
// same channels.
evalkit::RunMetrics evaluate(const std::vector<QNetwork>* policies, const Scenario& scenario,
                             const env::NetworkConfig& cfg, const EvalOptions& opts,
                             AccountingAudit* audit = nullptr);

// Observations met under the random policy on evaluation snapshots, per agent.
std::vector<std::vector<Observation>> collect_states(const Scenario& scenario,
                                                     const env::NetworkConfig& cfg, int episodes,
                                                     env::Fingerprint fp, std::uint64_t seed);

// Mean over agents and states of max_a Q(s, a).
double mean_max_q(const std::vector<QNetwork>& policies,
                  const std::vector<std::vector<Observation>>& states);

}  // namespace v2x::marl
