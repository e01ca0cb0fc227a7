#include "v2x/marl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <unordered_set>

#include <fmt/format.h>

namespace v2x::marl {

namespace {

// Generator streams derived from a run seed.
enum Stream : std::uint64_t {
  kTrainChannel = 1,
  kExplore = 2,
  kReplay = 3,
  kEvalChannel = 11,
  kEvalPolicy = 12,
  kStatesChannel = 21,
  kStatesPolicy = 22,
  kAgentInit = 100,
};

neuro::Matrix stack_states(std::span<const Transition* const> batch, bool next) {
  const auto width = static_cast<Eigen::Index>(batch.front()->state.size());
  neuro::Matrix s(static_cast<Eigen::Index>(batch.size()), width);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& v = next ? batch[i]->next_state : batch[i]->state;
    for (Eigen::Index c = 0; c < width; ++c) s(static_cast<Eigen::Index>(i), c) = v[c];
  }
  return s;
}

int row_argmax(const neuro::Matrix& q, Eigen::Index row) {
  int best = 0;
  for (Eigen::Index c = 1; c < q.cols(); ++c) {
    if (q(row, c) > q(row, best)) best = static_cast<int>(c);
  }
  return best;
}

struct ResidualPass {
  double loss = 0.0;
  neuro::Matrix states;
  neuro::Matrix output_gradient;
};

ResidualPass residuals(const QNetwork& online, std::span<const Transition* const> batch,
                       std::span<const double> targets, const QNetwork* expert,
                       double transfer_weight) {
  ResidualPass pass;
  pass.states = stack_states(batch, false);
  const neuro::Matrix q = online.forward(pass.states);
  neuro::Matrix q_expert;
  if (expert) q_expert = expert->forward(pass.states);
  pass.output_gradient = neuro::Matrix::Zero(q.rows(), q.cols());
  double td = 0.0;
  double transfer = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const int a = batch[i]->action;
    const double r = q(row, a) - targets[i];
    td += r * r;
    double grad = 2.0 * r;
    if (expert) {
      const double e = q(row, a) - q_expert(row, a);
      transfer += e * e;
      grad += transfer_weight * 2.0 * e;
    }
    pass.output_gradient(row, a) = grad;
  }
  const auto n = static_cast<double>(batch.size());
  pass.loss = td / n;
  if (expert) pass.loss += transfer_weight * (transfer / n);
  return pass;
}

}  // namespace

const char* to_string(Variant v) {
  switch (v) {
    case Variant::dqn:
      return "dqn";
    case Variant::ddqn:
      return "ddqn";
    case Variant::ddqn_tql:
      return "ddqn-tql";
    case Variant::random:
      return "random";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  if (name == "dqn") return Variant::dqn;
  if (name == "ddqn") return Variant::ddqn;
  if (name == "ddqn-tql" || name == "ddqn_tql") return Variant::ddqn_tql;
  if (name == "random") return Variant::random;
  throw std::invalid_argument("unknown variant '" + name + "'");
}

ReplayMemory::ReplayMemory(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay capacity must be >= 1");
}

void ReplayMemory::push(Transition t) {
  if (items_.size() == capacity_) items_.pop_front();
  items_.push_back(std::move(t));
}

std::vector<const Transition*> ReplayMemory::sample(std::size_t n, Rng& rng) const {
  const std::size_t size = items_.size();
  n = std::min(n, size);
  // Floyd's subset sampling keeps the cost proportional to n.
  std::vector<std::size_t> picked;
  picked.reserve(n);
  std::unordered_set<std::size_t> seen;
  for (std::size_t j = size - n; j < size; ++j) {
    const std::size_t t = std::uniform_int_distribution<std::size_t>(0, j)(rng);
    if (seen.insert(t).second) {
      picked.push_back(t);
    } else {
      seen.insert(j);
      picked.push_back(j);
    }
  }
  std::vector<const Transition*> out;
  out.reserve(n);
  for (auto i : picked) out.push_back(&items_[i]);
  return out;
}

void TrainSchedule::validate() const {
  auto fail = [](const char* field, const char* why) {
    throw std::invalid_argument(std::string(field) + ": " + why);
  };
  if (episodes < 0) fail("episodes", "must be >= 0");
  if (!(0.0 <= epsilon_end && epsilon_end <= epsilon_start && epsilon_start <= 1.0)) {
    fail("epsilon_start", "need 0 <= epsilon_end <= epsilon_start <= 1");
  }
  if (!(anneal_fraction > 0.0 && anneal_fraction <= 1.0)) fail("anneal_fraction", "must be in (0, 1]");
  if (target_sync_steps < 1) fail("target_sync_steps", "must be >= 1");
  if (refresh_episodes < 1) fail("refresh_episodes", "must be >= 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma", "must be in [0, 1]");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (updates_per_episode < 0) fail("updates_per_episode", "must be >= 0");
  if (replay_capacity < 1) fail("replay_capacity", "must be >= 1");
  if (!(transfer_weight >= 0.0)) fail("transfer_weight", "must be >= 0");
  if (hidden.empty()) fail("hidden", "need at least one hidden layer");
  for (int h : hidden) {
    if (h < 1) fail("hidden", "layer sizes must be >= 1");
  }
  if (!(optimizer.learning_rate > 0.0)) fail("optimizer.learning_rate", "must be > 0");
  if (!(optimizer.decay > 0.0 && optimizer.decay < 1.0)) fail("optimizer.decay", "must be in (0, 1)");
}

double epsilon_at(int episode, const TrainSchedule& sched) {
  const double anneal_end = sched.anneal_fraction * sched.episodes;
  if (episode >= anneal_end) return sched.epsilon_end;
  return sched.epsilon_start -
         (sched.epsilon_start - sched.epsilon_end) * (static_cast<double>(episode) / anneal_end);
}

double iteration_fraction(int episode, int total_episodes) {
  if (total_episodes <= 1) return 1.0;
  return std::clamp(static_cast<double>(episode) / (total_episodes - 1), 0.0, 1.0);
}

int argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax of empty vector");
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

int select_action(std::span<const double> q_values, double epsilon, Rng& rng) {
  if (q_values.empty()) throw std::invalid_argument("empty Q-value vector");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) < epsilon) {
    return std::uniform_int_distribution<int>(0, static_cast<int>(q_values.size()) - 1)(rng);
  }
  return argmax(q_values);
}

double dqn_target(const Transition& t, const QNetwork& target, double gamma) {
  if (t.terminal) return t.reward;
  const auto q = target.forward_one(t.next_state);
  return t.reward + gamma * q.maxCoeff();
}

double ddqn_target(const Transition& t, const QNetwork& online, const QNetwork& target,
                   double gamma) {
  if (t.terminal) return t.reward;
  const auto q_online = online.forward_one(t.next_state);
  const int best = argmax(std::span<const double>(q_online.data(), q_online.size()));
  const auto q_target = target.forward_one(t.next_state);
  return t.reward + gamma * q_target(best);
}

std::vector<int> layer_sizes(const env::NetworkConfig& cfg, const TrainSchedule& sched) {
  std::vector<int> sizes{cfg.observation_size()};
  sizes.insert(sizes.end(), sched.hidden.begin(), sched.hidden.end());
  sizes.push_back(cfg.num_actions());
  return sizes;
}

AgentBundle make_agent(int index, const env::NetworkConfig& cfg, const TrainSchedule& sched,
                       std::uint64_t seed) {
  AgentBundle a;
  a.index = index;
  a.online = QNetwork::init(layer_sizes(cfg, sched), seed);
  a.target = a.online;
  a.optimizer = neuro::RmsProp(a.online, sched.optimizer);
  a.memory = ReplayMemory(static_cast<std::size_t>(sched.replay_capacity));
  return a;
}

void sync_target(AgentBundle& agent) { agent.target = agent.online; }

std::vector<double> batch_targets(const AgentBundle& agent,
                                  std::span<const Transition* const> batch, double gamma,
                                  Variant variant) {
  const neuro::Matrix next = stack_states(batch, true);
  const neuro::Matrix q_target = agent.target.forward(next);
  neuro::Matrix q_online;
  const bool double_q = variant != Variant::dqn;
  if (double_q) q_online = agent.online.forward(next);
  std::vector<double> y;
  y.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const auto& t = *batch[i];
    if (t.terminal) {
      y.push_back(t.reward);
      continue;
    }
    const double bootstrap =
        double_q ? q_target(row, row_argmax(q_online, row)) : q_target.row(row).maxCoeff();
    y.push_back(t.reward + gamma * bootstrap);
  }
  return y;
}

double frozen_loss(const QNetwork& online, std::span<const Transition* const> batch,
                   std::span<const double> targets, const QNetwork* expert,
                   double transfer_weight) {
  return residuals(online, batch, targets, expert, transfer_weight).loss;
}

LossResult loss_and_gradients(const AgentBundle& agent, std::span<const Transition* const> batch,
                              double gamma, Variant variant, double transfer_weight) {
  if (batch.empty()) throw std::invalid_argument("empty mini-batch");
  if (variant == Variant::random) throw std::invalid_argument("random policy has no loss");
  const QNetwork* expert = nullptr;
  if (variant == Variant::ddqn_tql) {
    if (!agent.expert) throw std::invalid_argument("transfer Q-learning requires an expert network");
    expert = &*agent.expert;
  }
  LossResult out;
  out.targets = batch_targets(agent, batch, gamma, variant);
  auto pass = residuals(agent.online, batch, out.targets, expert, transfer_weight);
  out.loss = pass.loss;
  out.gradients = agent.online.backward(pass.states, pass.output_gradient);
  return out;
}

double train_step(AgentBundle& agent, std::span<const Transition* const> batch,
                  const TrainSchedule& sched, Variant variant, double transfer_weight) {
  auto res = loss_and_gradients(agent, batch, sched.gamma, variant, transfer_weight);
  agent.optimizer.step(agent.online, res.gradients);
  ++agent.gradient_steps;
  if (agent.gradient_steps % sched.target_sync_steps == 0) sync_target(agent);
  return res.loss;
}

int Scenario::eval_snapshots() const {
  return static_cast<int>(traces.snapshots.size()) - train_snapshots;
}

void Scenario::validate() const {
  traces.validate();
  if (train_snapshots < 1) throw std::invalid_argument("train_snapshots must be >= 1");
  if (eval_snapshots() < 1) throw std::invalid_argument("no snapshots left for evaluation");
}

void write_train_log(std::ostream& out, std::span<const TrainLogRow> rows) {
  out << kTrainLogHeader << '\n';
  for (const auto& r : rows) {
    out << fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", r.episode, r.epsilon,
                       r.mean_loss, r.mean_reward, r.v2i_sum_mbps, r.v2v_delivered_frac);
  }
}

void AccountingAudit::check(bool ok, const std::string& what) {
  if (ok) return;
  ++violations;
  if (messages.size() < 20) messages.push_back(what);
}

namespace {

// Mirrors the environment's payload bookkeeping from the returned rates.
class EpisodeLedger {
 public:
  EpisodeLedger(const env::NetworkConfig& cfg)
      : cfg_(cfg), bits_(cfg.num_v2v, 0.0), done_(cfg.num_v2v, false) {}

  void record(const env::StepOutcome& out, const env::EpisodeState& state, AccountingAudit& audit) {
    const double dt_s = cfg_.coherence_ms / 1000.0;
    for (int k = 0; k < cfg_.num_v2v; ++k) {
      const auto& tx = state.allocation[k];
      int bands = 0;
      for (int m = 0; m < cfg_.num_v2i; ++m) bands += tx.sub_band == m ? 1 : 0;
      audit.check(bands <= 1, fmt::format("agent {} occupies {} sub-bands", k, bands));
      if (done_[k]) continue;
      bits_[k] += out.v2v_rates_bps[k] * dt_s;
      done_[k] = bits_[k] >= state.initial_bits;
    }
  }

  void close(const env::EpisodeState& state, AccountingAudit& audit) {
    for (int k = 0; k < cfg_.num_v2v; ++k) {
      ++audit.agent_episodes;
      audit.check(bits_[k] == state.delivered_bits[k],
                  fmt::format("agent {} delivered bits {} != summed {}", k,
                              state.delivered_bits[k], bits_[k]));
      audit.check(state.delivered[k] == (state.delivered_bits[k] >= state.initial_bits),
                  fmt::format("agent {} delivery flag inconsistent", k));
      audit.check(done_[k] == state.delivered[k], fmt::format("agent {} ledger mismatch", k));
      if (state.delivered[k]) {
        audit.check(state.delivery_step[k] >= 1 && state.delivery_step[k] <= state.horizon,
                    fmt::format("agent {} delivery step out of range", k));
      }
    }
  }

 private:
  const env::NetworkConfig& cfg_;
  std::vector<double> bits_;
  std::vector<bool> done_;
};

geo::LargeScaleChannel large_scale_for(const Scenario& scenario, int snapshot,
                                       const env::NetworkConfig& cfg, geo::ShadowingState& shadow,
                                       Rng& rng) {
  const auto& scene = scenario.traces.snapshots.at(snapshot);
  const auto roles = geo::assign_links(scene, cfg.num_v2i, cfg.num_v2v);
  return geo::compute_large_scale(scene, roles, cfg.num_v2i, shadow, scenario.propagation, rng);
}

}  // namespace

TrainResult train(const Scenario& scenario, const env::NetworkConfig& cfg,
                  const TrainSchedule& sched, Variant variant,
                  const std::vector<QNetwork>* expert, std::uint64_t seed,
                  AccountingAudit* audit) {
  cfg.validate();
  sched.validate();
  scenario.validate();
  if (variant == Variant::random) throw std::invalid_argument("the random baseline is not trained");
  const int K = cfg.num_v2v;

  TrainResult result;
  for (int k = 0; k < K; ++k) {
    result.agents.push_back(make_agent(k, cfg, sched, mix_seed(seed, kAgentInit + k)));
  }
  if (variant == Variant::ddqn_tql) {
    if (!expert || static_cast<int>(expert->size()) != K) {
      throw std::invalid_argument("transfer Q-learning requires one expert network per agent");
    }
    for (int k = 0; k < K; ++k) {
      if ((*expert)[k].layer_sizes().front() != cfg.observation_size() ||
          (*expert)[k].layer_sizes().back() != cfg.num_actions()) {
        throw std::invalid_argument("expert network shape does not match the action/observation space");
      }
      result.agents[k].expert = (*expert)[k];
    }
  }
  result.final_fingerprint = {sched.episodes > 0 ? epsilon_at(sched.episodes - 1, sched)
                                                 : sched.epsilon_start,
                              sched.episodes > 0 ? 1.0 : 0.0};
  if (sched.episodes == 0) return result;

  env::Environment environment(cfg);
  Rng channel_rng = make_rng(seed, kTrainChannel);
  Rng explore_rng = make_rng(seed, kExplore);
  Rng replay_rng = make_rng(seed, kReplay);
  geo::ShadowingState shadow;
  geo::LargeScaleChannel large;
  AccountingAudit scratch;
  AccountingAudit& acct = audit ? *audit : scratch;

  const int P = cfg.num_power_levels();
  bool warned = false;
  std::vector<env::Action> actions(K);
  for (int e = 0; e < sched.episodes; ++e) {
    const double eps = epsilon_at(e, sched);
    const env::Fingerprint fp{eps, iteration_fraction(e, sched.episodes)};
    if (e % sched.refresh_episodes == 0) {
      int snapshot = e / sched.refresh_episodes;
      if (snapshot >= scenario.train_snapshots) {
        if (!warned) {
          result.warnings.push_back(fmt::format(
              "training needs {} snapshots but the training window has {}; wrapping around",
              (sched.episodes + sched.refresh_episodes - 1) / sched.refresh_episodes,
              scenario.train_snapshots));
          warned = true;
        }
        snapshot %= scenario.train_snapshots;
      }
      large = large_scale_for(scenario, snapshot, cfg, shadow, channel_rng);
    }

    auto obs = environment.reset(large, fp, channel_rng);
    EpisodeLedger ledger(cfg);
    double reward_sum = 0.0;
    double v2i_sum = 0.0;
    int steps = 0;
    // Every episode spans the full budget. Only the budget end is terminal:
    // ending early once all payloads are through would make finishing cost
    // the rest of the episode's reward.
    while (environment.state().t < environment.state().horizon) {
      for (int k = 0; k < K; ++k) {
        const auto q = result.agents[k].online.forward_one(obs[k]);
        const int a = select_action(std::span<const double>(q.data(), q.size()), eps, explore_rng);
        actions[k] = env::Action::from_flat(a, P);
      }
      auto out = environment.step(actions, fp, channel_rng);
      ledger.record(out, environment.state(), acct);
      const bool terminal = environment.state().t >= environment.state().horizon;
      for (int k = 0; k < K; ++k) {
        result.agents[k].memory.push(
            {obs[k], actions[k].flat(P), out.reward, out.observations[k], terminal});
      }
      reward_sum += out.reward;
      for (double r : out.v2i_rates_bps) v2i_sum += r / 1e6;
      ++steps;
      obs = std::move(out.observations);
    }
    ledger.close(environment.state(), acct);

    double transfer_weight = 0.0;
    if (variant == Variant::ddqn_tql) {
      transfer_weight = sched.transfer_weight;
      if (sched.anneal_transfer) {
        transfer_weight *= 1.0 - static_cast<double>(e) / sched.episodes;
      }
    }
    double loss_sum = 0.0;
    int updates = 0;
    for (int u = 0; u < sched.updates_per_episode; ++u) {
      for (auto& agent : result.agents) {
        if (agent.memory.size() < static_cast<std::size_t>(sched.batch_size)) continue;
        const auto batch = agent.memory.sample(sched.batch_size, replay_rng);
        loss_sum += train_step(agent, batch, sched, variant, transfer_weight);
        ++updates;
      }
    }

    const auto& st = environment.state();
    const auto delivered = std::count(st.delivered.begin(), st.delivered.end(), true);
    result.log.push_back({e, eps,
                          updates ? loss_sum / updates : std::numeric_limits<double>::quiet_NaN(),
                          reward_sum / steps, v2i_sum / steps,
                          static_cast<double>(delivered) / K});
  }
  return result;
}

std::vector<QNetwork> online_networks(const std::vector<AgentBundle>& agents) {
  std::vector<QNetwork> out;
  for (const auto& a : agents) out.push_back(a.online);
  return out;
}

evalkit::RunMetrics evaluate(const std::vector<QNetwork>* policies, const Scenario& scenario,
                             const env::NetworkConfig& cfg, const EvalOptions& opts,
                             AccountingAudit* audit) {
  cfg.validate();
  scenario.validate();
  const int K = cfg.num_v2v;
  const int P = cfg.num_power_levels();
  if (policies && static_cast<int>(policies->size()) != K) {
    throw std::invalid_argument("need one policy network per agent");
  }
  evalkit::RunMetrics metrics;
  metrics.variant = opts.variant_label;
  metrics.seed = opts.seed;
  metrics.payload_bytes = cfg.payload_bytes;
  metrics.budget_ms = cfg.budget_ms;

  env::Environment environment(cfg);
  Rng channel_rng = make_rng(opts.seed, kEvalChannel);
  Rng policy_rng = make_rng(opts.seed, kEvalPolicy);
  geo::ShadowingState shadow;
  AccountingAudit scratch;
  AccountingAudit& acct = audit ? *audit : scratch;
  std::uniform_int_distribution<int> uniform_action(0, cfg.num_actions() - 1);
  std::vector<env::Action> actions(K);

  for (int ep = 0; ep < opts.episodes; ++ep) {
    const int snapshot = scenario.train_snapshots + ep % scenario.eval_snapshots();
    const auto large = large_scale_for(scenario, snapshot, cfg, shadow, channel_rng);
    auto obs = environment.reset(large, opts.fingerprint, channel_rng);
    EpisodeLedger ledger(cfg);
    double v2i_sum = 0.0;
    int steps = 0;
    while (environment.state().t < environment.state().horizon) {
      for (int k = 0; k < K; ++k) {
        int a = 0;
        if (policies) {
          const auto q = (*policies)[k].forward_one(obs[k]);
          a = argmax(std::span<const double>(q.data(), q.size()));
        } else {
          a = uniform_action(policy_rng);
        }
        actions[k] = env::Action::from_flat(a, P);
      }
      auto out = environment.step(actions, opts.fingerprint, channel_rng);
      ledger.record(out, environment.state(), acct);
      for (double r : out.v2i_rates_bps) v2i_sum += r;
      ++steps;
      obs = std::move(out.observations);
    }
    ledger.close(environment.state(), acct);
    metrics.v2i_sum_bps.push_back(v2i_sum / steps);
    const auto& st = environment.state();
    for (int k = 0; k < K; ++k) {
      evalkit::DeliveryOutcome o;
      o.success = st.delivered[k];
      if (o.success) o.time_ms = st.delivery_step[k] * cfg.coherence_ms;
      metrics.outcomes.push_back(o);
    }
  }
  return metrics;
}

std::vector<std::vector<Observation>> collect_states(const Scenario& scenario,
                                                     const env::NetworkConfig& cfg, int episodes,
                                                     env::Fingerprint fp, std::uint64_t seed) {
  scenario.validate();
  const int K = cfg.num_v2v;
  const int P = cfg.num_power_levels();
  env::Environment environment(cfg);
  Rng channel_rng = make_rng(seed, kStatesChannel);
  Rng policy_rng = make_rng(seed, kStatesPolicy);
  geo::ShadowingState shadow;
  std::uniform_int_distribution<int> uniform_action(0, cfg.num_actions() - 1);
  std::vector<std::vector<Observation>> states(K);
  std::vector<env::Action> actions(K);
  for (int ep = 0; ep < episodes; ++ep) {
    const int snapshot = scenario.train_snapshots + ep % scenario.eval_snapshots();
    const auto large = large_scale_for(scenario, snapshot, cfg, shadow, channel_rng);
    auto obs = environment.reset(large, fp, channel_rng);
    while (true) {
      for (int k = 0; k < K; ++k) states[k].push_back(obs[k]);
      for (int k = 0; k < K; ++k) actions[k] = env::Action::from_flat(uniform_action(policy_rng), P);
      auto out = environment.step(actions, fp, channel_rng);
      obs = std::move(out.observations);
      if (out.done) break;
    }
  }
  return states;
}

double mean_max_q(const std::vector<QNetwork>& policies,
                  const std::vector<std::vector<Observation>>& states) {
  if (policies.size() != states.size()) throw std::invalid_argument("policy/state count mismatch");
  double total = 0.0;
  long count = 0;
  for (std::size_t k = 0; k < policies.size(); ++k) {
    if (states[k].empty()) continue;
    neuro::Matrix s(static_cast<Eigen::Index>(states[k].size()),
                    static_cast<Eigen::Index>(states[k].front().size()));
    for (std::size_t i = 0; i < states[k].size(); ++i)
      for (std::size_t c = 0; c < states[k][i].size(); ++c)
        s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = states[k][i][c];
    const auto q = policies[k].forward(s);
    for (Eigen::Index r = 0; r < q.rows(); ++r) total += q.row(r).maxCoeff();
    count += q.rows();
  }
  if (count == 0) throw std::invalid_argument("no states");
  return total / static_cast<double>(count);
}

}  // namespace v2x::marl
