#include "v2x/env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace v2x::env {

using geo::dbm_to_mw;

void NetworkConfig::validate() const {
  auto fail = [](const char* field, const char* why) {
    throw std::invalid_argument(std::string(field) + ": " + why);
  };
  if (num_v2i < 1) fail("num_v2i", "must be >= 1");
  if (num_v2v < 1) fail("num_v2v", "must be >= 1");
  if (!(bandwidth_hz > 0.0)) fail("bandwidth_hz", "must be > 0");
  if (!(carrier_hz > 0.0)) fail("carrier_hz", "must be > 0");
  if (power_levels_dbm.empty()) fail("power_levels_dbm", "must not be empty");
  for (std::size_t i = 1; i < power_levels_dbm.size(); ++i) {
    if (!(power_levels_dbm[i] < power_levels_dbm[i - 1])) {
      fail("power_levels_dbm", "must be strictly decreasing");
    }
  }
  if (payload_bytes < 1) fail("payload_bytes", "must be >= 1");
  if (!(coherence_ms > 0.0)) fail("coherence_ms", "must be > 0");
  if (!(budget_ms > 0.0)) fail("budget_ms", "must be > 0");
  const double ratio = budget_ms / coherence_ms;
  if (std::abs(ratio - std::round(ratio)) > 1e-9) {
    fail("budget_ms", "must be divisible by coherence_ms");
  }
  if (!(beta > 0.0)) fail("beta", "must be > 0");
  if (!(lambda_c >= 0.0)) fail("lambda_c", "must be >= 0");
  if (!(lambda_d >= 0.0)) fail("lambda_d", "must be >= 0");
  if (!(v2i_reward_scale > 0.0)) fail("v2i_reward_scale", "must be > 0");
  if (!(v2v_reward_scale > 0.0)) fail("v2v_reward_scale", "must be > 0");
}

int NetworkConfig::steps_per_episode() const {
  return static_cast<int>(std::lround(budget_ms / coherence_ms));
}

double v2i_sinr(int m, std::span<const Transmission> alloc, const geo::GainTensor& gains,
                const NetworkConfig& cfg) {
  double denom = dbm_to_mw(cfg.noise_dbm);
  for (std::size_t k = 0; k < alloc.size(); ++k) {
    if (alloc[k].sub_band != m) continue;
    denom += dbm_to_mw(alloc[k].power_dbm) * gains.v2v_to_bs(static_cast<int>(k), m).linear;
  }
  return dbm_to_mw(cfg.v2i_power_dbm) * gains.v2i_direct(m).linear / denom;
}

double v2v_interference(int k, int m, std::span<const Transmission> alloc,
                        const geo::GainTensor& gains, const NetworkConfig& cfg) {
  double total = dbm_to_mw(cfg.v2i_power_dbm) * gains.v2i_to_v2v(m, k).linear;
  for (std::size_t other = 0; other < alloc.size(); ++other) {
    if (static_cast<int>(other) == k || alloc[other].sub_band != m) continue;
    total += dbm_to_mw(alloc[other].power_dbm) *
             gains.v2v_cross(static_cast<int>(other), k, m).linear;
  }
  return total;
}

double v2v_sinr(int k, int m, std::span<const Transmission> alloc, const geo::GainTensor& gains,
                const NetworkConfig& cfg) {
  const double signal = dbm_to_mw(alloc[k].power_dbm) * gains.v2v_direct(k, m).linear;
  return signal / (dbm_to_mw(cfg.noise_dbm) + v2v_interference(k, m, alloc, gains, cfg));
}

double link_rate(double sinr, double bandwidth_hz) {
  if (sinr < 0.0) throw std::invalid_argument("negative SINR");
  return bandwidth_hz * std::log1p(sinr) / std::numbers::ln2;
}

double v2v_reward(double rate_bps, double remaining_bits, const NetworkConfig& cfg) {
  if (remaining_bits <= 0.0) return cfg.beta;
  return rate_bps / 1e6 * cfg.v2v_reward_scale;
}

double global_reward(std::span<const double> v2i_rates_bps, std::span<const double> v2v_rewards,
                     const NetworkConfig& cfg) {
  double v2i = 0.0;
  for (double r : v2i_rates_bps) v2i += r / 1e6 * cfg.v2i_reward_scale;
  double v2v = 0.0;
  for (double l : v2v_rewards) v2v += l;
  return cfg.lambda_c * v2i + cfg.lambda_d * v2v;
}

double normalize_db(double linear, double offset_db) {
  if (!(linear > 0.0)) return 0.0;
  return std::clamp((geo::linear_to_db(linear) + offset_db) / 60.0, 0.0, 2.0);
}

Observation build_observation(int k, const EpisodeState& state, Fingerprint fp,
                              const NetworkConfig& cfg) {
  const int M = cfg.num_v2i;
  const int K = cfg.num_v2v;
  const auto& g = state.gains;
  Observation obs;
  obs.reserve(cfg.observation_size());
  auto gain = [&](double linear) { return normalize_db(linear, cfg.obs_gain_offset_db); };
  for (int m = 0; m < M; ++m) obs.push_back(gain(g.v2v_direct(k, m).linear));
  for (int m = 0; m < M; ++m) obs.push_back(gain(g.v2v_to_bs(k, m).linear));
  for (int m = 0; m < M; ++m) obs.push_back(gain(g.v2i_to_v2v(m, k).linear));
  for (int m = 0; m < M; ++m) {
    double cross = 0.0;
    for (int other = 0; other < K; ++other) {
      if (other != k) cross += g.v2v_cross(other, k, m).linear;
    }
    obs.push_back(gain(cross));
  }
  // Interference is kept in mW; the map sees its dBm value.
  for (int m = 0; m < M; ++m) {
    obs.push_back(
        normalize_db(state.measured_interference_mw[k * M + m], cfg.obs_interference_offset_db));
  }
  obs.push_back(std::clamp(state.remaining_bits(k) / state.initial_bits, 0.0, 1.0));
  obs.push_back(static_cast<double>(state.horizon - state.t) / state.horizon);
  obs.push_back(std::clamp(fp.epsilon, 0.0, 1.0));
  obs.push_back(std::clamp(fp.iteration, 0.0, 1.0));
  return obs;
}

Environment::Environment(NetworkConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

std::vector<Observation> Environment::reset(const geo::LargeScaleChannel& large, Fingerprint fp,
                                            Rng& rng) {
  const int M = cfg_.num_v2i;
  const int K = cfg_.num_v2v;
  if (large.num_v2i != M || large.num_v2v != K) {
    throw std::invalid_argument("large-scale channel shape does not match config");
  }
  large_ = large;
  state_ = EpisodeState{};
  state_.horizon = cfg_.steps_per_episode();
  state_.initial_bits = cfg_.payload_bits();
  state_.delivered_bits.assign(K, 0.0);
  state_.delivered.assign(K, false);
  state_.delivery_step.assign(K, 0);
  state_.allocation.assign(K, Transmission{});
  state_.measured_interference_mw.assign(static_cast<std::size_t>(K) * M,
                                         dbm_to_mw(cfg_.noise_dbm));
  state_.gains = geo::draw_gains(large_, rng);

  std::vector<Observation> obs;
  for (int k = 0; k < K; ++k) obs.push_back(build_observation(k, state_, fp, cfg_));
  return obs;
}

StepOutcome Environment::step(std::span<const Action> actions, Fingerprint fp, Rng& rng) {
  const int M = cfg_.num_v2i;
  const int K = cfg_.num_v2v;
  const int P = cfg_.num_power_levels();
  if (static_cast<int>(actions.size()) != K) throw std::invalid_argument("need one action per agent");
  if (state_.t >= state_.horizon) throw std::logic_error("episode budget exhausted");
  for (const auto& a : actions) {
    if (a.sub_band < 0 || a.sub_band >= M || a.power_level < 0 || a.power_level >= P) {
      throw std::invalid_argument("malformed action index");
    }
  }

  const double dt_s = cfg_.coherence_ms / 1000.0;
  auto& alloc = state_.allocation;
  for (int k = 0; k < K; ++k) {
    alloc[k].sub_band = actions[k].sub_band;
    alloc[k].power_dbm = state_.delivered[k] ? cfg_.silent_power_dbm()
                                             : cfg_.power_levels_dbm[actions[k].power_level];
  }

  StepOutcome out;
  const auto& gains = state_.gains;
  for (int m = 0; m < M; ++m) {
    out.v2i_rates_bps.push_back(link_rate(v2i_sinr(m, alloc, gains, cfg_), cfg_.bandwidth_hz));
  }
  for (int k = 0; k < K; ++k) {
    const double rate =
        link_rate(v2v_sinr(k, alloc[k].sub_band, alloc, gains, cfg_), cfg_.bandwidth_hz);
    out.v2v_rates_bps.push_back(rate);
    out.v2v_rewards.push_back(v2v_reward(rate, state_.remaining_bits(k), cfg_));
  }
  out.reward = global_reward(out.v2i_rates_bps, out.v2v_rewards, cfg_);

  for (int k = 0; k < K; ++k) {
    if (state_.delivered[k]) continue;
    state_.delivered_bits[k] += out.v2v_rates_bps[k] * dt_s;
    if (state_.delivered_bits[k] >= state_.initial_bits) {
      state_.delivered[k] = true;
      state_.delivery_step[k] = state_.t + 1;
    }
  }

  const double noise = dbm_to_mw(cfg_.noise_dbm);
  for (int k = 0; k < K; ++k) {
    for (int m = 0; m < M; ++m) {
      state_.measured_interference_mw[k * M + m] =
          noise + v2v_interference(k, m, alloc, gains, cfg_);
    }
  }

  state_.gains = geo::draw_gains(large_, rng);
  ++state_.t;
  const bool all_delivered =
      std::all_of(state_.delivered.begin(), state_.delivered.end(), [](bool d) { return d; });
  out.done = state_.t >= state_.horizon || all_delivered;
  for (int k = 0; k < K; ++k) out.observations.push_back(build_observation(k, state_, fp, cfg_));
  return out;
}

}  // namespace v2x::env
