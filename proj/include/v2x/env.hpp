#pragma once

// Spectrum-sharing MDP: K V2V agents reuse the M V2I sub-bands.

#include <span>
#include <vector>

#include "v2x/geo_channel.hpp"
#include "v2x/rng.hpp"

namespace v2x::env {

struct NetworkConfig {
  int num_v2i = 4;                 // M
  int num_v2v = 4;                 // K
  double bandwidth_hz = 4e6;       // W per sub-band
  double carrier_hz = 2e9;
  double v2i_power_dbm = 23.0;
  std::vector<double> power_levels_dbm{23.0, 15.0, 5.0, -100.0};
  double noise_dbm = -114.0;
  int payload_bytes = 1060;
  double budget_ms = 100.0;
  double coherence_ms = 1.0;
  double beta = 10.0;
  double lambda_c = 0.1;
  double lambda_d = 0.9;
  // Rates enter rewards in Mbps times these factors.
  double v2i_reward_scale = 0.1;
  double v2v_reward_scale = 1.0;
  // Observation map (x_dB + offset) / 60 clipped to [0, 2]; gains and
  // measured interference (dBm) have separate offsets.
  double obs_gain_offset_db = 120.0;
  double obs_interference_offset_db = 120.0;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;

  int num_power_levels() const { return static_cast<int>(power_levels_dbm.size()); }
  int num_actions() const { return num_v2i * num_power_levels(); }
  int steps_per_episode() const;
  int observation_size() const { return 5 * num_v2i + 4; }
  double payload_bits() const { return 8.0 * payload_bytes; }
  double silent_power_dbm() const { return power_levels_dbm.back(); }
};

struct Action {
  int sub_band = 0;
  int power_level = 0;

  int flat(int num_power_levels) const { return sub_band * num_power_levels + power_level; }
  static Action from_flat(int index, int num_power_levels) {
    return {index / num_power_levels, index % num_power_levels};
  }
};

// What one V2V transmitter puts on the air: rho_k[m] = (sub_band == m).
struct Transmission {
  int sub_band = -1;  // -1: no sub-band
  double power_dbm = 0.0;
};

using Observation = std::vector<double>;

struct Fingerprint {
  double epsilon = 1.0;
  double iteration = 0.0;  // normalized to [0, 1]
};

struct EpisodeState {
  int t = 0;
  int horizon = 0;                         // T, steps
  double initial_bits = 0.0;
  std::vector<double> delivered_bits;      // cumulative, per agent
  std::vector<bool> delivered;
  std::vector<int> delivery_step;          // 1-based step of completion, 0 if pending
  geo::GainTensor gains;
  std::vector<Transmission> allocation;    // last joint allocation
  std::vector<double> measured_interference_mw;  // [k * M + m], includes noise

  double remaining_bits(int k) const { return initial_bits - delivered_bits[k]; }
};

struct StepOutcome {
  std::vector<double> v2i_rates_bps;   // [m]
  std::vector<double> v2v_rates_bps;   // [k], on the chosen sub-band
  std::vector<double> v2v_rewards;     // L_t^(k)
  double reward = 0.0;
  std::vector<Observation> observations;
  bool done = false;
};

// Linear SINR of V2I link m.
double v2i_sinr(int m, std::span<const Transmission> alloc, const geo::GainTensor& gains,
                const NetworkConfig& cfg);

// Interference (mW, noise excluded) at V2V receiver k on sub-band m.
double v2v_interference(int k, int m, std::span<const Transmission> alloc,
                        const geo::GainTensor& gains, const NetworkConfig& cfg);

// Linear SINR of V2V link k over sub-band m at its own transmit power.
double v2v_sinr(int k, int m, std::span<const Transmission> alloc, const geo::GainTensor& gains,
                const NetworkConfig& cfg);

// Shannon rate, bps.
double link_rate(double sinr, double bandwidth_hz);

// beta once the payload is gone (remaining <= 0 entering the step), else the
// scaled rate.
double v2v_reward(double rate_bps, double remaining_bits, const NetworkConfig& cfg);

double global_reward(std::span<const double> v2i_rates_bps, std::span<const double> v2v_rewards,
                     const NetworkConfig& cfg);

// (x_dB + offset) / 60 clipped to [0, 2]; non-positive linear values map to 0.
double normalize_db(double linear, double offset_db = 120.0);

Observation build_observation(int k, const EpisodeState& state, Fingerprint fp,
                              const NetworkConfig& cfg);

class Environment {
 public:
  explicit Environment(NetworkConfig cfg);

  const NetworkConfig& config() const { return cfg_; }
  const EpisodeState& state() const { return state_; }

  // Starts an episode on the given large-scale channel: full payloads, fresh
  // small-scale fading, noise-only measured interference.
  std::vector<Observation> reset(const geo::LargeScaleChannel& large, Fingerprint fp, Rng& rng);

  // One coherence interval. Stepping is allowed until t reaches the horizon
  // even after every payload is delivered; `done` reports termination.
  StepOutcome step(std::span<const Action> actions, Fingerprint fp, Rng& rng);

 private:
  NetworkConfig cfg_;
  geo::LargeScaleChannel large_;
  EpisodeState state_;
};

}  // namespace v2x::env
