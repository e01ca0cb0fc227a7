#pragma once

// Reference computations shared by the unit and acceptance tests. They work
// in the dB domain and never call into the library's arithmetic.

#include <algorithm>
#include <cmath>
#include <vector>

namespace oracle {

// 10 log10(sum 10^(x_i / 10)) evaluated stably.
inline double db_sum(const std::vector<double>& terms_db) {
  const double top = *std::max_element(terms_db.begin(), terms_db.end());
  double acc = 0.0;
  for (double t : terms_db) acc += std::exp((t - top) * std::log(10.0) / 10.0);
  return top + 10.0 * std::log10(acc);
}

// One received term: transmit power (dBm) plus link gain (dB).
struct Term {
  double power_dbm;
  double gain_db;
};

// Linear SINR from dB quantities.
inline double sinr(Term signal, const std::vector<Term>& interferers, double noise_dbm) {
  std::vector<double> denom{noise_dbm};
  for (const auto& t : interferers) denom.push_back(t.power_dbm + t.gain_db);
  const double sinr_db = signal.power_dbm + signal.gain_db - db_sum(denom);
  return std::pow(10.0, sinr_db / 10.0);
}

inline double shannon_bps(double sinr_linear, double bandwidth_hz) {
  return bandwidth_hz * std::log1p(sinr_linear) / std::log(2.0);
}

inline double relative_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

}  // namespace oracle
