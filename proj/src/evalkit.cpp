#include "v2x/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

namespace v2x::evalkit {

namespace {

struct Stats {
  double mean = 0.0;
  double sd = 0.0;
};

Stats mean_sd(const std::vector<double>& xs) {
  Stats s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

std::string format_number(double v) { return fmt::format("{:.6f}", v); }

}  // namespace

void RunMetrics::validate() const {
  for (const auto& o : outcomes) {
    if (o.success && !(o.time_ms > 0.0 && o.time_ms <= budget_ms)) {
      throw std::invalid_argument("delivery time outside (0, budget]");
    }
  }
}

double v2i_sum_capacity_mbps(const RunMetrics& metrics) {
  if (metrics.v2i_sum_bps.empty()) throw std::invalid_argument("empty metrics");
  double total = 0.0;
  for (double r : metrics.v2i_sum_bps) total += r;
  return total / static_cast<double>(metrics.v2i_sum_bps.size()) / 1e6;
}

double delivery_rate(const RunMetrics& metrics) {
  if (metrics.outcomes.empty()) throw std::invalid_argument("empty metrics");
  const auto ok = std::count_if(metrics.outcomes.begin(), metrics.outcomes.end(),
                                [](const DeliveryOutcome& o) { return o.success; });
  return static_cast<double>(ok) / static_cast<double>(metrics.outcomes.size());
}

long Histogram::total() const {
  long n = lost;
  for (long c : counts) n += c;
  return n;
}

std::optional<double> median(std::vector<double> values) {
  if (values.empty()) return std::nullopt;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

Histogram delivery_time_histogram(const RunMetrics& metrics, double bin_ms) {
  if (!(bin_ms > 0.0)) throw std::invalid_argument("bin width must be > 0");
  const double bins_real = metrics.budget_ms / bin_ms;
  const auto bins = static_cast<long>(std::llround(bins_real));
  if (std::abs(bins_real - static_cast<double>(bins)) > 1e-9) {
    throw std::invalid_argument("bin width must divide the delivery budget");
  }
  Histogram h;
  h.bin_ms = bin_ms;
  // A delivery exactly at the budget lands in the last bin.
  h.counts.assign(bins, 0);
  std::vector<double> times;
  for (const auto& o : metrics.outcomes) {
    if (!o.success) {
      ++h.lost;
      continue;
    }
    auto idx = static_cast<long>(std::floor(o.time_ms / bin_ms));
    idx = std::clamp(idx, 0L, bins - 1);
    ++h.counts[idx];
    times.push_back(o.time_ms);
  }
  h.median_ms = median(std::move(times));
  return h;
}

std::vector<ComparisonRow> compare_runs(std::span<const RunMetrics> runs) {
  std::vector<ResultRow> rows;
  std::map<std::pair<std::string, int>, std::string> digest;
  for (const auto& r : runs) {
    auto key = std::pair{r.variant, r.payload_bytes};
    auto [it, inserted] = digest.emplace(key, r.config_digest);
    if (!inserted && it->second != r.config_digest) {
      throw std::invalid_argument("mixed config digests within variant " + r.variant);
    }
    rows.push_back({r.variant, r.seed, r.payload_bytes, v2i_sum_capacity_mbps(r), delivery_rate(r)});
  }
  return compare_rows(rows);
}

std::vector<ComparisonRow> compare_rows(std::span<const ResultRow> rows) {
  std::vector<std::pair<std::string, int>> order;
  std::map<std::pair<std::string, int>, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& r : rows) {
    auto key = std::pair{r.variant, r.payload_bytes};
    if (!groups.contains(key)) order.push_back(key);
    auto& g = groups[key];
    g.first.push_back(r.v2i_sum_mbps);
    g.second.push_back(r.delivery_rate);
  }
  std::vector<ComparisonRow> out;
  for (const auto& key : order) {
    const auto& g = groups[key];
    const auto v2i = mean_sd(g.first);
    const auto del = mean_sd(g.second);
    ComparisonRow row;
    row.variant = key.first;
    row.payload_bytes = key.second;
    row.runs = static_cast<int>(g.first.size());
    row.v2i_mean_mbps = v2i.mean;
    row.v2i_sd_mbps = v2i.sd;
    row.delivery_mean = del.mean;
    row.delivery_sd = del.sd;
    row.single_run = row.runs == 1;
    out.push_back(row);
  }
  return out;
}

std::string results_row(const RunMetrics& m) {
  std::vector<double> times;
  long lost = 0;
  for (const auto& o : m.outcomes) {
    if (o.success) {
      times.push_back(o.time_ms);
    } else {
      ++lost;
    }
  }
  const auto med = median(std::move(times));
  // No episodes: rates are undefined and written as nan.
  const std::string v2i = m.v2i_sum_bps.empty() ? "nan" : format_number(v2i_sum_capacity_mbps(m));
  const std::string rate = m.outcomes.empty() ? "nan" : format_number(delivery_rate(m));
  return fmt::format("{},{},{},{},{},{},{}", m.variant, m.seed, m.payload_bytes, v2i, rate,
                     med ? format_number(*med) : std::string(), lost);
}

void write_histogram(std::ostream& out, const std::string& variant, const Histogram& hist) {
  for (std::size_t i = 0; i < hist.counts.size(); ++i) {
    out << fmt::format("{},{},{}\n", variant, static_cast<double>(i) * hist.bin_ms, hist.counts[i]);
  }
  out << fmt::format("{},{},{}\n", variant, -1, hist.lost);
}

void write_summary(std::ostream& out, std::span<const ComparisonRow> rows) {
  out << kSummaryHeader << '\n';
  for (const auto& r : rows) {
    out << fmt::format("{},{},{},{},{},{},{}\n", r.variant, r.payload_bytes, r.runs,
                       format_number(r.v2i_mean_mbps), format_number(r.v2i_sd_mbps),
                       format_number(r.delivery_mean), format_number(r.delivery_sd));
  }
}

std::vector<ResultRow> parse_results(std::istream& in) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || line != kResultsHeader) {
    throw std::runtime_error("unexpected results header");
  }
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 7) throw std::runtime_error("malformed results row at line " + std::to_string(lineno));
    try {
      rows.push_back({f[0], std::stoull(f[1]), std::stoi(f[2]), std::stod(f[3]), std::stod(f[4])});
    } catch (const std::exception&) {
      throw std::runtime_error("malformed results row at line " + std::to_string(lineno));
    }
  }
  return rows;
}

}  // namespace v2x::evalkit
