#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace v2x::evalkit {

struct DeliveryOutcome {
  bool success = false;
  double time_ms = 0.0;  // meaningful only on success
};

struct RunMetrics {
  std::string variant;
  std::uint64_t seed = 0;
  int payload_bytes = 0;
  std::string config_digest;
  double budget_ms = 100.0;
  std::vector<double> v2i_sum_bps;         // per episode, averaged over its steps
  std::vector<DeliveryOutcome> outcomes;   // per agent-episode

  // Throws std::invalid_argument when a success time lies outside (0, budget].
  void validate() const;
};

// Mean over episodes of the V2I sum rate, Mbps.
double v2i_sum_capacity_mbps(const RunMetrics& metrics);

double delivery_rate(const RunMetrics& metrics);

struct Histogram {
  double bin_ms = 0.0;
  std::vector<long> counts;  // [i] covers [i * bin, (i + 1) * bin)
  long lost = 0;
  std::optional<double> median_ms;

  long total() const;
};

Histogram delivery_time_histogram(const RunMetrics& metrics, double bin_ms);

std::optional<double> median(std::vector<double> values);

struct ComparisonRow {
  std::string variant;
  int payload_bytes = 0;
  int runs = 0;
  double v2i_mean_mbps = 0.0;
  double v2i_sd_mbps = 0.0;
  double delivery_mean = 0.0;
  double delivery_sd = 0.0;
  bool single_run = false;
};

// Groups by (variant, payload), in first-seen order. Sample standard
// deviation; 0 with single_run set when a group has one run.
std::vector<ComparisonRow> compare_runs(std::span<const RunMetrics> runs);

// CSV surfaces.
inline constexpr const char* kResultsHeader =
    "variant,seed,payload_bytes,v2i_sum_mbps,v2v_delivery_rate,median_delivery_ms,lost_count";
inline constexpr const char* kHistogramHeader = "variant,bin_start_ms,count";
inline constexpr const char* kSummaryHeader =
    "variant,payload_bytes,runs,v2i_sum_mbps_mean,v2i_sum_mbps_sd,v2v_delivery_rate_mean,"
    "v2v_delivery_rate_sd";

std::string results_row(const RunMetrics& metrics);
// bin_start_ms = -1 marks the lost bucket.
void write_histogram(std::ostream& out, const std::string& variant, const Histogram& hist);
void write_summary(std::ostream& out, std::span<const ComparisonRow> rows);

struct ResultRow {
  std::string variant;
  std::uint64_t seed = 0;
  int payload_bytes = 0;
  double v2i_sum_mbps = 0.0;
  double delivery_rate = 0.0;
};

std::vector<ResultRow> parse_results(std::istream& in);
// Summary straight from results rows (used by the aggregate command).
std::vector<ComparisonRow> compare_rows(std::span<const ResultRow> rows);

}  // namespace v2x::evalkit
