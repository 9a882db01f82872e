#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slosim/sim_executor.hpp"
#include "slosim/tiers_router.hpp"
#include "slosim/workload.hpp"

namespace slosim {

// Aggregates over one simulation's request records. Attainment counts the
// standard tier only: best-effort requests sit outside the numerator and
// the denominator and are reported separately, while dropped or unfinished
// standard requests count against attainment.
struct SummaryStats {
  int64_t total_requests = 0;
  int64_t standard_requests = 0;
  int64_t standard_attained = 0;
  int64_t best_effort_requests = 0;
  int64_t best_effort_completed = 0;
  int64_t dropped_requests = 0;
  double attainment = 1.0;          // standard_attained / standard_requests
  double overall_attainment = 1.0;  // standard_attained / total_requests
  double p50_ttft_s = 0.0;
  double p99_ttft_s = 0.0;
  double p50_tpot_s = 0.0;
  double p99_tpot_s = 0.0;
  double makespan_s = 0.0;
  int64_t tokens_out = 0;
  std::vector<int64_t> arrivals_per_s;  // one bucket per wall-clock second
};

SummaryStats summarize(const std::vector<RequestRecord>& records);

// Standard-tier attainment rate; 1.0 when no standard requests exist.
double attainment(const std::vector<RequestRecord>& records);

// One JSON object per line: every request, then a final summary object.
void write_metrics_jsonl(const std::string& path, const std::vector<RequestRecord>& records,
                         const SummaryStats& stats);

// Flat tab-separated companion table, one row per request.
void write_metrics_table(const std::string& path, const std::vector<RequestRecord>& records);

// Steady-state prefill/decode instance ratio for a disaggregated pool:
// (1 - overhead/tpot) * mean_prefill_len / mean_decode_len.
double disagg_ratio(double mean_prefill_len, double mean_decode_len, double tpot_s,
                    double overhead_s);

// Upper-bound goodput of a token-throughput-limited server:
// max_token_tpt / (tpot/(tpot-overhead) * mean_out + mean_in).
double disagg_goodput(double max_token_tpt, double mean_in, double mean_out, double tpot_s,
                      double overhead_s);

struct CapacityOptions {
  // Fraction of all arrivals (demoted and dropped included) that must be
  // served within SLO; a scheduler cannot shed load to look attained.
  double target_attainment = 0.9;
  double lo_scale = 0.1;   // rate multiplier that must attain the target
  double hi_scale = 16.0;  // rate multiplier expected to miss it
  double rel_tolerance = 0.05;
  int seeds_per_rate = 3;
  uint64_t base_seed = 1;
  double horizon_s = 120.0;  // arrival window per evaluation
};

struct CapacityResult {
  double per_gpu_rate = 0.0;    // measured requests/second/GPU at the found scale
  double scale = 0.0;           // rate multiplier found by bisection
  double attainment_at = 0.0;   // median attainment at that scale
  int evaluations = 0;
};

// Applies a rate multiplier to a scenario: arrival rates scale up and
// bursty on-phases compress so each burst keeps its request count.
ScenarioConfig scale_scenario(const ScenarioConfig& scenario, double scale);

// Runs the scenario end to end and returns the merged request records.
std::vector<RequestRecord> simulate_scenario(const ScenarioConfig& scenario,
                                             const PerfModel& model, const ExecConfig& exec,
                                             const ClusterConfig& cluster, uint64_t seed,
                                             double horizon_s, DebugFn debug = {});

// Bisection over the rate multiplier for the largest load whose median
// overall attainment (attained standard requests over all arrivals, across
// seeds_per_rate seeds) still meets the target.
CapacityResult capacity_search(const ScenarioConfig& scenario, const PerfModel& model,
                               const ExecConfig& exec, const ClusterConfig& cluster,
                               const CapacityOptions& opt);

}  // namespace slosim
