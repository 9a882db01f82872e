#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "slosim/perf_model.hpp"

namespace slosim {

// Tier indices order tiers from tightest (0) to loosest. A request's
// stage references tiers by index into SloConfig.
struct SloConfig {
  std::vector<double> tpot_tiers_s;       // ascending, seconds per token
  std::vector<double> ttft_slowdowns;     // per tier, multiplier on zero-load TTFT
  int tpot_window = 10;                   // tokens per TPOT measurement window

  int num_tiers() const { return static_cast<int>(tpot_tiers_s.size()); }
  void validate() const;
};

enum class StageKind { kPrefill, kDecode };

struct StageSpec {
  StageKind kind = StageKind::kPrefill;
  int64_t tokens = 0;
  int slo_tier = 0;
  // Delay between the previous stage finishing and this stage becoming
  // available (tool-call latency). Applies to prefill stages.
  double external_delay_s = 0.0;
};

struct RequestSpec {
  std::string id;
  double arrival_s = 0.0;
  double value = 1.0;
  std::vector<StageSpec> stages;
  int64_t memory_units = 0;  // KV blocks; derived from token totals on load

  int64_t total_tokens() const;
  int64_t total_decode_tokens() const;
  // Tightest decode tier across stages; planning tier for admission.
  int tightest_decode_tier() const;
  void validate(const SloConfig& slo) const;
};

// KV block granularity in tokens.
inline constexpr int64_t kKvBlockTokens = 16;

int64_t derive_memory_units(const RequestSpec& req, double overprovision = 1.0);

// Prefill deadline for one prefill stage: availability plus the tier's
// slowdown multiplier times the zero-load (un-chunked) prefill latency.
double prefill_deadline(const PerfModel& model, const SloConfig& slo,
                        const StageSpec& stage, double available_s);

struct ArrivalConfig {
  std::string process = "poisson";  // "poisson" | "bursty"
  double rate_per_s = 1.0;
  double on_multiplier = 4.0;  // bursty: on-phase rate = multiplier * rate
  double mean_on_s = 20.0;
  double mean_off_s = 60.0;
};

struct LengthDist {
  double mean = 0.0;
  double std = 0.0;
};

// Scenario template shapes:
//  "single": one prefill + one decode stage
//  "reasoning": one prefill, then a thinking decode (tight tier) and a
//               response decode (loose tier)
//  "tool": N prefill+decode pairs with an external tool delay before each
//          continuation prefill
struct ScenarioConfig {
  std::string name;
  std::string shape = "single";
  ArrivalConfig arrival;
  SloConfig slo;
  LengthDist prompt_tokens;
  LengthDist output_tokens;
  int prefill_tier = 0;
  int decode_tier = 0;
  double value = 1.0;
  // reasoning shape
  LengthDist think_tokens;
  LengthDist response_tokens;
  int think_tier = 0;
  int response_tier = 1;
  // tool shape
  double tool_pairs_mean = 2.7;
  double tool_pairs_std = 1.1;
  double tool_delay_min_s = 0.05;
  double tool_delay_max_s = 0.2;
  double memory_overprovision = 1.0;

  void validate() const;
};

ScenarioConfig load_scenario_file(const std::string& path);
std::string scenario_to_json(const ScenarioConfig& sc);

// Deterministic trace synthesis: same (scenario, seed, duration) gives the
// same trace. Requests are sorted by arrival and ids are sequential.
std::vector<RequestSpec> generate_trace(const ScenarioConfig& scenario, uint64_t seed,
                                        double duration_s);

// Line-delimited trace records. Throws "parse-error" with line numbers and
// "invariant-violation" naming the offending request id.
std::vector<RequestSpec> load_trace_file(const std::string& path, const SloConfig& slo,
                                         double memory_overprovision = 1.0);
void save_trace_file(const std::string& path, const std::vector<RequestSpec>& reqs);

}  // namespace slosim
