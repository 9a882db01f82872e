#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "slosim/perf_model.hpp"
#include "slosim/workload.hpp"

namespace slosim {

// Decoder census over one planning gap. Members owe one token per TPOT of
// their tier along their SLO line. Exact members carry their true line
// state (used for the gap starting at the schedule instant); canonical
// members sit on the just-in-time grid with their first token due one
// TPOT after the gap start (used for later gaps, where the admission DP
// only knows per-tier counts).
struct DecodeMember {
  int tier = 0;
  double phase_s = 0.0;    // time from gap start to the next line due
  int64_t backlog = 0;     // tokens already overdue at gap start
  int64_t remaining = 0;   // tokens left; dues stop when exhausted
  int owner = -1;          // reconstruction tag, opaque to the planner
};

struct DecodeCensus {
  std::vector<int64_t> counts_per_tier;  // canonical just-in-time members
  std::vector<DecodeMember> exact;       // explicit members, first gap only

  bool empty() const;
  int64_t total() const;
  std::vector<int64_t> merged_counts(int num_tiers) const;
};

// One planned batch inside a gap. Decode token allocations are recorded
// per member slot owner (exact members) or per tier (canonical members).
struct PlannedBatch {
  double start_s = 0.0;     // offset from gap start
  double end_s = 0.0;       // emission instant for tokens in this batch
  int64_t capacity_tokens = 0;
  int64_t spec_step = 0;
  // Decode spend: owner id -> tokens for exact members; tier -> tokens for
  // canonical members.
  std::vector<std::pair<int, int64_t>> decode_by_owner;
  std::vector<int64_t> decode_per_tier;
  int64_t decode_tokens = 0;
  int64_t prefill_budget = 0;
};

struct GapPlan {
  std::vector<PlannedBatch> batches;
  int64_t prefill_budget = 0;
  std::vector<int> spec_lengths;  // per tier; empty for autoregressive plans
};

struct PlannerConfig {
  int64_t max_chunk_tokens = 2048;  // per-batch prefill budget cap
  int64_t max_batch_tokens = PerfModel::kDefaultMaxTokens;
  bool speculative = false;
  double spec_alpha = 0.8;
  int spec_max_len = 8;
  // Planning-side derating: predicted latencies scaled by (1 + margin) so
  // bounded execution noise cannot push deliveries past the SLO lines.
  double plan_margin = 0.0;
};

// Expected tokens committed per verification of sl drafted tokens: one
// guaranteed token plus consecutive Bernoulli(alpha) acceptances.
double expected_accepted(double alpha, int sl);

// Per-tier speculation lengths maximizing prefill throughput for a decoder
// census: enumerate the binding tier and its length, close the other tiers
// in closed form. nullopt when no assignment keeps the budget nonnegative.
struct SpecPlan {
  std::vector<int> lengths;    // per tier; 0 where no decoder is present
  double batch_time_s = 0.0;   // min over present tiers of tpot * Acc(sl)
  int64_t batch_capacity = 0;  // time2bs(batch_time, max sl)
  int64_t decode_tokens = 0;   // sum counts[l] * sl[l]
  double prefill_throughput = 0.0;
};
std::optional<SpecPlan> solve_spec_lengths(const std::vector<int64_t>& decoders_per_tier,
                                           double alpha, int max_len,
                                           const PerfModel& model, const SloConfig& slo,
                                           const PlannerConfig& cfg);

class BatchPlanner {
 public:
  BatchPlanner(const PerfModel& model, const SloConfig& slo, PlannerConfig cfg);

  const PlannerConfig& config() const { return cfg_; }
  const SloConfig& slo() const { return slo_; }
  const PerfModel& model() const { return model_; }

  // Predicted latency / inverse with the planning margin applied.
  double plan_predict(int64_t num_tokens, int64_t spec_step) const;
  int64_t plan_time2bs(double budget_s, int64_t spec_step) const;

  // Shortest batch the model can run: one token with the margin applied.
  double min_slot_s() const;

  // Tile a gap with autoregressive batches serving the census. Slot
  // cadence is the tightest TPOT among present tiers; each line due is
  // placed in the latest batch emitting at or before it, overflowing to
  // earlier batches when a batch fills. Exact-member dues through
  // due_horizon_s (when past the gap end) are served early by in-gap
  // batches, so a due landing just after a gap boundary never strands.
  // nullopt when some due cannot be placed. With no dues in range the
  // gap becomes back-to-back prefill chunks capped by max_chunk_tokens.
  std::optional<GapPlan> tile_gap_ar(double gap_s, const DecodeCensus& census,
                                     double due_horizon_s = 0.0) const;

  // Speculative tiling of the same gap; falls back to the autoregressive
  // plan whenever that is at least as good or speculation is infeasible.
  std::optional<GapPlan> tile_gap(double gap_s, const DecodeCensus& census,
                                  double due_horizon_s = 0.0) const;

  // Maximum leftover prefill budget over a gap of canonical members only
  // (the admission DP's inner primitive). Memoized on the millisecond-
  // floored gap length and the tier counts. nullopt when infeasible.
  std::optional<int64_t> prefill_budget(double gap_s,
                                        const std::vector<int64_t>& counts_per_tier) const;

  void clear_memo() const;

  // Floor a gap length to the planning quantum (1 ms).
  static double quantize_gap(double gap_s);

 private:
  const PerfModel& model_;
  SloConfig slo_;
  PlannerConfig cfg_;
  mutable std::map<std::pair<int64_t, std::vector<int64_t>>, std::optional<int64_t>> memo_;
};

}  // namespace slosim
