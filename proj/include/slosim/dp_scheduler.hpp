#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "slosim/batch_planner.hpp"
#include "slosim/perf_model.hpp"
#include "slosim/workload.hpp"

namespace slosim {

// A request awaiting admission.
struct PendingRequest {
  std::string id;
  double prefill_deadline = 0.0;  // pDDL of its first prefill stage
  int64_t prefill_tokens = 0;
  int decode_tier = 0;            // tightest decode tier, planning view
  int64_t memory_units = 0;
  double value = 1.0;
};

// An admitted request's remaining work. Exactly one of the two phases is
// active: prefill_remaining > 0 means the current stage is a prefill with
// the given deadline; otherwise the request decodes along its SLO line.
struct RunningRequest {
  std::string id;
  int64_t prefill_remaining = 0;
  double prefill_deadline = 0.0;
  int decode_tier = 0;       // effective planning tier (tightened when behind)
  double next_due_s = 0.0;   // absolute time of the next line due (decode phase)
  int64_t backlog = 0;       // tokens already overdue (decode phase)
  int64_t decode_remaining = 0;  // tokens left in the current decode stage
};

struct ScheduleInput {
  double now = 0.0;
  std::vector<RunningRequest> running;
  std::vector<PendingRequest> pending;
  int64_t memory_total = 0;
  int64_t memory_standard_resident = 0;  // units already held by running requests
  // Horizon cap for the decode tail after the last prefill deadline;
  // nonpositive means plan until every known decode line completes.
  double tail_horizon_s = 0.0;
};

struct PlanEntry {
  std::string id;
  int64_t prefill_tokens = 0;
  int64_t decode_tokens = 0;  // allocated; speculative entries may commit fewer
  int spec_len = 0;           // 0 for autoregressive entries
};

struct PlanBatch {
  double start_s = 0.0;  // absolute, planning-model timing
  double end_s = 0.0;
  int64_t capacity_tokens = 0;
  int64_t spec_step = 0;
  std::vector<PlanEntry> entries;
  int64_t prefill_budget_left = 0;  // unassigned budget, best-effort fill
};

struct SchedulePlan {
  std::vector<PlanBatch> batches;
  // End of the gap whose decode census is exact. Batches past this point
  // rest on the canonical census, so the executor re-plans when crossing it.
  double exact_until_s = 0.0;
};

struct ScheduleResult {
  std::vector<std::string> admitted;  // newly admitted, pDDL order
  std::vector<std::string> declined;  // rejected now (callers may demote these)
  std::vector<std::string> deferred;  // keep pending, offer again next call
  double admitted_value = 0.0;
  bool running_set_infeasible = false;
  SchedulePlan plan;
};

class Scheduler {
 public:
  virtual ~Scheduler() = default;
  virtual ScheduleResult schedule(const ScheduleInput& in) = 0;
  virtual std::string name() const = 0;
};

// Value-optimal admission control: a forward DP over requests sorted by
// prefill deadline, tracking (memory, leftover prefill budget, admitted
// decode census) with Pareto pruning, plus plan reconstruction. Running
// requests are forced into every chain.
class SloScheduler : public Scheduler {
 public:
  SloScheduler(const BatchPlanner& planner);

  ScheduleResult schedule(const ScheduleInput& in) override;
  std::string name() const override { return "slos"; }

  // Throughput variant: maximizes admitted count via the reduced state
  // space (value identically 1, budget as the rolled-up quantity).
  ScheduleResult schedule_throughput(const ScheduleInput& in);

 private:
  ScheduleResult run(const ScheduleInput& in, bool unit_value);
  const BatchPlanner& planner_;
};

std::string plan_to_json(const ScheduleResult& result, double now);

}  // namespace slosim
