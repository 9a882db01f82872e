#pragma once

#include <memory>
#include <string>

#include "slosim/dp_scheduler.hpp"

namespace slosim {

// Throughput-first baseline: admits everything memory allows, runs whole
// prompts as large prefill batches in arrival order, and only decodes when
// no prefill is waiting.
class PrefillGreedyScheduler : public Scheduler {
 public:
  explicit PrefillGreedyScheduler(const BatchPlanner& planner) : planner_(planner) {}
  ScheduleResult schedule(const ScheduleInput& in) override;
  std::string name() const override { return "prefill-greedy"; }

 private:
  const BatchPlanner& planner_;
};

// Chunked-prefill baseline: admits everything memory allows and runs a
// fixed token budget per batch sized to the tightest TPOT tier, decodes
// first, leftover budget to prefill chunks in arrival order.
class FixedCapScheduler : public Scheduler {
 public:
  explicit FixedCapScheduler(const BatchPlanner& planner) : planner_(planner) {}
  ScheduleResult schedule(const ScheduleInput& in) override;
  std::string name() const override { return "fixed-cap"; }

 private:
  const BatchPlanner& planner_;
};

// Factory for the CLI names: "slos", "prefill-greedy", "fixed-cap".
std::unique_ptr<Scheduler> make_scheduler(const std::string& name, const BatchPlanner& planner);

}  // namespace slosim
