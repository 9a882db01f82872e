#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include "slosim/baselines.hpp"
#include "slosim/batch_planner.hpp"
#include "slosim/dp_scheduler.hpp"
#include "slosim/perf_model.hpp"
#include "slosim/workload.hpp"

namespace slosim {

struct ExecConfig {
  std::string scheduler = "slos";
  bool speculative = false;
  double spec_alpha = 0.8;
  int spec_max_len = 8;
  double noise = 0.0;  // uniform +-bound on batch duration, fraction
  int64_t memory_units = 0;
  double be_reserve_frac = 0.1;  // slice of memory the admission DP cannot use
  int64_t max_chunk_tokens = 2048;
  int64_t max_batch_tokens = PerfModel::kDefaultMaxTokens;
  int replan_new_threshold = 4;
  int replan_finished_threshold = 4;
  double replan_timeout_s = 0.1;
  uint64_t seed = 0;

  // Planning margin protecting zero-slack slots from execution noise.
  double plan_margin() const { return std::min(0.05, 2.5 * noise); }
};

struct StageRecord {
  StageKind kind = StageKind::kPrefill;
  int tier = 0;
  int64_t tokens = 0;
  double available_s = 0.0;
  double deadline_s = 0.0;   // prefill stages
  double line_start_s = 0.0; // decode stages
  double completed_s = -1.0;
  bool on_time = true;            // prefill: completed by deadline
  int64_t windows_total = 0;      // decode: per-window checkpoints
  int64_t windows_violated = 0;
  // observed pace between consecutive checkpoints, seconds per token
  std::vector<double> tpot_samples;
};

struct RequestRecord {
  std::string id;
  double value = 0.0;
  bool best_effort = false;
  bool dropped = false;  // never serviced (memory can never fit)
  bool completed = false;
  double arrival_s = 0.0;
  double completion_s = -1.0;
  double first_token_s = -1.0;
  int hops = 0;
  int preemptions = 0;
  int64_t tokens_out = 0;
  int64_t total_tokens = 0;
  std::vector<StageRecord> stages;

  // SLO attainment: standard, ran to completion, every prefill stage on
  // time, every decode window checkpoint on time.
  bool attained() const;
};

enum class DeclineAction { kDemoteBestEffort, kRemove };

// Called when admission declines a new request; clusters reroute (kRemove),
// standalone replicas demote to best effort.
using DeclineHandler = std::function<DeclineAction(const std::string& id)>;
using DebugFn = std::function<void(const std::string& line)>;

// Discrete-event simulation of one serving replica: requests progress
// through prefill/decode stages, batches execute under the latency model
// with optional noise, and the configured scheduler is re-run whenever the
// plan goes stale.
class ReplicaSim {
 public:
  ReplicaSim(const PerfModel& model, const SloConfig& slo, const ExecConfig& cfg,
             DeclineHandler on_decline = {}, DebugFn debug = {});
  ~ReplicaSim();

  ReplicaSim(const ReplicaSim&) = delete;
  ReplicaSim& operator=(const ReplicaSim&) = delete;

  // Hand a request to this replica; it becomes schedulable at available_s.
  void inject(const RequestSpec& req, double available_s, bool best_effort, int hops);

  // Earliest instant this replica needs to act; +inf when fully drained.
  double next_time() const;

  // Process all activity up to and including time t.
  void advance_to(double t);

  bool drained() const;
  double now() const { return now_; }

  // Closes out records (incomplete requests keep completed=false).
  std::vector<RequestRecord> finalize();

  int64_t replan_count() const { return replan_count_; }
  int64_t batch_count() const { return batch_count_; }
  bool saw_infeasible_running_set() const { return saw_infeasible_; }

 private:
  struct Req;
  struct PendingEntry;

  void replan(const char* reason);
  void execute_batch(const PlanBatch& b);
  void emit_decode(Req& r, int64_t accepted, double te);
  void finish_prefill_stage(Req& r, double te);
  void start_stage(Req& r, double available_s);
  void complete_request(Req& r, double te);
  void demote_to_best_effort(Req& r);
  void evict_best_effort(int64_t needed_units);
  bool load_best_effort(Req& r);
  bool work_exists() const;
  bool be_runnable() const;
  int64_t best_effort_fill(int64_t budget_prefill, int64_t budget_decode,
                           std::vector<std::pair<Req*, int64_t>>* decode_grants,
                           std::vector<std::pair<Req*, int64_t>>* prefill_grants);
  std::optional<PlanBatch> synth_best_effort_batch() const;
  void handle_due_events();
  ScheduleInput snapshot();
  void apply_schedule(const ScheduleResult& res);
  double zero_load_prefill(const StageSpec& st) const;
  void debug_line(const std::string& s);

  const PerfModel& model_;
  SloConfig slo_;
  ExecConfig cfg_;
  PlannerConfig planner_cfg_;
  std::unique_ptr<BatchPlanner> planner_;
  std::unique_ptr<Scheduler> scheduler_;
  SloScheduler* slo_scheduler_ = nullptr;  // non-null when scheduler is "slos"
  DeclineHandler on_decline_;
  DebugFn debug_;
  std::mt19937_64 rng_;

  double now_ = 0.0;
  std::map<std::string, std::unique_ptr<Req>> reqs_;
  std::vector<std::string> pending_;      // standard candidates, arrival order
  std::deque<std::string> be_queue_;      // best-effort waiting for residency
  std::vector<std::string> be_active_;    // best-effort resident, service order

  // stage-available event heap (tool-delay returns)
  struct Ev {
    double t;
    int64_t seq;
    std::string id;
    bool operator>(const Ev& o) const {
      if (t != o.t) return t > o.t;
      return seq > o.seq;
    }
  };
  std::priority_queue<Ev, std::vector<Ev>, std::greater<Ev>> events_;
  int64_t ev_seq_ = 0;
  // replan wake deadline; a soft boundary, not an event
  double wake_t_ = std::numeric_limits<double>::infinity();

  SchedulePlan plan_;
  size_t plan_cursor_ = 0;
  double plan_started_ = 0.0;
  bool plan_valid_ = false;
  bool dirty_ = true;  // state changed since the plan was built
  bool force_replan_ = false;
  double last_replan_now_ = -1.0;
  int new_since_plan_ = 0;
  int finished_since_plan_ = 0;

  int64_t mem_standard_used_ = 0;
  int64_t mem_be_used_ = 0;
  int64_t standard_pool_ = 0;

  int64_t replan_count_ = 0;
  int64_t batch_count_ = 0;
  bool saw_infeasible_ = false;
};

}  // namespace slosim
