#include "slosim/baselines.hpp"

#include <algorithm>
#include <limits>

#include "slosim/common.hpp"

namespace slosim {
namespace {

constexpr int kDecodeBatchCap = 64;     // advisory plan length; executor re-plans
constexpr int64_t kUnknownRemaining = std::numeric_limits<int64_t>::max() / 4;

struct PreItem {
  std::string id;
  int64_t left;
};
struct DecItem {
  std::string id;
  int64_t left;
};

// Admit pending in arrival order while the standard pool has room. Requests
// that can never fit are declined; the rest wait for residents to finish.
void admit_by_memory(const ScheduleInput& in, ScheduleResult* out,
                     std::vector<PreItem>* pre, std::vector<DecItem>* post) {
  int64_t budget = in.memory_total - in.memory_standard_resident;
  for (const PendingRequest& p : in.pending) {
    if (p.memory_units > in.memory_total) {
      out->declined.push_back(p.id);
    } else if (p.memory_units <= budget) {
      budget -= p.memory_units;
      out->admitted.push_back(p.id);
      out->admitted_value += p.value;
      pre->push_back({p.id, p.prefill_tokens});
      post->push_back({p.id, kUnknownRemaining});
    } else {
      out->deferred.push_back(p.id);
    }
  }
}

}  // namespace

ScheduleResult PrefillGreedyScheduler::schedule(const ScheduleInput& in) {
  const PerfModel& model = planner_.model();
  ScheduleResult out;

  std::vector<PreItem> pre;
  std::vector<DecItem> dec;
  std::vector<DecItem> post;
  for (const RunningRequest& r : in.running) {
    if (r.prefill_remaining > 0)
      pre.push_back({r.id, r.prefill_remaining});
    else if (r.decode_remaining > 0)
      dec.push_back({r.id, r.decode_remaining});
  }
  admit_by_memory(in, &out, &pre, &post);

  double t = in.now;
  const int64_t max_batch = planner_.config().max_batch_tokens;
  // Whole prompts packed in arrival order; decode waits.
  size_t pi = 0;
  while (pi < pre.size()) {
    PlanBatch b;
    b.start_s = t;
    int64_t used = 0;
    while (pi < pre.size()) {
      int64_t take = std::min(pre[pi].left, max_batch - used);
      if (take <= 0) break;
      if (used > 0 && take < pre[pi].left) break;  // only head-of-batch prompts get split
      b.entries.push_back({pre[pi].id, take, 0, 0});
      used += take;
      pre[pi].left -= take;
      if (pre[pi].left == 0) ++pi;
      if (used >= max_batch) break;
    }
    b.capacity_tokens = max_batch;
    b.end_s = t + model.predict(used, 0);
    t = b.end_s;
    out.plan.batches.push_back(std::move(b));
  }
  for (DecItem& d : post) dec.push_back(std::move(d));
  for (int k = 0; k < kDecodeBatchCap; ++k) {
    PlanBatch b;
    b.start_s = t;
    int64_t n = 0;
    for (DecItem& d : dec) {
      if (d.left <= 0) continue;
      d.left -= 1;
      b.entries.push_back({d.id, 0, 1, 0});
      ++n;
    }
    if (n == 0) break;
    b.capacity_tokens = n;
    b.end_s = t + model.predict(n, 0);
    t = b.end_s;
    out.plan.batches.push_back(std::move(b));
  }
  out.plan.exact_until_s = t;
  return out;
}

ScheduleResult FixedCapScheduler::schedule(const ScheduleInput& in) {
  const PerfModel& model = planner_.model();
  const SloConfig& slo = planner_.slo();
  ScheduleResult out;

  std::vector<PreItem> pre;
  std::vector<DecItem> dec;
  std::vector<DecItem> post;  // decode after an in-plan prefill completes
  for (const RunningRequest& r : in.running) {
    if (r.prefill_remaining > 0) {
      pre.push_back({r.id, r.prefill_remaining});
      post.push_back({r.id, r.decode_remaining > 0 ? r.decode_remaining : kUnknownRemaining});
    } else if (r.decode_remaining > 0) {
      dec.push_back({r.id, r.decode_remaining});
    }
  }
  {
    // post entries for admitted-new are appended by admission
    std::vector<DecItem> admitted_post;
    admit_by_memory(in, &out, &pre, &admitted_post);
    for (DecItem& d : admitted_post) post.push_back(std::move(d));
  }

  double t0 = slo.tpot_tiers_s.front();
  int64_t cap = model.time2bs(t0, 0, planner_.config().max_batch_tokens);
  const int64_t chunk_cap = planner_.config().max_chunk_tokens;

  double t = in.now;
  int decode_only = 0;
  for (int guard = 0; guard < 10000; ++guard) {
    bool prefills = std::any_of(pre.begin(), pre.end(), [](const PreItem& p) { return p.left > 0; });
    if (!prefills && decode_only >= kDecodeBatchCap) break;
    PlanBatch b;
    b.start_s = t;
    int64_t used = 0;
    for (DecItem& d : dec) {
      if (d.left <= 0) continue;
      d.left -= 1;
      b.entries.push_back({d.id, 0, 1, 0});
      ++used;
    }
    int64_t free = std::min<int64_t>(chunk_cap, cap - used);
    bool finished_any = false;
    for (size_t i = 0; i < pre.size() && free > 0; ++i) {
      if (pre[i].left <= 0) continue;
      int64_t take = std::min(pre[i].left, free);
      pre[i].left -= take;
      free -= take;
      used += take;
      b.entries.push_back({pre[i].id, take, 0, 0});
      if (pre[i].left == 0) {
        // joins the decode set from the next batch on
        for (DecItem& p : post)
          if (p.id == pre[i].id) {
            dec.push_back(p);
            finished_any = true;
          }
      }
    }
    (void)finished_any;
    if (used == 0) break;
    b.capacity_tokens = cap;
    b.end_s = t + model.predict(used, 0);
    t = b.end_s;
    if (!prefills) ++decode_only;
    out.plan.batches.push_back(std::move(b));
  }
  out.plan.exact_until_s = t;
  return out;
}

std::unique_ptr<Scheduler> make_scheduler(const std::string& name, const BatchPlanner& planner) {
  if (name == "slos") return std::make_unique<SloScheduler>(planner);
  if (name == "prefill-greedy") return std::make_unique<PrefillGreedyScheduler>(planner);
  if (name == "fixed-cap") return std::make_unique<FixedCapScheduler>(planner);
  fail("invalid-parameters", "unknown scheduler: " + name);
}

}  // namespace slosim
