#include "slosim/sim_executor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "slosim/common.hpp"

namespace slosim {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

bool RequestRecord::attained() const {
  if (best_effort || dropped || !completed) return false;
  for (const StageRecord& s : stages) {
    if (s.kind == StageKind::kPrefill && !s.on_time) return false;
    if (s.kind == StageKind::kDecode && s.windows_violated > 0) return false;
  }
  return true;
}

struct ReplicaSim::Req {
  RequestSpec spec;
  RequestRecord rec;
  bool best_effort = false;
  bool admitted = false;
  bool resident = false;
  bool done = false;
  int stage = 0;
  int64_t stage_done = 0;
  bool stage_waiting = false;
  double stage_available = 0.0;
  double stage_deadline = 0.0;
  double line_start = 0.0;
  double ckpt_t = 0.0;   // last checkpoint time, for pace reporting
  int64_t ckpt_k = 0;    // tokens emitted at last checkpoint
  int64_t recover_left = 0;  // best-effort resumption context re-prefill

  const StageSpec& cur() const { return spec.stages[stage]; }
};

ReplicaSim::ReplicaSim(const PerfModel& model, const SloConfig& slo, const ExecConfig& cfg,
                       DeclineHandler on_decline, DebugFn debug)
    : model_(model), slo_(slo), cfg_(cfg), on_decline_(std::move(on_decline)),
      debug_(std::move(debug)), rng_(cfg.seed) {
  slo_.validate();
  planner_cfg_.max_chunk_tokens = cfg_.max_chunk_tokens;
  planner_cfg_.max_batch_tokens = cfg_.max_batch_tokens;
  planner_cfg_.speculative = cfg_.speculative;
  planner_cfg_.spec_alpha = cfg_.spec_alpha;
  planner_cfg_.spec_max_len = cfg_.spec_max_len;
  planner_cfg_.plan_margin = cfg_.plan_margin();
  planner_ = std::make_unique<BatchPlanner>(model_, slo_, planner_cfg_);
  auto sched = make_scheduler(cfg_.scheduler, *planner_);
  slo_scheduler_ = dynamic_cast<SloScheduler*>(sched.get());
  scheduler_ = std::move(sched);
  if (cfg_.memory_units <= 0) fail("invalid-parameters", "memory_units must be positive");
  standard_pool_ = (int64_t)std::floor((double)cfg_.memory_units * (1.0 - cfg_.be_reserve_frac));
  if (standard_pool_ <= 0) fail("invalid-parameters", "standard memory pool is empty");
}

ReplicaSim::~ReplicaSim() = default;

void ReplicaSim::debug_line(const std::string& s) {
  if (debug_) debug_(s);
}

double ReplicaSim::zero_load_prefill(const StageSpec& st) const {
  return model_.predict(st.tokens, 0);
}

void ReplicaSim::start_stage(Req& r, double available_s) {
  const StageSpec& st = r.cur();
  StageRecord sr;
  sr.kind = st.kind;
  sr.tier = st.slo_tier;
  sr.tokens = st.tokens;
  sr.available_s = available_s;
  r.stage_done = 0;
  r.stage_waiting = false;
  r.stage_available = available_s;
  if (st.kind == StageKind::kPrefill) {
    // The first deadline is pinned to the original arrival so rerouting a
    // request between replicas never relaxes its user-perceived TTFT.
    double base = r.stage == 0 ? r.spec.arrival_s : available_s;
    r.stage_deadline =
        base + slo_.ttft_slowdowns.at(st.slo_tier) * zero_load_prefill(st);
    sr.deadline_s = r.stage_deadline;
  } else {
    // The line anchors at the governing prefill deadline, never earlier:
    // anchoring at an early completion would stretch dues into budget the
    // admission control has already promised to other requests. A stage
    // arriving late (or following another decode stage) anchors at its
    // availability instead.
    double anchor = available_s;
    if (r.stage > 0 && r.spec.stages[r.stage - 1].kind == StageKind::kPrefill)
      anchor = std::max(r.stage_deadline, available_s);
    r.line_start = anchor;
    sr.line_start_s = anchor;
    r.ckpt_t = available_s;
    r.ckpt_k = 0;
  }
  r.rec.stages.push_back(sr);
}

void ReplicaSim::inject(const RequestSpec& req, double available_s, bool best_effort,
                        int hops) {
  if (reqs_.count(req.id)) fail("invalid-parameters", "duplicate request id " + req.id);
  auto owned = std::make_unique<Req>();
  Req& r = *owned;
  r.spec = req;
  r.rec.id = req.id;
  r.rec.value = req.value;
  r.rec.arrival_s = req.arrival_s;
  r.rec.total_tokens = req.total_tokens();
  r.rec.hops = hops;
  r.best_effort = best_effort;
  r.rec.best_effort = best_effort;
  if (req.stages.empty() || req.stages.front().kind != StageKind::kPrefill)
    fail("invalid-parameters", "request must start with a prefill stage: " + req.id);
  if (req.memory_units > cfg_.memory_units) {
    // can never be resident on this replica
    r.rec.dropped = true;
    r.done = true;
    reqs_.emplace(req.id, std::move(owned));
    debug_line("{\"event\":\"drop\",\"id\":\"" + req.id + "\",\"reason\":\"cannot-satisfy\"}");
    return;
  }
  r.stage = 0;
  start_stage(r, available_s);
  reqs_.emplace(req.id, std::move(owned));
  if (best_effort) {
    be_queue_.push_back(req.id);
  } else {
    pending_.push_back(req.id);
    ++new_since_plan_;
  }
  dirty_ = true;
}

void ReplicaSim::complete_request(Req& r, double te) {
  r.done = true;
  r.rec.completed = true;
  r.rec.completion_s = te;
  if (r.resident) {
    if (r.best_effort)
      mem_be_used_ -= r.spec.memory_units;
    else
      mem_standard_used_ -= r.spec.memory_units;
    r.resident = false;
  }
  std::erase(be_active_, r.spec.id);
  ++finished_since_plan_;
  dirty_ = true;
}

void ReplicaSim::finish_prefill_stage(Req& r, double te) {
  StageRecord& sr = r.rec.stages.back();
  sr.completed_s = te;
  sr.on_time = time_le(te, r.stage_deadline);
  ++r.stage;
  if (r.stage >= (int)r.spec.stages.size()) {
    complete_request(r, te);
    return;
  }
  const StageSpec& nxt = r.cur();
  if (nxt.kind == StageKind::kPrefill) {
    // prefill directly after prefill does not occur in generated shapes,
    // but tolerate it: treat like an availability boundary
    start_stage(r, te);
    force_replan_ = true;
  } else {
    start_stage(r, te);
  }
  dirty_ = true;
}

void ReplicaSim::emit_decode(Req& r, int64_t accepted, double te) {
  const StageSpec& st = r.cur();
  double tpot = slo_.tpot_tiers_s.at(st.slo_tier);
  StageRecord& sr = r.rec.stages.back();
  for (int64_t k = r.stage_done + 1; k <= r.stage_done + accepted; ++k) {
    if (k % slo_.tpot_window == 0 || k == st.tokens) {
      ++sr.windows_total;
      if (!time_le(te, r.line_start + (double)k * tpot)) ++sr.windows_violated;
      sr.tpot_samples.push_back((te - r.ckpt_t) / (double)(k - r.ckpt_k));
      r.ckpt_t = te;
      r.ckpt_k = k;
    }
  }
  if (r.rec.first_token_s < 0) r.rec.first_token_s = te;
  r.stage_done += accepted;
  r.rec.tokens_out += accepted;
  if (r.stage_done >= st.tokens) {
    sr.completed_s = te;
    ++r.stage;
    if (r.stage >= (int)r.spec.stages.size()) {
      complete_request(r, te);
      return;
    }
    const StageSpec& nxt = r.cur();
    if (nxt.kind == StageKind::kPrefill && nxt.external_delay_s > 0) {
      r.stage_waiting = true;
      events_.push({te + nxt.external_delay_s, ev_seq_++, r.spec.id});
    } else {
      start_stage(r, te);
      if (nxt.kind == StageKind::kPrefill) force_replan_ = true;
    }
    ++finished_since_plan_;
    dirty_ = true;
  }
}

void ReplicaSim::demote_to_best_effort(Req& r) {
  r.best_effort = true;
  r.rec.best_effort = true;
  std::erase(pending_, r.spec.id);
  be_queue_.push_back(r.spec.id);
  dirty_ = true;
  debug_line("{\"event\":\"demote\",\"id\":\"" + r.spec.id + "\"}");
}

void ReplicaSim::evict_best_effort(int64_t needed_units) {
  while (mem_standard_used_ + mem_be_used_ + needed_units > cfg_.memory_units) {
    Req* victim = nullptr;
    for (const std::string& id : be_active_) {
      Req& c = *reqs_.at(id);
      if (!victim || c.spec.memory_units > victim->spec.memory_units ||
          (c.spec.memory_units == victim->spec.memory_units && c.spec.id < victim->spec.id))
        victim = &c;
    }
    if (!victim) fail("memory-exhausted", "standard admission exceeds physical memory");
    Req& v = *victim;
    int64_t ctx = 0;
    for (int s = 0; s < v.stage; ++s) ctx += v.spec.stages[s].tokens;
    if (v.cur().kind == StageKind::kDecode) {
      ctx += v.stage_done;  // emitted tokens are kept output, context re-prefills
    } else {
      v.stage_done = 0;  // partial prefill is lost
    }
    v.recover_left = ctx;
    v.resident = false;
    mem_be_used_ -= v.spec.memory_units;
    ++v.rec.preemptions;
    std::erase(be_active_, v.spec.id);
    be_queue_.push_front(v.spec.id);
    debug_line("{\"event\":\"preempt\",\"id\":\"" + v.spec.id + "\"}");
  }
}

bool ReplicaSim::load_best_effort(Req& r) {
  if (mem_standard_used_ + mem_be_used_ + r.spec.memory_units > cfg_.memory_units)
    return false;
  mem_be_used_ += r.spec.memory_units;
  r.resident = true;
  be_active_.push_back(r.spec.id);
  return true;
}

ScheduleInput ReplicaSim::snapshot() {
  ScheduleInput in;
  in.now = now_;
  in.memory_total = standard_pool_;
  in.memory_standard_resident = mem_standard_used_;
  // Plans must outlive a failed re-certification; two replan periods of
  // decode tail keep a kept plan ahead of the wake timer.
  in.tail_horizon_s = cfg_.replan_timeout_s > 0 ? 2.0 * cfg_.replan_timeout_s : 0.0;
  for (auto& [id, up] : reqs_) {
    Req& r = *up;
    if (r.done || r.best_effort || !r.admitted || r.stage_waiting) continue;
    const StageSpec& st = r.cur();
    RunningRequest rr;
    rr.id = id;
    if (st.kind == StageKind::kPrefill) {
      rr.prefill_remaining = st.tokens - r.stage_done;
      rr.prefill_deadline = r.stage_deadline;
      rr.decode_tier = st.slo_tier;
      for (int s = r.stage; s < (int)r.spec.stages.size(); ++s)
        if (r.spec.stages[s].kind == StageKind::kDecode) {
          rr.decode_tier = r.spec.stages[s].slo_tier;
          break;
        }
    } else {
      double tpot = slo_.tpot_tiers_s.at(st.slo_tier);
      int64_t dues_by_now =
          std::min<int64_t>((int64_t)std::floor((now_ - r.line_start) / tpot + kTimeEps),
                            st.tokens);
      int64_t backlog = std::max<int64_t>(0, dues_by_now - r.stage_done);
      rr.backlog = backlog;
      rr.next_due_s = r.line_start + (double)(r.stage_done + backlog + 1) * tpot;
      rr.decode_remaining = st.tokens - r.stage_done;
      int tier = st.slo_tier;
      if (backlog >= 1 && tier > 0) tier -= 1;  // tighten to catch back up
      rr.decode_tier = tier;
    }
    in.running.push_back(std::move(rr));
  }
  for (const std::string& id : pending_) {
    Req& r = *reqs_.at(id);
    const StageSpec& st = r.cur();
    PendingRequest p;
    p.id = id;
    p.prefill_deadline = r.stage_deadline;
    p.prefill_tokens = st.tokens - r.stage_done;
    p.decode_tier = r.spec.tightest_decode_tier();
    p.memory_units = r.spec.memory_units;
    p.value = r.spec.value;
    in.pending.push_back(std::move(p));
  }
  return in;
}

void ReplicaSim::apply_schedule(const ScheduleResult& res) {
  for (const std::string& id : res.admitted) {
    Req& r = *reqs_.at(id);
    evict_best_effort(r.spec.memory_units);
    mem_standard_used_ += r.spec.memory_units;
    r.admitted = true;
    r.resident = true;
    std::erase(pending_, id);
  }
  for (const std::string& id : res.declined) {
    auto it = reqs_.find(id);
    if (it == reqs_.end()) continue;
    DeclineAction act =
        on_decline_ ? on_decline_(id) : DeclineAction::kDemoteBestEffort;
    if (act == DeclineAction::kDemoteBestEffort) {
      demote_to_best_effort(*it->second);
    } else {
      std::erase(pending_, id);
      reqs_.erase(it);
    }
  }
  // deferred requests simply stay pending
}

void ReplicaSim::replan(const char* reason) {
  ScheduleInput in = snapshot();
  ScheduleResult res = scheduler_->schedule(in);
  if (res.running_set_infeasible) {
    saw_infeasible_ = true;
    if (debug_) {
      nlohmann::json j;
      j["event"] = "infeasible-running-set";
      j["now"] = now_;
      for (const RunningRequest& r : in.running) {
        nlohmann::json e;
        e["id"] = r.id;
        e["prefill_remaining"] = r.prefill_remaining;
        e["prefill_deadline"] = r.prefill_deadline;
        e["tier"] = r.decode_tier;
        e["next_due"] = r.next_due_s;
        e["backlog"] = r.backlog;
        e["decode_remaining"] = r.decode_remaining;
        j["running"].push_back(e);
      }
      for (const PendingRequest& p : in.pending) {
        nlohmann::json e;
        e["id"] = p.id;
        e["deadline"] = p.prefill_deadline;
        e["prefill"] = p.prefill_tokens;
        e["tier"] = p.decode_tier;
        e["memory"] = p.memory_units;
        j["pending"].push_back(e);
      }
      debug_line(j.dump());
    }
    // The previous plan certified every admitted line through its horizon.
    // Keep following it rather than dropping to deadline-order recovery;
    // pending requests stay queued and retry at the next replan.
    if (plan_valid_ && plan_cursor_ < plan_.batches.size()) {
      dirty_ = false;
      force_replan_ = false;
      new_since_plan_ = 0;
      finished_since_plan_ = 0;
      plan_started_ = now_;
      last_replan_now_ = now_;
      ++replan_count_;
      wake_t_ = cfg_.replan_timeout_s > 0 ? now_ + cfg_.replan_timeout_s : kInf;
      if (debug_) {
        nlohmann::json j;
        j["event"] = "plan-kept";
        j["reason"] = reason;
        j["now"] = now_;
        j["batches_left"] = plan_.batches.size() - plan_cursor_;
        debug_line(j.dump());
      }
      return;
    }
  }
  apply_schedule(res);
  plan_ = std::move(res.plan);
  plan_cursor_ = 0;
  plan_started_ = now_;
  plan_valid_ = true;
  dirty_ = false;
  force_replan_ = false;
  new_since_plan_ = 0;
  finished_since_plan_ = 0;
  last_replan_now_ = now_;
  ++replan_count_;
  wake_t_ = cfg_.replan_timeout_s > 0 ? now_ + cfg_.replan_timeout_s : kInf;
  if (debug_) {
    nlohmann::json j;
    j["event"] = "plan";
    j["reason"] = reason;
    j["now"] = now_;
    j["admitted"] = res.admitted;
    j["declined"] = res.declined;
    j["batches"] = plan_.batches.size();
    j["exact_until"] = plan_.exact_until_s;
    debug_line(j.dump());
  }
}

// True when a best-effort batch issued right now would grant tokens:
// either a resident request has serviceable work, or the queue head fits
// in memory. Queue order is FIFO, so only the head matters.
bool ReplicaSim::be_runnable() const {
  for (const std::string& id : be_active_) {
    const Req& r = *reqs_.at(id);
    if (r.done || r.stage_waiting) continue;
    if (r.recover_left > 0) return true;
    if (r.stage_done < r.cur().tokens) return true;
  }
  for (const std::string& id : be_queue_) {
    const Req& r = *reqs_.at(id);
    if (r.done) continue;
    return mem_standard_used_ + mem_be_used_ + r.spec.memory_units <= cfg_.memory_units;
  }
  return false;
}

bool ReplicaSim::work_exists() const {
  if (!pending_.empty() || !be_queue_.empty() || !be_active_.empty()) return true;
  for (const auto& [id, up] : reqs_) {
    const Req& r = *up;
    if (r.done || r.stage_waiting) continue;
    if (r.admitted || r.best_effort) return true;
  }
  return false;
}

int64_t ReplicaSim::best_effort_fill(int64_t free_cap, int64_t chunk_cap,
                                     std::vector<std::pair<Req*, int64_t>>* decode_grants,
                                     std::vector<std::pair<Req*, int64_t>>* prefill_grants) {
  int64_t used = 0;
  int64_t budget_prefill = std::min(free_cap, chunk_cap);
  while (budget_prefill > 0 && !be_queue_.empty()) {
    Req& r = *reqs_.at(be_queue_.front());
    if (r.done) {
      be_queue_.pop_front();
      continue;
    }
    if (!load_best_effort(r)) break;
    be_queue_.pop_front();
  }
  for (const std::string& id : be_active_) {
    if (budget_prefill <= 0) break;
    Req& r = *reqs_.at(id);
    if (r.done || r.stage_waiting) continue;
    int64_t want = 0;
    if (r.recover_left > 0)
      want = r.recover_left;
    else if (r.cur().kind == StageKind::kPrefill)
      want = r.cur().tokens - r.stage_done;
    if (want <= 0) continue;
    int64_t take = std::min(want, budget_prefill);
    prefill_grants->push_back({&r, take});
    budget_prefill -= take;
    used += take;
  }
  int64_t budget_decode = free_cap - used;
  for (const std::string& id : be_active_) {
    if (budget_decode <= 0) break;
    Req& r = *reqs_.at(id);
    if (r.done || r.stage_waiting || r.recover_left > 0) continue;
    if (r.cur().kind != StageKind::kDecode) continue;
    if (r.stage_done >= r.cur().tokens) continue;
    decode_grants->push_back({&r, 1});
    budget_decode -= 1;
    used += 1;
  }
  return used;
}

void ReplicaSim::execute_batch(const PlanBatch& b) {
  now_ = std::max(now_, b.start_s);

  struct Commit {
    Req* r;
    int64_t prefill = 0;
    int64_t decode_alloc = 0;
    int64_t decode_accept = 0;
    bool recover = false;
  };
  std::vector<Commit> commits;
  std::map<std::string, size_t> slot;
  auto commit_for = [&](Req* r) -> Commit& {
    auto [it, fresh] = slot.try_emplace(r->spec.id, commits.size());
    if (fresh) commits.push_back({r, 0, 0, 0, false});
    return commits[it->second];
  };

  int64_t std_tokens = 0;
  int64_t spec_step = 0;
  for (const PlanEntry& e : b.entries) {
    auto it = reqs_.find(e.id);
    if (it == reqs_.end()) continue;
    Req& r = *it->second;
    if (r.done || r.stage_waiting) continue;
    Commit& c = commit_for(&r);
    if (e.prefill_tokens > 0 && r.cur().kind == StageKind::kPrefill) {
      int64_t left = r.cur().tokens - r.stage_done - c.prefill;
      int64_t take = std::min(e.prefill_tokens, left);
      if (take > 0) {
        c.prefill += take;
        std_tokens += take;
      }
    }
    if (e.decode_tokens > 0 && r.cur().kind == StageKind::kDecode) {
      int64_t left = r.cur().tokens - r.stage_done - c.decode_accept;
      int64_t alloc = std::min(e.decode_tokens, left);
      if (alloc <= 0) continue;
      int64_t accepted = alloc;
      if (e.spec_len > 0 && cfg_.speculative && cfg_.spec_alpha < 1.0) {
        accepted = 1;
        std::bernoulli_distribution keep(cfg_.spec_alpha);
        while (accepted < alloc && keep(rng_)) ++accepted;
      }
      c.decode_alloc += alloc;
      c.decode_accept += accepted;
      std_tokens += alloc;
      if (e.spec_len > 0) spec_step = std::max(spec_step, alloc);
    }
  }

  // leftover capacity serves the best-effort tier
  int64_t cap = std::max(b.capacity_tokens, std_tokens);
  int64_t free_cap = cap - std_tokens;
  std::vector<std::pair<Req*, int64_t>> be_decode, be_prefill;
  int64_t be_tokens = 0;
  if (free_cap > 0 && (!be_queue_.empty() || !be_active_.empty()))
    be_tokens = best_effort_fill(free_cap, cfg_.max_chunk_tokens, &be_decode, &be_prefill);

  int64_t total = std_tokens + be_tokens;
  if (total == 0) {
    ++plan_cursor_;
    return;  // idle slot, no time consumed beyond pacing
  }

  double dur = model_.predict(total, spec_step);
  if (cfg_.noise > 0) {
    std::uniform_real_distribution<double> u(-cfg_.noise, cfg_.noise);
    dur *= 1.0 + u(rng_);
  }
  double te = now_ + dur;
  now_ = te;
  ++batch_count_;

  for (Commit& c : commits) {
    Req& r = *c.r;
    if (c.prefill > 0) {
      r.stage_done += c.prefill;
      if (r.stage_done >= r.cur().tokens) finish_prefill_stage(r, te);
    }
    if (c.decode_accept > 0 && !r.done && r.cur().kind == StageKind::kDecode)
      emit_decode(r, c.decode_accept, te);
  }
  for (auto& [rp, take] : be_prefill) {
    Req& r = *rp;
    if (r.done) continue;
    if (r.recover_left > 0) {
      int64_t rec = std::min(take, r.recover_left);
      r.recover_left -= rec;
      take -= rec;
    }
    if (take > 0 && r.cur().kind == StageKind::kPrefill) {
      r.stage_done += take;
      if (r.stage_done >= r.cur().tokens) finish_prefill_stage(r, te);
    }
  }
  for (auto& [rp, tok] : be_decode) {
    Req& r = *rp;
    if (r.done || r.cur().kind != StageKind::kDecode) continue;
    emit_decode(r, tok, te);
  }
  dirty_ = true;
  ++plan_cursor_;
}

std::optional<PlanBatch> ReplicaSim::synth_best_effort_batch() const {
  if (!be_runnable()) return std::nullopt;

  double window = kInf;
  if (plan_valid_ && plan_cursor_ < plan_.batches.size()) {
    double bs = plan_.batches[plan_cursor_].start_s;
    // a stale plan gets rebuilt at the exact boundary; never run past it
    bool stale = bs >= plan_.exact_until_s - kTimeEps && plan_.exact_until_s > now_ + kTimeEps;
    window = std::max(0.0, (stale ? plan_.exact_until_s : bs) - now_);
  }
  if (!events_.empty()) window = std::min(window, std::max(0.0, events_.top().t - now_));
  // overrunning the replan wake only matters while admissions wait on it
  if (!pending_.empty()) window = std::min(window, std::max(0.0, wake_t_ - now_));
  if (window <= kTimeEps) return std::nullopt;

  // derated sizing keeps noisy best-effort batches inside the idle window
  int64_t cap;
  if (window == kInf) {
    cap = cfg_.max_chunk_tokens;
  } else {
    if (planner_->plan_predict(1, 0) > window) return std::nullopt;
    cap = std::min(planner_->plan_time2bs(window, 0), cfg_.max_chunk_tokens);
  }
  if (cap <= 0) return std::nullopt;
  PlanBatch b;
  b.start_s = now_;
  b.end_s = now_ + (window == kInf ? model_.predict(cap, 0) : window);
  b.capacity_tokens = cap;
  b.prefill_budget_left = cap;
  return b;
}

void ReplicaSim::handle_due_events() {
  while (!events_.empty() && events_.top().t <= now_ + kTimeEps) {
    Ev ev = events_.top();
    events_.pop();
    auto it = reqs_.find(ev.id);
    if (it == reqs_.end() || it->second->done) continue;
    Req& r = *it->second;
    if (!r.stage_waiting) continue;
    start_stage(r, ev.t);
    force_replan_ = true;
    dirty_ = true;
  }
}

double ReplicaSim::next_time() const {
  if (!events_.empty() && events_.top().t <= now_ + kTimeEps) return now_;
  bool progressed = dirty_ || now_ > last_replan_now_ + kTimeEps;
  bool have_batch = plan_valid_ && plan_cursor_ < plan_.batches.size();
  double bt = kInf;
  bool batch_stale = false;
  if (have_batch) {
    bt = std::max(now_, plan_.batches[plan_cursor_].start_s);
    batch_stale = bt >= plan_.exact_until_s - kTimeEps &&
                  plan_.exact_until_s > now_ + kTimeEps;
  }
  if (progressed) {
    if (!plan_valid_ && work_exists()) return now_;
    if (plan_valid_) {
      if (force_replan_ || new_since_plan_ >= cfg_.replan_new_threshold ||
          finished_since_plan_ >= cfg_.replan_finished_threshold)
        return now_;
      if (now_ - plan_started_ >= cfg_.replan_timeout_s - kTimeEps && work_exists())
        return now_;
      if (!have_batch && work_exists()) return now_;
      if (have_batch && batch_stale) return now_;
    }
  }
  if (synth_best_effort_batch()) return now_;
  if (have_batch && !batch_stale) return bt;
  double t = kInf;
  if (!events_.empty()) t = std::min(t, events_.top().t);
  if (have_batch && batch_stale) t = std::min(t, plan_.exact_until_s);
  // the replan wake re-offers deferred admissions; otherwise it is inert
  if (!pending_.empty()) t = std::min(t, wake_t_);
  return t;
}

void ReplicaSim::advance_to(double t) {
  int guard = 0;
  while (true) {
    if (++guard > 50000000) fail("internal-inconsistency", "simulation stuck");
    handle_due_events();

    bool progressed = dirty_ || now_ > last_replan_now_ + kTimeEps;
    bool have_batch = plan_valid_ && plan_cursor_ < plan_.batches.size();
    double bt = have_batch ? std::max(now_, plan_.batches[plan_cursor_].start_s) : kInf;
    bool batch_stale =
        have_batch && bt >= plan_.exact_until_s - kTimeEps && plan_.exact_until_s > now_ + kTimeEps;

    const char* reason = nullptr;
    if (progressed) {
      if (!plan_valid_) {
        if (work_exists()) reason = "initial";
      } else if (force_replan_) {
        reason = "stage-available";
      } else if (new_since_plan_ >= cfg_.replan_new_threshold) {
        reason = "new-requests";
      } else if (finished_since_plan_ >= cfg_.replan_finished_threshold) {
        reason = "finished";
      } else if (now_ - plan_started_ >= cfg_.replan_timeout_s - kTimeEps && work_exists()) {
        reason = "timeout";
      } else if (!have_batch && work_exists()) {
        reason = "exhausted";
      } else if (have_batch && batch_stale) {
        reason = "boundary";
      }
    }
    if (reason) {
      replan(reason);
      continue;
    }

    double ev_t = events_.empty() ? kInf : events_.top().t;
    if (!pending_.empty()) ev_t = std::min(ev_t, wake_t_);
    // next standard batch, unless it sits past the exact boundary
    double act_t = (have_batch && !batch_stale) ? bt : kInf;

    // best effort runs in idle windows at `now`
    if (act_t > now_ + kTimeEps || !have_batch || batch_stale) {
      if (auto synth = synth_best_effort_batch()) {
        if (synth->start_s <= t) {
          size_t keep = plan_cursor_;  // synth executes without consuming the plan
          int64_t before = batch_count_;
          PlanBatch sb = *synth;
          execute_batch(sb);
          plan_cursor_ = keep;
          if (batch_count_ > before) continue;
          // zero grants: fall through and let time flow to the next event
        }
      }
    }

    double idle_t = std::min(ev_t, act_t);
    if (batch_stale) idle_t = std::min(idle_t, plan_.exact_until_s);
    if (idle_t == kInf) {
      now_ = std::max(now_, t);
      return;
    }
    if (idle_t > t + kTimeEps) {
      now_ = std::max(now_, t);
      return;
    }
    if (ev_t <= idle_t + kTimeEps && ev_t <= act_t) {
      now_ = std::max(now_, ev_t);
      continue;  // events handled at loop top
    }
    if (have_batch && !batch_stale && act_t <= t + kTimeEps) {
      execute_batch(plan_.batches[plan_cursor_]);
      continue;
    }
    // stale batch: let time flow to the boundary, a replan follows
    now_ = std::max(now_, idle_t);
  }
}

bool ReplicaSim::drained() const { return !work_exists() && events_.empty(); }

std::vector<RequestRecord> ReplicaSim::finalize() {
  std::vector<RequestRecord> out;
  out.reserve(reqs_.size());
  for (auto& [id, up] : reqs_) out.push_back(up->rec);
  std::sort(out.begin(), out.end(), [](const RequestRecord& a, const RequestRecord& b) {
    if (a.arrival_s != b.arrival_s) return a.arrival_s < b.arrival_s;
    return a.id < b.id;
  });
  return out;
}

}  // namespace slosim
