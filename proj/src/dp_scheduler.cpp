#include "slosim/dp_scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <tuple>

#include <nlohmann/json.hpp>

#include "slosim/common.hpp"

namespace slosim {
namespace {

struct ChainItem {
  bool forced = false;
  std::string id;
  double deadline = 0.0;
  int64_t prefill = 0;
  int tier = 0;
  int64_t memory = 0;
  double value = 0.0;
};

// Admitted decode-line counts packed per tier, 8 bits each.
uint64_t pack_add(uint64_t counts, int tier) { return counts + (uint64_t{1} << (8 * tier)); }
int64_t pack_get(uint64_t counts, int tier) { return (counts >> (8 * tier)) & 0xff; }

std::vector<int64_t> unpack_counts(uint64_t counts, int num_tiers) {
  std::vector<int64_t> out(num_tiers, 0);
  for (int l = 0; l < num_tiers; ++l) out[l] = pack_get(counts, l);
  return out;
}

struct DpState {
  int item = -1;  // chain index, -1 for the start state
  uint64_t counts = 0;
  int64_t mem = 0;
  int64_t pb = 0;
  double value = 0.0;
  int n_admitted = 0;
  int parent = -1;
};

constexpr double kValueEps = 1e-9;

// Exact decode-line view of the running set at absolute time `at`. Dues
// through `at + pull_s` count as served early by the gap ending at `at`
// (its batches all end by `at`, before those dues), so backlog survives
// only when `at` is the schedule instant itself. At the schedule instant
// a due closer than `pull_s` cannot be met on time by any batch; it folds
// into backlog and is served as soon as possible instead.
std::vector<DecodeMember> members_at(const std::vector<RunningRequest>& running,
                                     const SloConfig& slo, double now, double at,
                                     double pull_s) {
  std::vector<DecodeMember> out;
  for (size_t i = 0; i < running.size(); ++i) {
    const RunningRequest& r = running[i];
    if (r.prefill_remaining > 0 || r.decode_remaining <= 0) continue;
    double tpot = slo.tpot_tiers_s.at(r.decode_tier);
    int64_t remaining = r.decode_remaining;
    int64_t backlog = std::min(r.backlog, remaining);
    double next = r.next_due_s;
    if (at > now + kTimeEps) {
      int64_t served = backlog;
      backlog = 0;
      if (time_le(next, at + pull_s)) {
        int64_t k = (int64_t)std::floor((at + pull_s - next) / tpot + kTimeEps) + 1;
        served += k;
        next += (double)k * tpot;
      }
      remaining -= std::min(served, remaining);
      if (remaining <= 0) continue;
    } else {
      while (backlog < remaining && time_lt(next - at, pull_s)) {
        backlog += 1;
        next += tpot;
      }
    }
    DecodeMember m;
    m.tier = r.decode_tier;
    m.phase_s = std::max(next - at, 0.0);
    m.backlog = backlog;
    m.remaining = remaining;
    m.owner = (int)i;
    out.push_back(m);
  }
  return out;
}

// Best-possible plan for an infeasible running set: every slot serves all
// line dues (stretching past the cadence when overloaded) and leftover
// capacity goes to the earliest-deadline prefill.
SchedulePlan edf_fallback(const ScheduleInput& in, const BatchPlanner& planner) {
  const SloConfig& slo = planner.slo();
  struct Pre {
    size_t idx;
    double ddl;
    int64_t left;
  };
  struct Dec {
    size_t idx;
    double tpot;
    double next;
    int64_t backlog;
    int64_t left;
  };
  std::vector<Pre> pre;
  std::vector<Dec> dec;
  for (size_t i = 0; i < in.running.size(); ++i) {
    const RunningRequest& r = in.running[i];
    if (r.prefill_remaining > 0) {
      pre.push_back({i, r.prefill_deadline, r.prefill_remaining});
    } else if (r.decode_remaining > 0) {
      dec.push_back({i, slo.tpot_tiers_s.at(r.decode_tier), r.next_due_s,
                     std::min(r.backlog, r.decode_remaining), r.decode_remaining});
    }
  }
  std::stable_sort(pre.begin(), pre.end(), [&](const Pre& a, const Pre& b) {
    if (std::abs(a.ddl - b.ddl) > kTimeEps) return a.ddl < b.ddl;
    return in.running[a.idx].id < in.running[b.idx].id;
  });
  double t0 = 0.0;
  for (const Dec& d : dec) t0 = (t0 == 0.0) ? d.tpot : std::min(t0, d.tpot);

  SchedulePlan plan;
  double t = in.now;
  const int64_t chunk_cap = planner.config().max_chunk_tokens;
  for (int guard = 0; guard < 100000; ++guard) {
    bool prefills = std::any_of(pre.begin(), pre.end(), [](const Pre& p) { return p.left > 0; });
    bool decodes = std::any_of(dec.begin(), dec.end(), [](const Dec& d) { return d.left > 0; });
    if (!prefills && !decodes) break;
    PlanBatch b;
    b.start_s = t;
    int64_t dtok = 0;
    if (decodes) {
      double slot_end = t + t0;
      for (Dec& d : dec) {
        if (d.left <= 0) continue;
        int64_t due = std::min(d.backlog, d.left);
        d.backlog -= due;
        while (d.left - due > 0 && time_le(d.next, slot_end)) {
          ++due;
          d.next += d.tpot;
        }
        if (due > 0) {
          d.left -= due;
          b.entries.push_back({in.running[d.idx].id, 0, due, 0});
          dtok += due;
        }
      }
      int64_t cap = planner.plan_time2bs(t0, 0);
      int64_t free = std::max<int64_t>(0, std::min(cap - dtok, chunk_cap));
      int64_t spent = 0;
      for (Pre& p : pre) {
        if (free - spent <= 0) break;
        if (p.left <= 0) continue;
        int64_t s = std::min(p.left, free - spent);
        p.left -= s;
        spent += s;
        b.entries.push_back({in.running[p.idx].id, s, 0, 0});
      }
      int64_t total = dtok + spent;
      double dur = std::max(t0, total > 0 ? planner.plan_predict(total, 0) : 0.0);
      b.end_s = t + dur;
      b.capacity_tokens = std::max(cap, total);
      b.prefill_budget_left = std::max<int64_t>(0, free - spent);
    } else {
      int64_t spent = 0;
      for (Pre& p : pre) {
        if (chunk_cap - spent <= 0) break;
        if (p.left <= 0) continue;
        int64_t s = std::min(p.left, chunk_cap - spent);
        p.left -= s;
        spent += s;
        b.entries.push_back({in.running[p.idx].id, s, 0, 0});
      }
      b.end_s = t + planner.plan_predict(spent, 0);
      b.capacity_tokens = spent;
    }
    t = b.end_s;
    plan.batches.push_back(std::move(b));
  }
  plan.exact_until_s = t;
  return plan;
}

// Turn a selected chain into concrete batches: tile every inter-deadline
// gap, hand exact decode tokens to their owners, track each chain line
// on its true due grid once its deadline passes, and fill prefill budget
// earliest-deadline-first. The budget DP certified the gaps with the
// canonical census, so the exact build can still come up short; that
// surfaces as *tail_infeasible and the caller keeps its previous plan.
SchedulePlan build_plan(const ScheduleInput& in, const BatchPlanner& planner,
                        const std::vector<ChainItem>& chain, const std::vector<int>& sel,
                        bool* tail_infeasible) {
  const SloConfig& slo = planner.slo();
  int num_tiers = (int)slo.tpot_tiers_s.size();
  const double pull = planner.min_slot_s();
  *tail_infeasible = false;

  struct Member {
    const ChainItem* item;
    int64_t prefill_left;
    int64_t decode_assigned = 0;
  };
  std::vector<Member> mem;
  mem.reserve(sel.size());
  for (int ci : sel) mem.push_back({&chain[ci], chain[ci].prefill, 0});

  std::vector<double> bounds{in.now};
  for (const Member& m : mem)
    if (m.item->deadline > bounds.back() + kTimeEps) bounds.push_back(m.item->deadline);

  SchedulePlan plan;
  size_t edf = 0;
  bool fill_late = false;
  auto fill_prefill = [&](PlanBatch& b, int64_t budget) {
    while (budget > 0) {
      while (edf < mem.size() && mem[edf].prefill_left == 0) ++edf;
      if (edf == mem.size()) break;
      Member& m = mem[edf];
      int64_t spend = std::min(budget, m.prefill_left);
      m.prefill_left -= spend;
      budget -= spend;
      if (m.prefill_left == 0 && b.end_s > m.item->deadline + kTimeEps) fill_late = true;
      b.entries.push_back({m.item->id, spend, 0, 0});
    }
    b.prefill_budget_left = budget;
  };

  // Chain lines whose deadline passed enter each gap as exact members on
  // their true due grid, owner-tagged past the running array. A due inside
  // the minimum batch window could not have been granted by the previous
  // gap's batches, so it folds into backlog.
  auto chain_member = [&](size_t mi, double a, double span) {
    const Member& m = mem[mi];
    double tpot = slo.tpot_tiers_s[m.item->tier];
    DecodeMember e;
    e.tier = m.item->tier;
    e.remaining = (int64_t)std::ceil(span / tpot) + 2;
    double next = m.item->deadline + (double)(m.decode_assigned + 1) * tpot;
    while (e.backlog < e.remaining && time_lt(next - a, pull)) {
      e.backlog += 1;
      next += tpot;
    }
    e.phase_s = next - a;
    e.owner = (int)(in.running.size() + mi);
    return e;
  };
  auto entry_id = [&](int owner) -> const std::string& {
    return owner < (int)in.running.size() ? in.running[owner].id
                                          : mem[owner - in.running.size()].item->id;
  };
  auto entry_tier = [&](int owner) {
    return owner < (int)in.running.size() ? in.running[owner].decode_tier
                                          : mem[owner - in.running.size()].item->tier;
  };

  for (size_t k = 0; k + 1 < bounds.size(); ++k) {
    double a = bounds[k];
    double raw = bounds[k + 1] - a;
    double len = BatchPlanner::quantize_gap(raw);
    DecodeCensus census;
    census.exact = members_at(in.running, slo, in.now, a, pull);
    census.counts_per_tier.assign(num_tiers, 0);
    for (size_t mi = 0; mi < mem.size(); ++mi)
      if (mem[mi].item->deadline <= a + kTimeEps)
        census.exact.push_back(chain_member(mi, a, raw + pull));
    auto gp = planner.tile_gap(len, census, raw + pull);
    if (!gp) {
      *tail_infeasible = true;
      return plan;
    }
    for (const PlannedBatch& pb : gp->batches) {
      PlanBatch out;
      out.start_s = a + pb.start_s;
      out.end_s = a + pb.end_s;
      out.capacity_tokens = pb.capacity_tokens;
      out.spec_step = pb.spec_step;
      bool spec_batch = pb.spec_step > 0 && !gp->spec_lengths.empty();
      for (const auto& [owner, tok] : pb.decode_by_owner) {
        int sl = spec_batch ? gp->spec_lengths[entry_tier(owner)] : 0;
        if (owner >= (int)in.running.size())
          mem[owner - in.running.size()].decode_assigned += tok;
        out.entries.push_back({entry_id(owner), 0, tok, sl});
      }
      fill_prefill(out, pb.prefill_budget);
      plan.batches.push_back(std::move(out));
    }
  }
  bool shortfall = fill_late;
  for (const Member& m : mem)
    if (m.prefill_left > 0) shortfall = true;
  if (shortfall) {
    *tail_infeasible = true;
    return plan;
  }

  // Decode tail past the last deadline, on the same exact per-line grids
  // as the gaps.
  double t_last = bounds.back();
  DecodeCensus tail;
  tail.exact = members_at(in.running, slo, in.now, t_last, pull);
  tail.counts_per_tier.assign(num_tiers, 0);
  double tail_len = 0.0;
  double max_tpot = 0.0;
  for (double tp : slo.tpot_tiers_s) max_tpot = std::max(max_tpot, tp);
  for (const DecodeMember& m : tail.exact) {
    double tpot = slo.tpot_tiers_s[m.tier];
    tail_len = std::max(tail_len, m.phase_s + (double)m.remaining * tpot);
  }
  if (!mem.empty() || in.tail_horizon_s > kTimeEps) {
    // Trim the tail for tractability, but keep it long enough that a kept
    // plan outlives a failed re-certification and never below one due per
    // member: a plan granting every line its next token always progresses.
    double cap = std::max(2.0 * max_tpot, in.tail_horizon_s);
    for (const DecodeMember& m : tail.exact) {
      if (m.remaining <= 0) continue;
      cap = std::max(cap, m.phase_s + slo.tpot_tiers_s[m.tier]);
    }
    tail_len = std::min(tail_len, cap);
  }
  for (size_t mi = 0; mi < mem.size(); ++mi)
    tail.exact.push_back(chain_member(mi, t_last, tail_len));
  double tlen = BatchPlanner::quantize_gap(tail_len);
  if (tlen > kTimeEps && !tail.exact.empty()) {
    auto gp = planner.tile_gap(tlen, tail, tail_len);
    if (!gp) {
      *tail_infeasible = true;
    } else {
      for (const PlannedBatch& pb : gp->batches) {
        PlanBatch out;
        out.start_s = t_last + pb.start_s;
        out.end_s = t_last + pb.end_s;
        out.capacity_tokens = pb.capacity_tokens;
        out.spec_step = pb.spec_step;
        bool spec_batch = pb.spec_step > 0 && !gp->spec_lengths.empty();
        for (const auto& [owner, tok] : pb.decode_by_owner) {
          int sl = spec_batch ? gp->spec_lengths[entry_tier(owner)] : 0;
          out.entries.push_back({entry_id(owner), 0, tok, sl});
        }
        fill_prefill(out, pb.prefill_budget);  // best-effort budget surfaced
        plan.batches.push_back(std::move(out));
      }
    }
  }
  // Every decode line is tracked exactly through the last batch, so the
  // whole plan is valid until new work arrives.
  plan.exact_until_s = plan.batches.empty() ? in.now : plan.batches.back().end_s;
  return plan;
}

}  // namespace

SloScheduler::SloScheduler(const BatchPlanner& planner) : planner_(planner) {}

ScheduleResult SloScheduler::schedule(const ScheduleInput& in) { return run(in, false); }

ScheduleResult SloScheduler::schedule_throughput(const ScheduleInput& in) { return run(in, true); }

ScheduleResult SloScheduler::run(const ScheduleInput& in, bool unit_value) {
  const SloConfig& slo = planner_.slo();
  int num_tiers = (int)slo.tpot_tiers_s.size();
  if (num_tiers > 8) fail("invalid-parameters", "at most 8 SLO tiers supported");

  std::vector<ChainItem> chain;
  for (const RunningRequest& r : in.running) {
    if (r.prefill_remaining <= 0) continue;
    ChainItem it;
    it.forced = true;
    it.id = r.id;
    it.deadline = r.prefill_deadline;
    it.prefill = r.prefill_remaining;
    it.tier = r.decode_tier;
    chain.push_back(std::move(it));
  }
  for (const PendingRequest& p : in.pending) {
    ChainItem it;
    it.id = p.id;
    it.deadline = p.prefill_deadline;
    it.prefill = p.prefill_tokens;
    it.tier = p.decode_tier;
    it.memory = p.memory_units;
    it.value = unit_value ? 1.0 : p.value;
    chain.push_back(std::move(it));
  }
  if (chain.size() > 250) fail("invalid-parameters", "admission chain too large");
  for (const ChainItem& it : chain)
    if (it.tier < 0 || it.tier >= num_tiers) fail("invalid-parameters", "bad SLO tier");
  std::stable_sort(chain.begin(), chain.end(), [](const ChainItem& a, const ChainItem& b) {
    if (std::abs(a.deadline - b.deadline) > kTimeEps) return a.deadline < b.deadline;
    if (a.forced != b.forced) return a.forced;
    return a.id < b.id;
  });

  int last_forced = -1;
  std::vector<int> floor_at(chain.size(), -1);
  for (int i = 0; i < (int)chain.size(); ++i) {
    floor_at[i] = last_forced;
    if (chain[i].forced) last_forced = i;
  }
  std::vector<int64_t> suffix_prefill(chain.size() + 1, 0);
  for (int i = (int)chain.size() - 1; i >= 0; --i)
    suffix_prefill[i] = suffix_prefill[i + 1] + chain[i].prefill;
  int64_t mem_budget = in.memory_total - in.memory_standard_resident;

  // Gap budget with memoization. Pure-canonical gaps route through the
  // planner's context-free memo; gaps with exact members key on the gap
  // start and raw length in microseconds, valid for this call only.
  const double pull = planner_.min_slot_s();
  std::map<std::tuple<int64_t, int64_t, uint64_t>, std::optional<int64_t>> memo;
  bool have_running_decode = false;
  for (const RunningRequest& r : in.running)
    if (r.prefill_remaining <= 0 && r.decode_remaining > 0) have_running_decode = true;
  auto gap_budget = [&](double a, double b, uint64_t counts) -> std::optional<int64_t> {
    double raw = std::max(0.0, b - a);
    double len = BatchPlanner::quantize_gap(raw);
    if (!have_running_decode)
      return planner_.prefill_budget(len, unpack_counts(counts, num_tiers));
    int64_t a_us = llround(a * 1e6);
    int64_t raw_us = llround(raw * 1e6);
    auto key = std::make_tuple(a_us, raw_us, counts);
    auto itf = memo.find(key);
    if (itf != memo.end()) return itf->second;
    DecodeCensus census;
    census.counts_per_tier = unpack_counts(counts, num_tiers);
    census.exact = members_at(in.running, slo, in.now, a, pull);
    auto gp = planner_.tile_gap(len, census, raw + pull);
    std::optional<int64_t> res;
    if (gp) res = gp->prefill_budget;
    memo.emplace(std::move(key), res);
    return res;
  };

  std::vector<DpState> arena;
  arena.push_back(DpState{});
  std::map<std::pair<int, uint64_t>, std::vector<int>> buckets;
  buckets[{-1, 0}] = {0};
  std::vector<std::vector<int>> states_at(chain.size() + 1);
  states_at[0] = {0};

  auto try_insert = [&](const DpState& st) {
    auto& vec = buckets[{st.item, st.counts}];
    for (int idx : vec) {
      const DpState& e = arena[idx];
      if (e.value >= st.value - kValueEps && e.mem <= st.mem && e.pb >= st.pb) {
        bool equal = std::abs(e.value - st.value) <= kValueEps && e.mem == st.mem && e.pb == st.pb;
        if (!equal || e.n_admitted >= st.n_admitted) return;
      }
    }
    vec.erase(std::remove_if(vec.begin(), vec.end(),
                             [&](int idx) {
                               const DpState& e = arena[idx];
                               return st.value >= e.value - kValueEps && st.mem <= e.mem &&
                                      st.pb >= e.pb;
                             }),
              vec.end());
    int id = (int)arena.size();
    arena.push_back(st);
    vec.push_back(id);
    states_at[st.item + 1].push_back(id);
  };

  for (int i = 0; i < (int)chain.size(); ++i) {
    const ChainItem& it = chain[i];
    for (int j = floor_at[i]; j < i; ++j) {
      // Snapshot: try_insert appends to states_at[i + 1] only (i > j).
      const std::vector<int>& src = states_at[j + 1];
      for (size_t si = 0; si < src.size(); ++si) {
        DpState s = arena[src[si]];
        // Pruned states linger in states_at; skip those no longer in their bucket.
        {
          const auto& bv = buckets[{s.item, s.counts}];
          if (std::find(bv.begin(), bv.end(), src[si]) == bv.end()) continue;
        }
        double t_j = (j < 0) ? in.now : chain[j].deadline;
        auto dpb = gap_budget(t_j, it.deadline, s.counts);
        if (!dpb) continue;
        int64_t avail = s.pb + *dpb;
        if (avail < it.prefill) continue;
        DpState ns;
        ns.item = i;
        ns.counts = pack_add(s.counts, it.tier);
        if (pack_get(ns.counts, it.tier) > 250)
          fail("internal-inconsistency", "tier count overflow");
        if (it.forced) {
          ns.mem = s.mem;
        } else {
          ns.mem = s.mem + it.memory;
          if (ns.mem > mem_budget) continue;
        }
        ns.pb = std::min(avail - it.prefill, suffix_prefill[i + 1]);
        ns.value = s.value + (it.forced ? 0.0 : it.value);
        ns.n_admitted = s.n_admitted + (it.forced ? 0 : 1);
        ns.parent = src[si];
        try_insert(ns);
      }
    }
  }

  // Terminal states: chains that passed every forced item.
  int best = -1;
  auto better = [&](int a, int b) {
    const DpState& x = arena[a];
    const DpState& y = arena[b];
    if (std::abs(x.value - y.value) > kValueEps) return x.value > y.value;
    if (x.n_admitted != y.n_admitted) return x.n_admitted > y.n_admitted;
    if (x.mem != y.mem) return x.mem < y.mem;
    if (x.pb != y.pb) return x.pb > y.pb;
    return a < b;
  };
  for (int item = std::max(last_forced, -1); item < (int)chain.size(); ++item) {
    if (item == -1 && last_forced != -1) continue;
    for (int idx : states_at[item + 1]) {
      const auto& bv = buckets[{arena[idx].item, arena[idx].counts}];
      if (std::find(bv.begin(), bv.end(), idx) == bv.end()) continue;
      if (best < 0 || better(idx, best)) best = idx;
    }
  }

  ScheduleResult out;
  if (best < 0) {
    out.running_set_infeasible = true;
    for (const PendingRequest& p : in.pending) out.declined.push_back(p.id);
    out.plan = edf_fallback(in, planner_);
    return out;
  }

  std::vector<int> sel;
  for (int s = best; s > 0; s = arena[s].parent) sel.push_back(arena[s].item);
  std::reverse(sel.begin(), sel.end());

  std::vector<bool> in_chain(chain.size(), false);
  for (int ci : sel) in_chain[ci] = true;
  for (int ci : sel)
    if (!chain[ci].forced) {
      out.admitted.push_back(chain[ci].id);
      out.admitted_value += chain[ci].value;
    }
  for (int i = 0; i < (int)chain.size(); ++i)
    if (!chain[i].forced && !in_chain[i]) out.declined.push_back(chain[i].id);

  bool tail_infeasible = false;
  out.plan = build_plan(in, planner_, chain, sel, &tail_infeasible);
  if (tail_infeasible) {
    // The running decode lines themselves cannot hold cadence; surface the
    // condition and fall back to the best-possible serve order.
    ScheduleResult fb;
    fb.running_set_infeasible = true;
    for (const PendingRequest& p : in.pending) fb.declined.push_back(p.id);
    fb.plan = edf_fallback(in, planner_);
    return fb;
  }
  return out;
}

std::string plan_to_json(const ScheduleResult& result, double now) {
  nlohmann::json j;
  j["now_s"] = now;
  j["admitted"] = result.admitted;
  j["declined"] = result.declined;
  j["deferred"] = result.deferred;
  j["admitted_value"] = result.admitted_value;
  j["running_set_infeasible"] = result.running_set_infeasible;
  j["exact_until_s"] = result.plan.exact_until_s;
  nlohmann::json batches = nlohmann::json::array();
  for (const PlanBatch& b : result.plan.batches) {
    nlohmann::json jb;
    jb["start_s"] = b.start_s;
    jb["end_s"] = b.end_s;
    jb["capacity_tokens"] = b.capacity_tokens;
    jb["spec_step"] = b.spec_step;
    jb["prefill_budget_left"] = b.prefill_budget_left;
    nlohmann::json es = nlohmann::json::array();
    for (const PlanEntry& e : b.entries) {
      es.push_back({{"id", e.id},
                    {"prefill", e.prefill_tokens},
                    {"decode", e.decode_tokens},
                    {"spec_len", e.spec_len}});
    }
    jb["entries"] = std::move(es);
    batches.push_back(std::move(jb));
  }
  j["batches"] = std::move(batches);
  return j.dump();
}

}  // namespace slosim
