#include "slosim/batch_planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "slosim/common.hpp"

namespace slosim {

bool DecodeCensus::empty() const {
  if (!exact.empty()) return false;
  for (int64_t c : counts_per_tier)
    if (c > 0) return false;
  return true;
}

int64_t DecodeCensus::total() const {
  int64_t n = static_cast<int64_t>(exact.size());
  for (int64_t c : counts_per_tier) n += c;
  return n;
}

std::vector<int64_t> DecodeCensus::merged_counts(int num_tiers) const {
  std::vector<int64_t> out(num_tiers, 0);
  for (size_t l = 0; l < counts_per_tier.size() && l < out.size(); ++l)
    out[l] = counts_per_tier[l];
  for (const auto& m : exact) out[m.tier] += 1;
  return out;
}

double expected_accepted(double alpha, int sl) {
  if (sl < 1) fail("invalid-parameters", "speculation length must be >= 1");
  if (alpha >= 1.0) return static_cast<double>(sl);
  if (alpha <= 0.0) return 1.0;
  return (1.0 - std::pow(alpha, sl)) / (1.0 - alpha);
}

namespace {

// Smallest sl with tpot * Acc(sl) >= target, or 0 when none exists.
int min_len_covering(double tpot, double target, double alpha, int max_len) {
  for (int sl = 1; sl <= max_len; ++sl) {
    if (tpot * expected_accepted(alpha, sl) >= target - kTimeEps) return sl;
  }
  return 0;
}

}  // namespace

std::optional<SpecPlan> solve_spec_lengths(const std::vector<int64_t>& decoders_per_tier,
                                           double alpha, int max_len,
                                           const PerfModel& model, const SloConfig& slo,
                                           const PlannerConfig& cfg) {
  const int num_tiers = slo.num_tiers();
  if (static_cast<int>(decoders_per_tier.size()) != num_tiers)
    fail("invalid-parameters", "census width does not match tier count");
  if (alpha <= 0.0 || alpha > 1.0) fail("invalid-parameters", "alpha must be in (0, 1]");
  if (max_len < 1) fail("invalid-parameters", "spec_max_len must be >= 1");

  std::vector<int> present;
  for (int l = 0; l < num_tiers; ++l)
    if (decoders_per_tier[l] > 0) present.push_back(l);
  if (present.empty()) return std::nullopt;

  const double margin = 1.0 + cfg.plan_margin;
  std::optional<SpecPlan> best;
  for (int bind : present) {
    for (int sl_bind = 1; sl_bind <= max_len; ++sl_bind) {
      const double t_batch = slo.tpot_tiers_s[bind] * expected_accepted(alpha, sl_bind);
      std::vector<int> lens(num_tiers, 0);
      lens[bind] = sl_bind;
      bool ok = true;
      for (int l : present) {
        if (l == bind) continue;
        const int sl = min_len_covering(slo.tpot_tiers_s[l], t_batch, alpha, max_len);
        if (sl == 0) {
          ok = false;
          break;
        }
        lens[l] = sl;
      }
      if (!ok) continue;
      int64_t spec_step = 0, decode = 0;
      for (int l : present) {
        spec_step = std::max<int64_t>(spec_step, lens[l]);
        decode += decoders_per_tier[l] * lens[l];
      }
      if (!time_le(model.predict(1, spec_step) * margin, t_batch)) continue;
      int64_t cap = 1;
      {
        int64_t lo = 1, hi = cfg.max_batch_tokens;
        while (lo < hi) {
          const int64_t mid = lo + (hi - lo + 1) / 2;
          if (time_le(model.predict(mid, spec_step) * margin, t_batch))
            lo = mid;
          else
            hi = mid - 1;
        }
        cap = lo;
      }
      if (cap < decode) continue;
      const int64_t budget = std::min(cap - decode, cfg.max_chunk_tokens);
      const double tpt = static_cast<double>(budget) / t_batch;
      SpecPlan plan{lens, t_batch, cap, decode, tpt};
      if (!best || tpt > best->prefill_throughput + 1e-12 ||
          (std::fabs(tpt - best->prefill_throughput) <= 1e-12 &&
           (t_batch < best->batch_time_s - kTimeEps ||
            (std::fabs(t_batch - best->batch_time_s) <= kTimeEps && lens < best->lengths)))) {
        best = plan;
      }
    }
  }
  return best;
}

BatchPlanner::BatchPlanner(const PerfModel& model, const SloConfig& slo, PlannerConfig cfg)
    : model_(model), slo_(slo), cfg_(cfg) {
  slo_.validate();
  if (cfg_.max_chunk_tokens < 1 || cfg_.max_batch_tokens < 1)
    fail("invalid-parameters", "batch and chunk caps must be positive");
  if (cfg_.plan_margin < 0) fail("invalid-parameters", "plan margin must be >= 0");
}

double BatchPlanner::plan_predict(int64_t num_tokens, int64_t spec_step) const {
  return model_.predict(num_tokens, spec_step) * (1.0 + cfg_.plan_margin);
}

double BatchPlanner::min_slot_s() const { return plan_predict(1, 0); }

int64_t BatchPlanner::plan_time2bs(double budget_s, int64_t spec_step) const {
  return model_.time2bs(budget_s / (1.0 + cfg_.plan_margin), spec_step,
                        cfg_.max_batch_tokens);
}

double BatchPlanner::quantize_gap(double gap_s) {
  if (gap_s <= 0) return 0.0;
  return std::floor(gap_s * 1000.0 + 1e-6) / 1000.0;
}

namespace {

struct Due {
  double time = 0.0;
  int owner = -1;  // exact member owner, or -1 for a canonical tier member
  int tier = 0;
  bool late = false;
};

}  // namespace

std::optional<GapPlan> BatchPlanner::tile_gap_ar(double gap_s, const DecodeCensus& census,
                                                 double due_horizon_s) const {
  GapPlan plan;
  const double horizon = std::max(gap_s, due_horizon_s);
  if (gap_s <= kTimeEps) {
    bool any_due = false;
    for (const auto& m : census.exact) {
      if (m.remaining <= 0) continue;
      if (m.backlog > 0) any_due = true;
      if (horizon > kTimeEps && time_le(m.phase_s, horizon)) any_due = true;
    }
    return any_due ? std::nullopt : std::make_optional(plan);
  }
  const double min_slot = plan_predict(1, 0);

  std::vector<int> tiers_present;
  for (int l = 0; l < slo_.num_tiers(); ++l) {
    const bool canonical = l < static_cast<int>(census.counts_per_tier.size()) &&
                           census.counts_per_tier[l] > 0;
    bool exact = false;
    for (const auto& m : census.exact)
      if (m.tier == l && m.remaining > 0) exact = true;
    if (canonical || exact) tiers_present.push_back(l);
  }

  auto prefill_only = [&]() -> std::optional<GapPlan> {
    // Back-to-back chunks capped by the chunk limit.
    double t = 0.0;
    while (gap_s - t >= min_slot - kTimeEps) {
      int64_t size = plan_time2bs(gap_s - t, 0);
      size = std::min(size, cfg_.max_chunk_tokens);
      const double dur = plan_predict(size, 0);
      PlannedBatch b;
      b.start_s = t;
      b.end_s = t + dur;
      b.capacity_tokens = size;
      b.decode_per_tier.assign(slo_.num_tiers(), 0);
      b.prefill_budget = size;
      plan.batches.push_back(std::move(b));
      plan.prefill_budget += size;
      t += dur;
    }
    return plan;
  };
  if (tiers_present.empty()) return prefill_only();

  std::vector<Due> dues;
  for (size_t i = 0; i < census.exact.size(); ++i) {
    const auto& m = census.exact[i];
    int64_t issued = 0;
    for (int64_t b = 0; b < m.backlog && issued < m.remaining; ++b, ++issued)
      dues.push_back({0.0, m.owner, m.tier, true});
    const double tpot = slo_.tpot_tiers_s[m.tier];
    const double phase = std::max(m.phase_s, 0.0);
    for (double d = phase; time_le(d, horizon) && issued < m.remaining; d += tpot, ++issued) {
      if (d <= kTimeEps) {
        dues.push_back({0.0, m.owner, m.tier, true});
      } else {
        dues.push_back({d, m.owner, m.tier, false});
      }
    }
  }
  for (size_t l = 0; l < census.counts_per_tier.size(); ++l) {
    const double tpot = slo_.tpot_tiers_s[l];
    for (double d = tpot; time_le(d, gap_s); d += tpot) {
      for (int64_t c = 0; c < census.counts_per_tier[l]; ++c)
        dues.push_back({d, -1, static_cast<int>(l), false});
    }
  }
  // No due lands in the gap or its pull window: cadence is vacuous and
  // every batch is pure prefill.
  if (dues.empty()) return prefill_only();
  std::stable_sort(dues.begin(), dues.end(), [](const Due& a, const Due& b) {
    if (a.late != b.late) return a.late;
    return a.time < b.time;
  });

  double t0 = std::numeric_limits<double>::infinity();
  for (int l : tiers_present) t0 = std::min(t0, slo_.tpot_tiers_s[l]);
  if (min_slot > t0 + kTimeEps) return std::nullopt;

  // Slot ends. The first slot can shrink to an imminent exact-member due.
  double t0_first = t0;
  for (const auto& m : census.exact) {
    if (m.remaining <= 0) continue;
    if (m.phase_s > kTimeEps && m.phase_s < t0_first - kTimeEps)
      t0_first = std::max(m.phase_s, min_slot);
  }
  std::vector<double> ends;
  for (double e = t0_first; time_le(e, gap_s); e += t0) ends.push_back(e);
  if (ends.empty()) {
    if (time_le(min_slot, gap_s)) ends.push_back(gap_s);
  } else if (gap_s - ends.back() >= min_slot - kTimeEps) {
    ends.push_back(gap_s);
  }
  const int num_slots = static_cast<int>(ends.size());
  if (num_slots == 0) return std::nullopt;

  std::vector<int64_t> cap(num_slots), free_cap(num_slots);
  for (int s = 0; s < num_slots; ++s) {
    const double dur = ends[s] - (s == 0 ? 0.0 : ends[s - 1]);
    cap[s] = std::min(plan_time2bs(dur, 0), cfg_.max_batch_tokens);
    free_cap[s] = cap[s];
  }

  // owner/tier token placement per slot
  std::vector<std::map<int, int64_t>> by_owner(num_slots);
  std::vector<std::vector<int64_t>> by_tier(num_slots,
                                            std::vector<int64_t>(slo_.num_tiers(), 0));
  for (const auto& d : dues) {
    int placed = -1;
    if (d.late) {
      for (int s = 0; s < num_slots; ++s) {
        if (free_cap[s] > 0) {
          placed = s;
          break;
        }
      }
    } else {
      // Latest slot emitting at or before the due, overflowing earlier.
      int jit = -1;
      {
        int lo = 0, hi = num_slots - 1;
        while (lo <= hi) {
          const int mid = (lo + hi) / 2;
          if (time_le(ends[mid], d.time)) {
            jit = mid;
            lo = mid + 1;
          } else {
            hi = mid - 1;
          }
        }
      }
      for (int s = jit; s >= 0; --s) {
        if (free_cap[s] > 0) {
          placed = s;
          break;
        }
      }
    }
    if (placed < 0) return std::nullopt;
    --free_cap[placed];
    if (d.owner >= 0)
      by_owner[placed][d.owner] += 1;
    else
      by_tier[placed][d.tier] += 1;
  }

  for (int s = 0; s < num_slots; ++s) {
    PlannedBatch b;
    b.start_s = s == 0 ? 0.0 : ends[s - 1];
    b.end_s = ends[s];
    b.capacity_tokens = cap[s];
    b.decode_per_tier = by_tier[s];
    for (const auto& [owner, n] : by_owner[s]) b.decode_by_owner.emplace_back(owner, n);
    b.decode_tokens = cap[s] - free_cap[s];
    b.prefill_budget = std::min(free_cap[s], cfg_.max_chunk_tokens);
    plan.prefill_budget += b.prefill_budget;
    plan.batches.push_back(std::move(b));
  }
  return plan;
}

std::optional<GapPlan> BatchPlanner::tile_gap(double gap_s, const DecodeCensus& census,
                                              double due_horizon_s) const {
  std::optional<GapPlan> ar = tile_gap_ar(gap_s, census, due_horizon_s);
  if (!cfg_.speculative || census.empty()) return ar;

  bool spec_serviceable = true;
  for (const auto& m : census.exact)
    if (m.backlog > 0) spec_serviceable = false;
  if (due_horizon_s > gap_s + kTimeEps) {
    // A due just past the gap end needs per-due placement; only the
    // autoregressive tiler serves it early.
    for (const auto& m : census.exact) {
      if (m.remaining <= 0) continue;
      const double tpot = slo_.tpot_tiers_s[m.tier];
      int64_t issued = std::min(m.backlog, m.remaining);
      for (double d = std::max(m.phase_s, 0.0); time_le(d, due_horizon_s) && issued < m.remaining;
           d += tpot, ++issued)
        if (!time_le(d, gap_s)) spec_serviceable = false;
    }
  }
  std::optional<SpecPlan> sp;
  if (spec_serviceable) {
    sp = solve_spec_lengths(census.merged_counts(slo_.num_tiers()), cfg_.spec_alpha,
                            cfg_.spec_max_len, model_, slo_, cfg_);
  }
  if (sp) {
    for (const auto& m : census.exact) {
      if (m.remaining > 0 && m.phase_s < sp->batch_time_s - kTimeEps) {
        sp.reset();  // an imminent due cannot wait for the first verification
        break;
      }
    }
  }
  if (!sp) return ar;

  const int full = static_cast<int>(std::floor(gap_s / sp->batch_time_s + kTimeEps));
  if (full == 0) return ar;

  GapPlan plan;
  plan.spec_lengths = sp->lengths;
  std::vector<int64_t> left(census.exact.size());
  for (size_t i = 0; i < census.exact.size(); ++i) left[i] = census.exact[i].remaining;
  for (int k = 0; k < full; ++k) {
    PlannedBatch b;
    b.start_s = k * sp->batch_time_s;
    b.end_s = (k + 1) * sp->batch_time_s;
    b.capacity_tokens = sp->batch_capacity;
    b.spec_step = 0;
    b.decode_per_tier.assign(slo_.num_tiers(), 0);
    int64_t decode = 0;
    for (size_t l = 0; l < census.counts_per_tier.size(); ++l) {
      const int64_t n = census.counts_per_tier[l] * sp->lengths[l];
      b.decode_per_tier[l] = n;
      decode += n;
    }
    for (size_t i = 0; i < census.exact.size(); ++i) {
      const int tier = census.exact[i].tier;
      const int64_t n = std::min<int64_t>(left[i], sp->lengths[tier]);
      if (n <= 0) continue;
      b.decode_by_owner.emplace_back(census.exact[i].owner, n);
      left[i] -= n;
      decode += n;
      b.spec_step = std::max<int64_t>(b.spec_step, sp->lengths[tier]);
    }
    for (int l = 0; l < slo_.num_tiers(); ++l)
      if (b.decode_per_tier[l] > 0)
        b.spec_step = std::max<int64_t>(b.spec_step, sp->lengths[l]);
    b.decode_tokens = decode;
    b.prefill_budget = std::max<int64_t>(
        0, std::min(sp->batch_capacity - decode, cfg_.max_chunk_tokens));
    plan.prefill_budget += b.prefill_budget;
    plan.batches.push_back(std::move(b));
  }

  // Remainder handled autoregressively with the canonical census.
  const double used = full * sp->batch_time_s;
  if (gap_s - used > kTimeEps) {
    DecodeCensus rest;
    rest.counts_per_tier = census.merged_counts(slo_.num_tiers());
    auto tail = tile_gap_ar(gap_s - used, rest);
    if (!tail) return ar;
    for (auto& b : tail->batches) {
      b.start_s += used;
      b.end_s += used;
      plan.prefill_budget += b.prefill_budget;
      plan.batches.push_back(std::move(b));
    }
  }

  if (ar && ar->prefill_budget >= plan.prefill_budget) return ar;
  return plan;
}

std::optional<int64_t> BatchPlanner::prefill_budget(
    double gap_s, const std::vector<int64_t>& counts_per_tier) const {
  const double gap = quantize_gap(gap_s);
  const int64_t key_ms = static_cast<int64_t>(llround(gap * 1000.0));
  const auto key = std::make_pair(key_ms, counts_per_tier);
  auto it = memo_.find(key);
  if (it != memo_.end()) return it->second;
  DecodeCensus census;
  census.counts_per_tier = counts_per_tier;
  auto plan = tile_gap(gap, census);
  std::optional<int64_t> budget;
  if (plan) budget = plan->prefill_budget;
  memo_.emplace(key, budget);
  return budget;
}

void BatchPlanner::clear_memo() const { memo_.clear(); }

}  // namespace slosim
