#include "slosim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>

#include <json.hpp>

#include "slosim/common.hpp"

namespace slosim {

using nlohmann::json;

namespace {

// tightest decode tier carried by the request; prefill tier when none
int request_tier(const RequestRecord& r) {
  int tier = -1;
  for (const StageRecord& s : r.stages)
    if (s.kind == StageKind::kDecode && (tier < 0 || s.tier < tier)) tier = s.tier;
  if (tier < 0 && !r.stages.empty()) tier = r.stages.front().tier;
  return std::max(tier, 0);
}

// The first stage answers to the user's arrival; later prefill stages
// (tool turns) measure from their own availability.
double stage_ttft(const RequestRecord& r, size_t idx) {
  const StageRecord& s = r.stages[idx];
  double base = idx == 0 ? r.arrival_s : s.available_s;
  return s.completed_s - base;
}

double percentile(std::vector<double>& v, double p) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  size_t idx = (size_t)std::ceil(p * (double)v.size());
  if (idx > 0) --idx;
  if (idx >= v.size()) idx = v.size() - 1;
  return v[idx];
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

}  // namespace

SummaryStats summarize(const std::vector<RequestRecord>& records) {
  SummaryStats s;
  std::vector<double> ttft, tpot;
  double max_arrival = 0.0;
  for (const RequestRecord& r : records) {
    ++s.total_requests;
    max_arrival = std::max(max_arrival, r.arrival_s);
    if (r.completed) s.makespan_s = std::max(s.makespan_s, r.completion_s);
    s.tokens_out += r.tokens_out;
    if (r.dropped) ++s.dropped_requests;
    if (r.best_effort) {
      ++s.best_effort_requests;
      if (r.completed) ++s.best_effort_completed;
      continue;
    }
    ++s.standard_requests;
    if (r.attained()) ++s.standard_attained;
    for (size_t i = 0; i < r.stages.size(); ++i) {
      const StageRecord& st = r.stages[i];
      if (st.completed_s < 0) continue;
      if (st.kind == StageKind::kPrefill) ttft.push_back(stage_ttft(r, i));
      for (double x : st.tpot_samples) tpot.push_back(x);
    }
  }
  s.attainment = s.standard_requests == 0
                     ? 1.0
                     : (double)s.standard_attained / (double)s.standard_requests;
  s.overall_attainment =
      s.total_requests == 0 ? 1.0 : (double)s.standard_attained / (double)s.total_requests;
  s.p50_ttft_s = percentile(ttft, 0.50);
  s.p99_ttft_s = percentile(ttft, 0.99);
  s.p50_tpot_s = percentile(tpot, 0.50);
  s.p99_tpot_s = percentile(tpot, 0.99);
  s.arrivals_per_s.assign((size_t)std::floor(max_arrival) + 1, 0);
  for (const RequestRecord& r : records) {
    size_t b = (size_t)std::floor(r.arrival_s);
    if (b < s.arrivals_per_s.size()) ++s.arrivals_per_s[b];
  }
  return s;
}

double attainment(const std::vector<RequestRecord>& records) {
  int64_t standard = 0, attained = 0;
  for (const RequestRecord& r : records) {
    if (r.best_effort) continue;
    ++standard;
    if (r.attained()) ++attained;
  }
  return standard == 0 ? 1.0 : (double)attained / (double)standard;
}

namespace {

json record_to_json(const RequestRecord& r) {
  json stages = json::array();
  for (size_t i = 0; i < r.stages.size(); ++i) {
    const StageRecord& st = r.stages[i];
    json js{{"kind", st.kind == StageKind::kPrefill ? "prefill" : "decode"},
            {"tier", st.tier},
            {"tokens", st.tokens},
            {"available_s", st.available_s},
            {"completed_s", st.completed_s}};
    if (st.kind == StageKind::kPrefill) {
      js["deadline_s"] = st.deadline_s;
      js["on_time"] = st.on_time;
      if (st.completed_s >= 0) js["ttft_s"] = stage_ttft(r, i);
    } else {
      js["line_start_s"] = st.line_start_s;
      js["windows_total"] = st.windows_total;
      js["windows_violated"] = st.windows_violated;
      js["tpot_samples"] = st.tpot_samples;
    }
    stages.push_back(std::move(js));
  }
  return json{{"id", r.id},
              {"tier", request_tier(r)},
              {"best_effort", r.best_effort},
              {"dropped", r.dropped},
              {"completed", r.completed},
              {"attained", r.attained()},
              {"hops", r.hops},
              {"preemptions", r.preemptions},
              {"value", r.value},
              {"arrival_s", r.arrival_s},
              {"first_token_s", r.first_token_s},
              {"completion_s", r.completion_s},
              {"tokens_out", r.tokens_out},
              {"total_tokens", r.total_tokens},
              {"stages", std::move(stages)}};
}

}  // namespace

void write_metrics_jsonl(const std::string& path, const std::vector<RequestRecord>& records,
                         const SummaryStats& stats) {
  std::ofstream out(path);
  if (!out) fail("io-error", "cannot open " + path + " for writing");
  for (const RequestRecord& r : records) out << record_to_json(r).dump() << "\n";
  json js{{"record", "summary"},
          {"total_requests", stats.total_requests},
          {"standard_requests", stats.standard_requests},
          {"standard_attained", stats.standard_attained},
          {"best_effort_requests", stats.best_effort_requests},
          {"best_effort_completed", stats.best_effort_completed},
          {"dropped_requests", stats.dropped_requests},
          {"attainment", stats.attainment},
          {"overall_attainment", stats.overall_attainment},
          {"p50_ttft_s", stats.p50_ttft_s},
          {"p99_ttft_s", stats.p99_ttft_s},
          {"p50_tpot_s", stats.p50_tpot_s},
          {"p99_tpot_s", stats.p99_tpot_s},
          {"makespan_s", stats.makespan_s},
          {"tokens_out", stats.tokens_out},
          {"arrivals_per_s", stats.arrivals_per_s}};
  out << js.dump() << "\n";
  if (!out) fail("io-error", "failed writing " + path);
}

void write_metrics_table(const std::string& path, const std::vector<RequestRecord>& records) {
  std::ofstream out(path);
  if (!out) fail("io-error", "cannot open " + path + " for writing");
  out << "id\ttier\tbest_effort\tdropped\tcompleted\tattained\thops\tpreemptions"
         "\tarrival_s\tfirst_token_s\tcompletion_s\tttft_s\tmean_tpot_s\ttokens_out\n";
  for (const RequestRecord& r : records) {
    double ttft = -1.0;
    if (!r.stages.empty() && r.stages.front().completed_s >= 0) ttft = stage_ttft(r, 0);
    double sum = 0.0;
    int64_t n = 0;
    for (const StageRecord& st : r.stages)
      for (double x : st.tpot_samples) {
        sum += x;
        ++n;
      }
    out << r.id << '\t' << request_tier(r) << '\t' << (r.best_effort ? 1 : 0) << '\t'
        << (r.dropped ? 1 : 0) << '\t' << (r.completed ? 1 : 0) << '\t'
        << (r.attained() ? 1 : 0) << '\t' << r.hops << '\t' << r.preemptions << '\t'
        << fmt(r.arrival_s) << '\t' << fmt(r.first_token_s) << '\t' << fmt(r.completion_s)
        << '\t' << fmt(ttft) << '\t' << fmt(n ? sum / (double)n : -1.0) << '\t'
        << r.tokens_out << "\n";
  }
  if (!out) fail("io-error", "failed writing " + path);
}

double disagg_ratio(double mean_prefill_len, double mean_decode_len, double tpot_s,
                    double overhead_s) {
  if (mean_prefill_len <= 0 || mean_decode_len <= 0)
    fail("invalid-parameters", "mean lengths must be positive");
  if (tpot_s <= 0 || overhead_s < 0 || overhead_s > tpot_s)
    fail("invalid-parameters", "need 0 <= overhead <= tpot, tpot > 0");
  return (1.0 - overhead_s / tpot_s) * mean_prefill_len / mean_decode_len;
}

double disagg_goodput(double max_token_tpt, double mean_in, double mean_out, double tpot_s,
                      double overhead_s) {
  if (max_token_tpt <= 0 || mean_in <= 0 || mean_out <= 0)
    fail("invalid-parameters", "throughput and mean lengths must be positive");
  if (tpot_s <= 0 || overhead_s < 0 || overhead_s >= tpot_s)
    fail("invalid-parameters", "need 0 <= overhead < tpot");
  return max_token_tpt / (tpot_s / (tpot_s - overhead_s) * mean_out + mean_in);
}

ScenarioConfig scale_scenario(const ScenarioConfig& scenario, double scale) {
  if (scale <= 0) fail("invalid-parameters", "rate scale must be positive");
  ScenarioConfig sc = scenario;
  sc.arrival.rate_per_s = scenario.arrival.rate_per_s * scale;
  // bursts keep their expected request count but hit harder
  if (scenario.arrival.process == "bursty") sc.arrival.mean_on_s = scenario.arrival.mean_on_s / scale;
  return sc;
}

std::vector<RequestRecord> simulate_scenario(const ScenarioConfig& scenario,
                                             const PerfModel& model, const ExecConfig& exec,
                                             const ClusterConfig& cluster, uint64_t seed,
                                             double horizon_s, DebugFn debug) {
  std::vector<RequestSpec> trace = generate_trace(scenario, seed, horizon_s);
  ExecConfig e = exec;
  e.seed = seed;
  ClusterSim sim(model, scenario.slo, e, cluster, std::move(debug));
  return sim.run(trace);
}

CapacityResult capacity_search(const ScenarioConfig& scenario, const PerfModel& model,
                               const ExecConfig& exec, const ClusterConfig& cluster,
                               const CapacityOptions& opt) {
  if (opt.lo_scale <= 0 || opt.hi_scale <= opt.lo_scale)
    fail("invalid-parameters", "need 0 < lo_scale < hi_scale");
  if (opt.target_attainment <= 0 || opt.target_attainment > 1)
    fail("invalid-parameters", "target attainment must be in (0, 1]");
  if (opt.rel_tolerance <= 0) fail("invalid-parameters", "tolerance must be positive");
  if (opt.seeds_per_rate < 1) fail("invalid-parameters", "need at least one seed");
  if (opt.horizon_s <= 0) fail("invalid-parameters", "horizon must be positive");

  int evals = 0;
  auto eval_median = [&](double scale) -> double {
    ScenarioConfig sc = scale_scenario(scenario, scale);
    std::vector<double> atts((size_t)opt.seeds_per_rate, 0.0);
    std::exception_ptr err;
// seeds are independent simulations; results land positionally
#pragma omp parallel for schedule(dynamic)
    for (int s = 0; s < opt.seeds_per_rate; ++s) {
      try {
        uint64_t seed = opt.base_seed + 1000003ULL * (uint64_t)s;
        auto recs = simulate_scenario(sc, model, exec, cluster, seed, opt.horizon_s);
        // Judge the load by the fate of every arrival: demoting or dropping
        // a request must cost capacity, or admission control games the
        // search by shedding its way to a clean standard tier.
        int64_t attained = 0;
        for (const RequestRecord& r : recs)
          if (!r.best_effort && !r.dropped && r.attained()) ++attained;
        atts[(size_t)s] =
            recs.empty() ? 1.0 : (double)attained / (double)recs.size();
      } catch (...) {
#pragma omp critical
        if (!err) err = std::current_exception();
      }
    }
    if (err) std::rethrow_exception(err);
    std::sort(atts.begin(), atts.end());
    ++evals;
    return atts[atts.size() / 2];
  };

  double lo = opt.lo_scale, hi = opt.hi_scale;
  double att_lo = eval_median(lo);
  if (att_lo < opt.target_attainment)
    fail("bounds-not-bracketing",
         "attainment " + std::to_string(att_lo) + " at lo_scale already misses the target");
  double att_at = att_lo;
  double att_hi = eval_median(hi);
  if (att_hi >= opt.target_attainment) {
    lo = hi;
    att_at = att_hi;
  } else {
    int guard = 0;
    while ((hi - lo) / lo > opt.rel_tolerance && ++guard <= 64) {
      double mid = 0.5 * (lo + hi);
      double a = eval_median(mid);
      if (a >= opt.target_attainment) {
        lo = mid;
        att_at = a;
      } else {
        hi = mid;
      }
    }
  }

  // measured arrival rate at the found scale, averaged over the seed set
  ScenarioConfig sc = scale_scenario(scenario, lo);
  double total = 0.0;
  for (int s = 0; s < opt.seeds_per_rate; ++s) {
    uint64_t seed = opt.base_seed + 1000003ULL * (uint64_t)s;
    total += (double)generate_trace(sc, seed, opt.horizon_s).size();
  }
  CapacityResult res;
  res.scale = lo;
  res.attainment_at = att_at;
  res.evaluations = evals;
  res.per_gpu_rate = total / ((double)opt.seeds_per_rate * opt.horizon_s) /
                     (double)std::max(1, cluster.replicas);
  return res;
}

}  // namespace slosim
