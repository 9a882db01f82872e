#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "slosim/common.hpp"
#include "slosim/metrics.hpp"

using namespace slosim;

namespace {

template <typename F>
std::string thrown_code(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  } catch (...) {
    return "<other>";
  }
  return "<none>";
}

RequestRecord record(const std::string& id, bool best_effort, bool dropped, bool completed,
                     bool on_time, double arrival, double ttft, double tpot_sample) {
  RequestRecord r;
  r.id = id;
  r.value = 1.0;
  r.best_effort = best_effort;
  r.dropped = dropped;
  r.completed = completed;
  r.arrival_s = arrival;
  r.completion_s = completed ? arrival + 2.0 : -1.0;
  r.first_token_s = completed ? arrival + ttft : -1.0;
  r.tokens_out = completed ? 10 : 0;
  r.total_tokens = 20;

  StageRecord pre;
  pre.kind = StageKind::kPrefill;
  pre.tokens = 10;
  pre.available_s = arrival;
  pre.deadline_s = arrival + 1.0;
  pre.completed_s = completed ? arrival + ttft : -1.0;
  pre.on_time = on_time;
  r.stages.push_back(pre);

  StageRecord dec;
  dec.kind = StageKind::kDecode;
  dec.tokens = 10;
  dec.available_s = arrival + ttft;
  dec.line_start_s = arrival + 1.0;
  dec.completed_s = completed ? arrival + 2.0 : -1.0;
  dec.windows_total = 1;
  dec.windows_violated = on_time ? 0 : 1;
  dec.tpot_samples.push_back(tpot_sample);
  r.stages.push_back(dec);
  return r;
}

}  // namespace

TEST_CASE("attainment counts the standard tier only") {
  std::vector<RequestRecord> recs;
  recs.push_back(record("a", false, false, true, true, 0.0, 0.5, 0.04));
  recs.push_back(record("b", false, false, true, false, 0.2, 0.7, 0.12));  // violated
  recs.push_back(record("c", true, false, true, true, 0.4, 0.9, 0.2));    // best effort
  recs.push_back(record("d", false, true, false, true, 0.6, 0.0, 0.0));   // dropped
  recs.push_back(record("e", false, false, false, true, 0.8, 0.0, 0.0));  // unfinished

  auto s = summarize(recs);
  CHECK(s.total_requests == 5);
  CHECK(s.standard_requests == 4);  // best effort excluded entirely
  CHECK(s.standard_attained == 1);
  CHECK(s.best_effort_requests == 1);
  CHECK(s.dropped_requests == 1);
  CHECK(s.attainment == doctest::Approx(0.25));
  CHECK(s.overall_attainment == doctest::Approx(0.2));
  CHECK(attainment(recs) == doctest::Approx(0.25));

  std::vector<RequestRecord> none;
  CHECK(attainment(none) == doctest::Approx(1.0));
}

TEST_CASE("summary percentiles come from completed standard requests") {
  std::vector<RequestRecord> recs;
  for (int i = 0; i < 100; ++i)
    recs.push_back(record("r" + std::to_string(i), false, false, true, true, 0.01 * i,
                          0.1 + 0.001 * i, 0.02 + 0.0001 * i));
  auto s = summarize(recs);
  // nearest-rank percentiles over the 100 ttft values 0.100..0.199
  CHECK(s.p50_ttft_s == doctest::Approx(0.149).epsilon(1e-9));
  CHECK(s.p99_ttft_s == doctest::Approx(0.198).epsilon(1e-9));
  CHECK(s.p50_tpot_s == doctest::Approx(0.0249).epsilon(1e-9));
  CHECK(s.p99_tpot_s == doctest::Approx(0.0298).epsilon(1e-9));
  CHECK(s.tokens_out == 1000);
  CHECK(s.makespan_s == doctest::Approx(0.99 + 2.0));
  REQUIRE(!s.arrivals_per_s.empty());
  CHECK(s.arrivals_per_s[0] == 100);
}

TEST_CASE("metrics files carry one row per request plus a summary") {
  std::vector<RequestRecord> recs;
  recs.push_back(record("a", false, false, true, true, 0.0, 0.5, 0.04));
  recs.push_back(record("b", true, false, true, true, 0.5, 0.6, 0.05));
  auto s = summarize(recs);

  const char* jpath = "test_metrics_tmp.jsonl";
  write_metrics_jsonl(jpath, recs, s);
  {
    std::ifstream f(jpath);
    std::string line;
    int lines = 0;
    std::string last;
    while (std::getline(f, line))
      if (!line.empty()) {
        ++lines;
        last = line;
      }
    CHECK(lines == 3);
    CHECK(last.find("\"summary\"") != std::string::npos);
  }
  std::remove(jpath);

  const char* tpath = "test_metrics_tmp.tsv";
  write_metrics_table(tpath, recs);
  {
    std::ifstream f(tpath);
    std::string header;
    std::getline(f, header);
    CHECK(header.find("id\t") == 0);
    CHECK(header.find("ttft_s") != std::string::npos);
    int rows = 0;
    std::string line;
    while (std::getline(f, line))
      if (!line.empty()) ++rows;
    CHECK(rows == 2);
  }
  std::remove(tpath);
}

TEST_CASE("pool split ratio follows token length and overhead") {
  // no verification overhead: the split is the pure length ratio
  CHECK(disagg_ratio(1000.0, 250.0, 0.1, 0.0) == doctest::Approx(4.0).epsilon(1e-12));
  // half the window eaten by overhead at tpot 0.1: ratio halves
  CHECK(disagg_ratio(1000.0, 250.0, 0.1, 0.05) == doctest::Approx(2.0).epsilon(1e-12));
  // overhead consuming the whole window leaves nothing for prefill
  CHECK(disagg_ratio(1000.0, 250.0, 0.1, 0.1) == doctest::Approx(0.0).epsilon(1e-12));
  // linear in the prefill length
  CHECK(disagg_ratio(2000.0, 250.0, 0.1, 0.05) ==
        doctest::Approx(2.0 * disagg_ratio(1000.0, 250.0, 0.1, 0.05)).epsilon(1e-12));

  CHECK(thrown_code([] { disagg_ratio(-1.0, 250.0, 0.1, 0.0); }) == "invalid-parameters");
  CHECK(thrown_code([] { disagg_ratio(1000.0, 250.0, 0.1, 0.2); }) == "invalid-parameters");
}

TEST_CASE("goodput bound charges decode tokens the overhead premium") {
  // 10000 tok/s, 1000 in, 250 out, tpot 0.1, overhead 0.05: decode tokens
  // cost double, so 10000 / (2*250 + 1000) = 6.666...
  CHECK(disagg_goodput(10000.0, 1000.0, 250.0, 0.1, 0.05) ==
        doctest::Approx(10000.0 / 1500.0).epsilon(1e-12));
  // zero overhead reduces to tokens-per-request
  CHECK(disagg_goodput(10000.0, 1000.0, 250.0, 0.1, 0.0) ==
        doctest::Approx(8.0).epsilon(1e-12));
  // throughput scales the bound linearly
  CHECK(disagg_goodput(20000.0, 1000.0, 250.0, 0.1, 0.05) ==
        doctest::Approx(2.0 * disagg_goodput(10000.0, 1000.0, 250.0, 0.1, 0.05))
            .epsilon(1e-12));
  CHECK(thrown_code([] { disagg_goodput(10000.0, 1000.0, 250.0, 0.1, 0.1); }) ==
        "invalid-parameters");
  CHECK(thrown_code([] { disagg_goodput(0.0, 1000.0, 250.0, 0.1, 0.0); }) ==
        "invalid-parameters");
}

TEST_CASE("scenario scaling compresses bursts but keeps their size") {
  ScenarioConfig sc;
  sc.name = "s";
  sc.slo.tpot_tiers_s = {0.05};
  sc.slo.ttft_slowdowns = {3.0};
  sc.prompt_tokens = {100.0, 10.0};
  sc.output_tokens = {50.0, 5.0};
  sc.arrival.process = "bursty";
  sc.arrival.rate_per_s = 2.0;
  sc.arrival.on_multiplier = 4.0;
  sc.arrival.mean_on_s = 10.0;
  sc.arrival.mean_off_s = 30.0;

  auto scaled = scale_scenario(sc, 2.0);
  CHECK(scaled.arrival.rate_per_s == doctest::Approx(4.0));
  CHECK(scaled.arrival.mean_on_s == doctest::Approx(5.0));
  CHECK(scaled.arrival.mean_off_s == doctest::Approx(30.0));
  CHECK(scaled.arrival.on_multiplier == doctest::Approx(4.0));

  sc.arrival.process = "poisson";
  auto p = scale_scenario(sc, 3.0);
  CHECK(p.arrival.rate_per_s == doctest::Approx(6.0));
  CHECK(p.arrival.mean_on_s == doctest::Approx(10.0));
}

TEST_CASE("capacity search lands between a passing and failing load") {
  PerfModel model({{2.5e-4, 2e-3, 0.006}, {0.0, 0.0, 0.02}});
  ScenarioConfig sc;
  sc.name = "cap";
  sc.shape = "single";
  sc.slo.tpot_tiers_s = {0.05, 0.1};
  sc.slo.ttft_slowdowns = {3.0, 5.0};
  sc.prompt_tokens = {300.0, 100.0};
  sc.output_tokens = {100.0, 40.0};
  sc.arrival.rate_per_s = 1.0;

  ExecConfig exec;
  exec.memory_units = 4096;
  ClusterConfig cluster;
  cluster.backup = "best_effort_on_origin";

  CapacityOptions opt;
  opt.target_attainment = 0.9;
  opt.lo_scale = 0.5;
  opt.hi_scale = 24.0;
  opt.rel_tolerance = 0.15;
  opt.seeds_per_rate = 3;
  opt.horizon_s = 30.0;

  auto res = capacity_search(sc, model, exec, cluster, opt);
  CHECK(res.scale > opt.lo_scale);
  CHECK(res.scale < opt.hi_scale);
  CHECK(res.attainment_at >= opt.target_attainment);
  CHECK(res.per_gpu_rate > 0.0);
  CHECK(res.evaluations > 0);

  // the found scale is near-maximal: a load well past the tolerance band
  // must miss the target for the same seeds. The attainment estimate is
  // noisy near the knee, so probe far enough out that failure is clear-cut.
  auto probe = scale_scenario(sc, 2.5 * res.scale);
  std::vector<double> atts;
  for (int s = 0; s < opt.seeds_per_rate; ++s) {
    auto recs = simulate_scenario(probe, model, exec, cluster,
                                  opt.base_seed + 1000003ULL * (uint64_t)s, opt.horizon_s);
    atts.push_back(summarize(recs).overall_attainment);
  }
  std::sort(atts.begin(), atts.end());
  CHECK(atts[atts.size() / 2] < opt.target_attainment);
}

TEST_CASE("capacity search demands a bracketing interval") {
  PerfModel model({{2.5e-4, 2e-3, 0.006}, {0.0, 0.0, 0.02}});
  ScenarioConfig sc;
  sc.name = "cap2";
  sc.shape = "single";
  sc.slo.tpot_tiers_s = {0.05};
  sc.slo.ttft_slowdowns = {3.0};
  sc.prompt_tokens = {300.0, 100.0};
  sc.output_tokens = {100.0, 40.0};
  sc.arrival.rate_per_s = 40.0;  // already hopeless at the low end

  ExecConfig exec;
  exec.memory_units = 512;
  ClusterConfig cluster;
  CapacityOptions opt;
  opt.lo_scale = 1.0;
  opt.hi_scale = 2.0;
  opt.seeds_per_rate = 1;
  opt.horizon_s = 6.0;
  CHECK(thrown_code([&] { capacity_search(sc, model, exec, cluster, opt); }) ==
        "bounds-not-bracketing");
}

TEST_CASE("a lazy upper bound that still attains is returned as found") {
  PerfModel model({{2.5e-4, 2e-3, 0.006}, {0.0, 0.0, 0.02}});
  ScenarioConfig sc;
  sc.name = "cap3";
  sc.shape = "single";
  sc.slo.tpot_tiers_s = {0.05};
  sc.slo.ttft_slowdowns = {3.0};
  sc.prompt_tokens = {200.0, 50.0};
  sc.output_tokens = {60.0, 20.0};
  sc.arrival.rate_per_s = 0.2;

  ExecConfig exec;
  exec.memory_units = 4096;
  ClusterConfig cluster;
  CapacityOptions opt;
  opt.lo_scale = 0.5;
  opt.hi_scale = 1.0;  // trivially attainable even at the top
  opt.seeds_per_rate = 1;
  opt.horizon_s = 8.0;
  auto res = capacity_search(sc, model, exec, cluster, opt);
  CHECK(res.scale == doctest::Approx(1.0));
  CHECK(res.attainment_at >= opt.target_attainment);
}
