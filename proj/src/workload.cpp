#include "slosim/workload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include <json.hpp>

#include "slosim/common.hpp"

namespace slosim {

using nlohmann::json;

void SloConfig::validate() const {
  if (tpot_tiers_s.empty()) fail("invalid-parameters", "slo config needs at least one tier");
  if (tpot_tiers_s.size() != ttft_slowdowns.size())
    fail("invalid-parameters", "tpot tier and slowdown lists must align");
  for (size_t i = 0; i < tpot_tiers_s.size(); ++i) {
    if (tpot_tiers_s[i] <= 0) fail("invalid-parameters", "tpot tiers must be positive");
    if (i > 0 && tpot_tiers_s[i] < tpot_tiers_s[i - 1])
      fail("invalid-parameters", "tpot tiers must ascend from tightest to loosest");
    if (ttft_slowdowns[i] < 1.0)
      fail("invalid-parameters", "ttft slowdown multipliers must be >= 1");
  }
  if (tpot_window < 1) fail("invalid-parameters", "tpot window must be >= 1");
}

int64_t RequestSpec::total_tokens() const {
  int64_t n = 0;
  for (const auto& s : stages) n += s.tokens;
  return n;
}

int64_t RequestSpec::total_decode_tokens() const {
  int64_t n = 0;
  for (const auto& s : stages)
    if (s.kind == StageKind::kDecode) n += s.tokens;
  return n;
}

int RequestSpec::tightest_decode_tier() const {
  int tier = -1;
  for (const auto& s : stages) {
    if (s.kind != StageKind::kDecode) continue;
    if (tier < 0 || s.slo_tier < tier) tier = s.slo_tier;
  }
  return tier;
}

void RequestSpec::validate(const SloConfig& slo) const {
  if (id.empty()) fail("invariant-violation", "request with empty id");
  if (arrival_s < 0) fail("invariant-violation", id + ": negative arrival time");
  if (value <= 0) fail("invariant-violation", id + ": value must be positive");
  if (stages.empty()) fail("invariant-violation", id + ": no stages");
  if (stages.front().kind != StageKind::kPrefill)
    fail("invariant-violation", id + ": first stage must be a prefill");
  for (size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    if (s.tokens < 1) fail("invariant-violation", id + ": stage tokens must be >= 1");
    if (s.slo_tier < 0 || s.slo_tier >= slo.num_tiers())
      fail("invariant-violation", id + ": slo tier out of range");
    if (s.external_delay_s < 0)
      fail("invariant-violation", id + ": negative external delay");
    if (s.kind == StageKind::kPrefill && i + 1 >= stages.size())
      fail("invariant-violation", id + ": trailing prefill with no decode");
  }
}

int64_t derive_memory_units(const RequestSpec& req, double overprovision) {
  if (overprovision < 1.0) fail("invalid-parameters", "memory overprovision must be >= 1");
  const double tokens = static_cast<double>(req.total_tokens()) * overprovision;
  return static_cast<int64_t>(std::ceil(tokens / static_cast<double>(kKvBlockTokens)));
}

double prefill_deadline(const PerfModel& model, const SloConfig& slo,
                        const StageSpec& stage, double available_s) {
  if (stage.kind != StageKind::kPrefill)
    fail("invalid-parameters", "prefill_deadline on a decode stage");
  const double zero_load = model.predict(stage.tokens, 0);
  return available_s + slo.ttft_slowdowns[stage.slo_tier] * zero_load;
}

void ScenarioConfig::validate() const {
  slo.validate();
  if (arrival.rate_per_s <= 0) fail("invalid-distribution-parameters", "arrival rate must be positive");
  if (arrival.process != "poisson" && arrival.process != "bursty")
    fail("invalid-parameters", "unknown arrival process: " + arrival.process);
  if (arrival.process == "bursty" &&
      (arrival.on_multiplier < 1 || arrival.mean_on_s <= 0 || arrival.mean_off_s <= 0))
    fail("invalid-distribution-parameters", "bad bursty arrival parameters");
  auto check = [](const LengthDist& d, const std::string& what) {
    if (d.mean < 1 || d.std < 0)
      fail("invalid-distribution-parameters", what + ": mean must be >= 1 and std >= 0");
  };
  check(prompt_tokens, name + " prompt_tokens");
  if (shape == "single" || shape == "tool") check(output_tokens, name + " output_tokens");
  if (shape == "reasoning") {
    check(think_tokens, name + " think_tokens");
    check(response_tokens, name + " response_tokens");
  }
  if (shape != "single" && shape != "reasoning" && shape != "tool")
    fail("invalid-parameters", "unknown scenario shape: " + shape);
  if (shape == "tool" && (tool_delay_min_s < 0 || tool_delay_max_s < tool_delay_min_s))
    fail("invalid-distribution-parameters", "bad tool delay range");
  if (memory_overprovision < 1.0)
    fail("invalid-parameters", "memory overprovision must be >= 1");
}

namespace {

int64_t sample_lognormal(const LengthDist& d, std::mt19937_64& rng) {
  if (d.std <= 0.0) return std::max<int64_t>(1, llround(d.mean));
  const double cv2 = (d.std * d.std) / (d.mean * d.mean);
  const double sigma2 = std::log1p(cv2);
  const double mu = std::log(d.mean) - 0.5 * sigma2;
  std::normal_distribution<double> norm(mu, std::sqrt(sigma2));
  const double v = std::exp(norm(rng));
  return std::max<int64_t>(1, llround(v));
}

std::vector<double> sample_arrivals(const ArrivalConfig& a, uint64_t seed, double duration_s) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<double> out;
  double t = 0.0;
  if (a.process == "poisson") {
    std::exponential_distribution<double> gap(a.rate_per_s);
    for (t = gap(rng); t < duration_s; t += gap(rng)) out.push_back(t);
    return out;
  }
  // Bursty: alternating off/on phases with exponential durations; the
  // configured rate applies off-phase and is multiplied during bursts.
  std::exponential_distribution<double> on_len(1.0 / a.mean_on_s);
  std::exponential_distribution<double> off_len(1.0 / a.mean_off_s);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  bool on = false;
  double phase_end = off_len(rng);
  while (t < duration_s) {
    const double rate = on ? a.rate_per_s * a.on_multiplier : a.rate_per_s;
    const double gap = -std::log(1.0 - uni(rng)) / rate;
    if (t + gap >= phase_end) {
      // Memorylessness lets the pending gap be discarded at phase flips.
      t = phase_end;
      on = !on;
      phase_end = t + (on ? on_len(rng) : off_len(rng));
      continue;
    }
    t += gap;
    if (t < duration_s) out.push_back(t);
  }
  return out;
}

}  // namespace

std::vector<RequestSpec> generate_trace(const ScenarioConfig& scenario, uint64_t seed,
                                        double duration_s) {
  scenario.validate();
  if (duration_s <= 0) fail("invalid-parameters", "duration must be positive");
  const std::vector<double> arrivals = sample_arrivals(scenario.arrival, seed, duration_s);
  std::mt19937_64 rng(seed);
  std::vector<RequestSpec> reqs;
  reqs.reserve(arrivals.size());
  for (size_t i = 0; i < arrivals.size(); ++i) {
    RequestSpec r;
    {
      std::ostringstream id;
      id << scenario.name << "-" << std::setw(6) << std::setfill('0') << i;
      r.id = id.str();
    }
    r.arrival_s = arrivals[i];
    r.value = scenario.value;
    if (scenario.shape == "single") {
      r.stages.push_back({StageKind::kPrefill, sample_lognormal(scenario.prompt_tokens, rng),
                          scenario.prefill_tier, 0.0});
      r.stages.push_back({StageKind::kDecode, sample_lognormal(scenario.output_tokens, rng),
                          scenario.decode_tier, 0.0});
    } else if (scenario.shape == "reasoning") {
      r.stages.push_back({StageKind::kPrefill, sample_lognormal(scenario.prompt_tokens, rng),
                          scenario.prefill_tier, 0.0});
      r.stages.push_back({StageKind::kDecode, sample_lognormal(scenario.think_tokens, rng),
                          scenario.think_tier, 0.0});
      r.stages.push_back({StageKind::kDecode, sample_lognormal(scenario.response_tokens, rng),
                          scenario.response_tier, 0.0});
    } else {  // tool
      std::normal_distribution<double> pairs_dist(scenario.tool_pairs_mean, scenario.tool_pairs_std);
      const int pairs = std::max(1, static_cast<int>(llround(pairs_dist(rng))));
      std::uniform_real_distribution<double> delay(scenario.tool_delay_min_s,
                                                   scenario.tool_delay_max_s);
      for (int p = 0; p < pairs; ++p) {
        const double d = p == 0 ? 0.0 : delay(rng);
        r.stages.push_back({StageKind::kPrefill, sample_lognormal(scenario.prompt_tokens, rng),
                            scenario.prefill_tier, d});
        r.stages.push_back({StageKind::kDecode, sample_lognormal(scenario.output_tokens, rng),
                            scenario.decode_tier, 0.0});
      }
    }
    r.memory_units = derive_memory_units(r, scenario.memory_overprovision);
    r.validate(scenario.slo);
    reqs.push_back(std::move(r));
  }
  return reqs;
}

namespace {

json stage_to_json(const StageSpec& s) {
  return json{{"kind", s.kind == StageKind::kPrefill ? "prefill" : "decode"},
              {"tokens", s.tokens},
              {"slo_tier", s.slo_tier},
              {"external_delay_s", s.external_delay_s}};
}

StageSpec stage_from_json(const json& j) {
  StageSpec s;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "prefill")
    s.kind = StageKind::kPrefill;
  else if (kind == "decode")
    s.kind = StageKind::kDecode;
  else
    fail("parse-error", "unknown stage kind: " + kind);
  s.tokens = j.at("tokens").get<int64_t>();
  s.slo_tier = j.at("slo_tier").get<int>();
  s.external_delay_s = j.value("external_delay_s", 0.0);
  return s;
}

}  // namespace

std::vector<RequestSpec> load_trace_file(const std::string& path, const SloConfig& slo,
                                         double memory_overprovision) {
  std::ifstream in(path);
  if (!in) fail("parse-error", "cannot open " + path);
  std::vector<RequestSpec> reqs;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail("parse-error", path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    RequestSpec r;
    try {
      r.id = j.at("id").get<std::string>();
      r.arrival_s = j.at("arrival_s").get<double>();
      r.value = j.value("value", 1.0);
      for (const auto& js : j.at("stages")) r.stages.push_back(stage_from_json(js));
    } catch (const json::exception& e) {
      fail("parse-error", path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    r.memory_units = derive_memory_units(r, memory_overprovision);
    r.validate(slo);
    reqs.push_back(std::move(r));
  }
  std::stable_sort(reqs.begin(), reqs.end(), [](const RequestSpec& a, const RequestSpec& b) {
    if (a.arrival_s != b.arrival_s) return a.arrival_s < b.arrival_s;
    return a.id < b.id;
  });
  return reqs;
}

void save_trace_file(const std::string& path, const std::vector<RequestSpec>& reqs) {
  std::ofstream out(path);
  if (!out) fail("parse-error", "cannot open " + path + " for writing");
  for (const auto& r : reqs) {
    json stages = json::array();
    for (const auto& s : r.stages) stages.push_back(stage_to_json(s));
    json j{{"id", r.id}, {"arrival_s", r.arrival_s}, {"value", r.value}, {"stages", stages}};
    out << j.dump() << "\n";
  }
}

namespace {

LengthDist dist_from_json(const json& j) {
  LengthDist d;
  d.mean = j.at("mean").get<double>();
  d.std = j.value("std", 0.0);
  return d;
}

json dist_to_json(const LengthDist& d) { return json{{"mean", d.mean}, {"std", d.std}}; }

}  // namespace

ScenarioConfig load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("parse-error", "cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail("parse-error", path + ": " + e.what());
  }
  ScenarioConfig sc;
  try {
    sc.name = j.value("name", "scenario");
    sc.shape = j.value("shape", "single");
    if (j.contains("arrival")) {
      const auto& a = j["arrival"];
      sc.arrival.process = a.value("process", "poisson");
      sc.arrival.rate_per_s = a.value("rate_per_s", 1.0);
      sc.arrival.on_multiplier = a.value("on_multiplier", 4.0);
      sc.arrival.mean_on_s = a.value("mean_on_s", 20.0);
      sc.arrival.mean_off_s = a.value("mean_off_s", 60.0);
    }
    const auto& slo = j.at("slo");
    sc.slo.tpot_tiers_s = slo.at("tpot_tiers_s").get<std::vector<double>>();
    sc.slo.ttft_slowdowns = slo.at("ttft_slowdowns").get<std::vector<double>>();
    sc.slo.tpot_window = slo.value("tpot_window", 10);
    sc.prompt_tokens = dist_from_json(j.at("prompt_tokens"));
    if (j.contains("output_tokens")) sc.output_tokens = dist_from_json(j["output_tokens"]);
    sc.prefill_tier = j.value("prefill_tier", 0);
    sc.decode_tier = j.value("decode_tier", 0);
    sc.value = j.value("value", 1.0);
    if (j.contains("think_tokens")) sc.think_tokens = dist_from_json(j["think_tokens"]);
    if (j.contains("response_tokens")) sc.response_tokens = dist_from_json(j["response_tokens"]);
    sc.think_tier = j.value("think_tier", 0);
    sc.response_tier = j.value("response_tier", sc.slo.num_tiers() - 1);
    sc.tool_pairs_mean = j.value("tool_pairs_mean", 2.7);
    sc.tool_pairs_std = j.value("tool_pairs_std", 1.1);
    sc.tool_delay_min_s = j.value("tool_delay_min_s", 0.05);
    sc.tool_delay_max_s = j.value("tool_delay_max_s", 0.2);
    sc.memory_overprovision = j.value("memory_overprovision", 1.0);
  } catch (const json::exception& e) {
    fail("parse-error", path + ": " + e.what());
  }
  sc.validate();
  return sc;
}

std::string scenario_to_json(const ScenarioConfig& sc) {
  json j{{"name", sc.name},
         {"shape", sc.shape},
         {"arrival",
          {{"process", sc.arrival.process},
           {"rate_per_s", sc.arrival.rate_per_s},
           {"on_multiplier", sc.arrival.on_multiplier},
           {"mean_on_s", sc.arrival.mean_on_s},
           {"mean_off_s", sc.arrival.mean_off_s}}},
         {"slo",
          {{"tpot_tiers_s", sc.slo.tpot_tiers_s},
           {"ttft_slowdowns", sc.slo.ttft_slowdowns},
           {"tpot_window", sc.slo.tpot_window}}},
         {"prompt_tokens", dist_to_json(sc.prompt_tokens)},
         {"output_tokens", dist_to_json(sc.output_tokens)},
         {"prefill_tier", sc.prefill_tier},
         {"decode_tier", sc.decode_tier},
         {"value", sc.value},
         {"memory_overprovision", sc.memory_overprovision}};
  if (sc.shape == "reasoning") {
    j["think_tokens"] = dist_to_json(sc.think_tokens);
    j["response_tokens"] = dist_to_json(sc.response_tokens);
    j["think_tier"] = sc.think_tier;
    j["response_tier"] = sc.response_tier;
  }
  if (sc.shape == "tool") {
    j["tool_pairs_mean"] = sc.tool_pairs_mean;
    j["tool_pairs_std"] = sc.tool_pairs_std;
    j["tool_delay_min_s"] = sc.tool_delay_min_s;
    j["tool_delay_max_s"] = sc.tool_delay_max_s;
  }
  return j.dump(2);
}

}  // namespace slosim
