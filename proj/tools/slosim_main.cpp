#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "slosim/common.hpp"
#include "slosim/metrics.hpp"
#include "slosim/perf_model.hpp"
#include "slosim/sim_executor.hpp"
#include "slosim/tiers_router.hpp"
#include "slosim/workload.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace slosim;

namespace {

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

// One experiment file wires a scenario (or a fixed trace), a latency
// model, the execution knobs, and an optional cluster layout together.
// Relative paths resolve against the experiment file's directory.
struct Experiment {
  std::string scenario_path;
  std::string trace_path;
  std::string model_path;
  uint64_t seed = 1;
  std::string out_dir = "out";
  double horizon_s = 120.0;
  ExecConfig exec;
  ClusterConfig cluster;
  CapacityOptions cap;
};

std::string resolve(const fs::path& dir, const std::string& p) {
  if (p.empty()) return p;
  fs::path q(p);
  return q.is_absolute() ? q.string() : (dir / q).string();
}

Experiment load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("parse-error", "cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail("parse-error", path + ": " + e.what());
  }
  Experiment ex;
  fs::path dir = fs::path(path).parent_path();
  try {
    ex.scenario_path = resolve(dir, j.value("scenario", ""));
    ex.trace_path = resolve(dir, j.value("trace", ""));
    ex.model_path = resolve(dir, j.at("model").get<std::string>());
    ex.seed = j.value("seed", (uint64_t)1);
    ex.out_dir = j.value("out_dir", "out");
    ex.horizon_s = j.value("horizon_s", 120.0);
    if (j.contains("exec")) {
      const json& e = j["exec"];
      ExecConfig& c = ex.exec;
      c.scheduler = e.value("scheduler", c.scheduler);
      c.speculative = e.value("speculative", c.speculative);
      c.spec_alpha = e.value("spec_alpha", c.spec_alpha);
      c.spec_max_len = e.value("spec_max_len", c.spec_max_len);
      c.noise = e.value("noise", c.noise);
      c.memory_units = e.value("memory_units", c.memory_units);
      c.be_reserve_frac = e.value("be_reserve_frac", c.be_reserve_frac);
      c.max_chunk_tokens = e.value("max_chunk_tokens", c.max_chunk_tokens);
      c.max_batch_tokens = e.value("max_batch_tokens", c.max_batch_tokens);
      c.replan_new_threshold = e.value("replan_new_threshold", c.replan_new_threshold);
      c.replan_finished_threshold =
          e.value("replan_finished_threshold", c.replan_finished_threshold);
      c.replan_timeout_s = e.value("replan_timeout_s", c.replan_timeout_s);
    }
    if (j.contains("cluster")) {
      if (j["cluster"].is_string()) {
        ex.cluster = load_cluster_file(resolve(dir, j["cluster"].get<std::string>()));
      } else {
        const json& c = j["cluster"];
        ex.cluster.replicas = c.value("replicas", 1);
        ex.cluster.routing_limit = c.value("routing_limit", 3);
        ex.cluster.backup = c.value("backup", "decline");
        ex.cluster.net_delay_s = c.value("net_delay_s", 0.001);
      }
    }
    if (j.contains("capacity")) {
      const json& c = j["capacity"];
      CapacityOptions& o = ex.cap;
      o.target_attainment = c.value("target_attainment", o.target_attainment);
      o.lo_scale = c.value("lo_scale", o.lo_scale);
      o.hi_scale = c.value("hi_scale", o.hi_scale);
      o.rel_tolerance = c.value("rel_tolerance", o.rel_tolerance);
      o.seeds_per_rate = c.value("seeds_per_rate", o.seeds_per_rate);
      o.horizon_s = c.value("horizon_s", ex.horizon_s);
    }
  } catch (const json::exception& e) {
    fail("parse-error", path + ": " + e.what());
  }
  if (ex.scenario_path.empty() && ex.trace_path.empty())
    fail("invalid-parameters", path + ": need a scenario or a trace");
  ex.cluster.validate();
  return ex;
}

struct Overrides {
  std::optional<uint64_t> seed;
  std::string out_dir;
  std::string scheduler;
  std::string spec;  // "on" | "off"
  std::optional<int> replicas;
  std::optional<double> noise;
  std::string debug_log;
};

void apply(const Overrides& ov, Experiment& ex) {
  if (ov.seed) ex.seed = *ov.seed;
  if (!ov.out_dir.empty()) ex.out_dir = ov.out_dir;
  if (!ov.scheduler.empty()) ex.exec.scheduler = ov.scheduler;
  if (!ov.spec.empty()) ex.exec.speculative = ov.spec == "on";
  if (ov.replicas) ex.cluster.replicas = *ov.replicas;
  if (ov.noise) ex.exec.noise = *ov.noise;
  ex.cluster.validate();
}

// debug sink that owns its stream; null when no path was given
struct DebugLog {
  std::ofstream out;
  DebugFn fn;
  explicit DebugLog(const std::string& path) {
    if (path.empty()) return;
    out.open(path);
    if (!out) fail("io-error", "cannot open " + path + " for writing");
    fn = [this](const std::string& line) { out << line << "\n"; };
  }
};

int cmd_fit(const std::string& profile_csv, const std::string& out_model) {
  std::vector<ProfileSample> samples = load_profile_csv(profile_csv);
  PerfModel model = PerfModel::fit(samples, 2);
  model.save_file(out_model);
  std::cout << "terms " << model.terms().size() << " r_squared "
            << fmt(model.r_squared(samples)) << "\n";
  std::cout << "wrote " << out_model << "\n";
  return 0;
}

int cmd_generate(const std::string& scenario_path, uint64_t seed, const std::string& out) {
  ScenarioConfig sc = load_scenario_file(scenario_path);
  double horizon = 120.0;
  {
    std::ifstream in(scenario_path);
    json j = json::parse(in);
    horizon = j.value("horizon_s", horizon);
  }
  std::vector<RequestSpec> trace = generate_trace(sc, seed, horizon);
  save_trace_file(out, trace);
  std::cout << "wrote " << out << " requests " << trace.size() << "\n";
  return 0;
}

int cmd_simulate(const std::string& config, const Overrides& ov) {
  Experiment ex = load_experiment(config);
  apply(ov, ex);
  PerfModel model = PerfModel::load_file(ex.model_path);

  SloConfig slo;
  std::vector<RequestSpec> trace;
  if (!ex.trace_path.empty()) {
    ScenarioConfig sc;
    if (!ex.scenario_path.empty()) {
      sc = load_scenario_file(ex.scenario_path);
      slo = sc.slo;
    } else {
      fail("invalid-parameters", config + ": a trace needs a scenario for its SLO tiers");
    }
    trace = load_trace_file(ex.trace_path, slo, sc.memory_overprovision);
  } else {
    ScenarioConfig sc = load_scenario_file(ex.scenario_path);
    slo = sc.slo;
    trace = generate_trace(sc, ex.seed, ex.horizon_s);
  }

  DebugLog dbg(ov.debug_log);
  ExecConfig e = ex.exec;
  e.seed = ex.seed;
  ClusterSim sim(model, slo, e, ex.cluster, dbg.fn);
  std::vector<RequestRecord> records = sim.run(trace);
  SummaryStats stats = summarize(records);

  fs::create_directories(ex.out_dir);
  write_metrics_jsonl((fs::path(ex.out_dir) / "metrics.jsonl").string(), records, stats);
  write_metrics_table((fs::path(ex.out_dir) / "metrics.tsv").string(), records);

  std::cout << "requests " << stats.total_requests << " standard " << stats.standard_requests
            << " best_effort " << stats.best_effort_requests << " dropped "
            << stats.dropped_requests << "\n";
  std::cout << "attainment " << fmt(stats.attainment) << " overall "
            << fmt(stats.overall_attainment) << "\n";
  std::cout << "p50_ttft_s " << fmt(stats.p50_ttft_s) << " p99_ttft_s " << fmt(stats.p99_ttft_s)
            << " p50_tpot_s " << fmt(stats.p50_tpot_s) << " p99_tpot_s "
            << fmt(stats.p99_tpot_s) << "\n";
  std::cout << "makespan_s " << fmt(stats.makespan_s) << " tokens_out " << stats.tokens_out
            << " replans " << sim.total_replans() << " batches " << sim.total_batches() << "\n";
  return 0;
}

int cmd_capacity(const std::string& config, double target_override, const Overrides& ov) {
  Experiment ex = load_experiment(config);
  apply(ov, ex);
  if (ex.scenario_path.empty())
    fail("invalid-parameters", config + ": capacity search needs a scenario");
  PerfModel model = PerfModel::load_file(ex.model_path);
  ScenarioConfig sc = load_scenario_file(ex.scenario_path);

  CapacityOptions opt = ex.cap;
  opt.base_seed = ex.seed;
  if (target_override > 0) opt.target_attainment = target_override;

  std::vector<std::string> variants;
  if (!ov.scheduler.empty())
    variants = {ov.scheduler};
  else
    variants = {"slos", "prefill-greedy", "fixed-cap"};

  struct Row {
    std::string scheduler;
    CapacityResult res;
  };
  std::vector<Row> rows;
  for (const std::string& s : variants) {
    ExecConfig e = ex.exec;
    e.scheduler = s;
    e.seed = ex.seed;
    rows.push_back({s, capacity_search(sc, model, e, ex.cluster, opt)});
  }

  fs::create_directories(ex.out_dir);
  std::string table_path = (fs::path(ex.out_dir) / "capacity.tsv").string();
  std::ofstream out(table_path);
  if (!out) fail("io-error", "cannot open " + table_path + " for writing");
  out << "scheduler\tper_gpu_rate\tscale\tattainment\tevaluations\n";
  for (const Row& r : rows)
    out << r.scheduler << '\t' << fmt(r.res.per_gpu_rate) << '\t' << fmt(r.res.scale) << '\t'
        << fmt(r.res.attainment_at) << '\t' << r.res.evaluations << "\n";
  if (!out) fail("io-error", "failed writing " + table_path);

  for (const Row& r : rows)
    std::cout << r.scheduler << " per_gpu_rate " << fmt(r.res.per_gpu_rate) << " scale "
              << fmt(r.res.scale) << " attainment " << fmt(r.res.attainment_at) << "\n";
  const Row* slos = nullptr;
  for (const Row& r : rows)
    if (r.scheduler == "slos") slos = &r;
  if (slos)
    for (const Row& r : rows)
      if (&r != slos && r.res.per_gpu_rate > 0)
        std::cout << "ratio slos/" << r.scheduler << " "
                  << fmt(slos->res.per_gpu_rate / r.res.per_gpu_rate) << "\n";
  std::cout << "wrote " << table_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trace-driven simulator for multi-tier LLM serving schedulers"};
  app.require_subcommand(1);

  std::string config, out, profile;
  Overrides ov;
  uint64_t seed = 0;
  bool seed_set = false;
  double target = 0.0;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--scheduler", ov.scheduler, "slos | prefill-greedy | fixed-cap")
        ->check(CLI::IsMember({"slos", "prefill-greedy", "fixed-cap"}));
    c->add_option("--spec", ov.spec, "speculative decoding on | off")
        ->check(CLI::IsMember({"on", "off"}));
    c->add_option("--replicas", [&ov](const std::vector<std::string>& v) {
        ov.replicas = std::stoi(v.at(0));
        return true;
      }, "replica count override");
    c->add_option("--noise", [&ov](const std::vector<std::string>& v) {
        ov.noise = std::stod(v.at(0));
        return true;
      }, "batch-time noise fraction override");
    c->add_option("--debug-log", ov.debug_log, "write per-event debug records here");
  };

  CLI::App* fit = app.add_subcommand("fit", "fit a latency model from a profile CSV");
  fit->add_option("--config", profile, "profile CSV path")->required();
  fit->add_option("--out", out, "output model path")->required();

  CLI::App* gen = app.add_subcommand("generate", "sample a request trace from a scenario");
  gen->add_option("--config", config, "scenario JSON path")->required();
  gen->add_option("--seed", seed, "RNG seed")->required();
  gen->add_option("--out", out, "output trace path")->required();

  CLI::App* simc = app.add_subcommand("simulate", "run one simulation");
  simc->add_option("--config", config, "experiment JSON path")->required();
  simc->add_option("--seed", [&](const std::vector<std::string>& v) {
      seed = std::stoull(v.at(0));
      seed_set = true;
      return true;
    }, "RNG seed override");
  simc->add_option("--out", ov.out_dir, "output directory override");
  add_common(simc);

  CLI::App* capc = app.add_subcommand("capacity", "bisect the sustainable request rate");
  capc->add_option("--config", config, "experiment JSON path")->required();
  capc->add_option("--target", target, "attainment target override");
  capc->add_option("--seed", [&](const std::vector<std::string>& v) {
      seed = std::stoull(v.at(0));
      seed_set = true;
      return true;
    }, "RNG seed override");
  capc->add_option("--out", ov.out_dir, "output directory override");
  add_common(capc);

  CLI11_PARSE(app, argc, argv);
  if (seed_set) ov.seed = seed;

  try {
    if (fit->parsed()) return cmd_fit(profile, out);
    if (gen->parsed()) return cmd_generate(config, seed, out);
    if (simc->parsed()) return cmd_simulate(config, ov);
    if (capc->parsed()) return cmd_capacity(config, target, ov);
  } catch (const Error& e) {
    std::cerr << "error [" << e.code() << "] " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error " << e.what() << "\n";
    return 1;
  }
  return 1;
}
