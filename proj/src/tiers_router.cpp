#include "slosim/tiers_router.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "slosim/common.hpp"

namespace slosim {

using nlohmann::json;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

// Spreads replica seeds apart so their noise draws stay uncorrelated.
uint64_t replica_seed(uint64_t base, int idx) {
  uint64_t x = base + 0x9E3779B97F4A7C15ULL * (uint64_t)(idx + 1);
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  return x;
}
}  // namespace

void ClusterConfig::validate() const {
  if (replicas < 1) fail("invalid-parameters", "cluster needs at least one replica");
  if (routing_limit < 0) fail("invalid-parameters", "routing_limit must be >= 0");
  if (backup != "decline" && backup != "best_effort_on_origin")
    fail("invalid-parameters", "unknown backup policy: " + backup);
  if (net_delay_s < 0) fail("invalid-parameters", "net_delay_s must be >= 0");
}

ClusterConfig load_cluster_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("parse-error", "cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail("parse-error", path + ": " + e.what());
  }
  ClusterConfig c;
  try {
    c.replicas = j.value("replicas", 1);
    c.routing_limit = j.value("routing_limit", 3);
    c.backup = j.value("backup", "decline");
    c.net_delay_s = j.value("net_delay_s", 0.001);
  } catch (const json::exception& e) {
    fail("parse-error", path + ": " + e.what());
  }
  c.validate();
  return c;
}

ClusterSim::ClusterSim(const PerfModel& model, const SloConfig& slo, const ExecConfig& exec,
                       const ClusterConfig& cluster, DebugFn debug)
    : cluster_(cluster), debug_(std::move(debug)) {
  cluster_.validate();
  replicas_.reserve(cluster_.replicas);
  for (int i = 0; i < cluster_.replicas; ++i) {
    ExecConfig rc = exec;
    rc.seed = cluster_.replicas == 1 ? exec.seed : replica_seed(exec.seed, i);
    DebugFn rd;
    if (debug_) {
      DebugFn sink = debug_;
      rd = [sink, i](const std::string& line) {
        sink("{\"replica\":" + std::to_string(i) + ",\"inner\":" + line + "}");
      };
    }
    replicas_.push_back(std::make_unique<ReplicaSim>(
        model, slo, rc,
        [this, i](const std::string& id) { return on_decline(i, id); }, std::move(rd)));
  }
}

ClusterSim::~ClusterSim() = default;

DeclineAction ClusterSim::on_decline(int replica_idx, const std::string& id) {
  RouteState& rs = routes_.at(id);
  int n = static_cast<int>(replicas_.size());
  int effective_limit = std::min(cluster_.routing_limit, n - 1);
  double t = replicas_[replica_idx]->now() + cluster_.net_delay_s;
  if (rs.hops < effective_limit) {
    ++rs.hops;
    heap_.push({t, seq_++, (replica_idx + 1) % n, false, rs.hops, id});
    return DeclineAction::kRemove;
  }
  if (cluster_.backup == "best_effort_on_origin") {
    if (replica_idx == rs.origin) return DeclineAction::kDemoteBestEffort;
    heap_.push({t, seq_++, rs.origin, true, rs.hops, id});
    return DeclineAction::kRemove;
  }
  // backup "decline": the request leaves the system unserved
  RequestRecord rec;
  rec.id = id;
  rec.value = rs.spec.value;
  rec.arrival_s = rs.spec.arrival_s;
  rec.total_tokens = rs.spec.total_tokens();
  rec.hops = rs.hops;
  rec.dropped = true;
  dropped_.push_back(std::move(rec));
  if (debug_)
    debug_("{\"event\":\"cluster-drop\",\"id\":\"" + id +
           "\",\"hops\":" + std::to_string(rs.hops) + "}");
  return DeclineAction::kRemove;
}

std::vector<RequestRecord> ClusterSim::run(const std::vector<RequestSpec>& trace) {
  if (ran_) fail("invalid-parameters", "ClusterSim::run is single use");
  ran_ = true;

  std::vector<RequestSpec> sorted = trace;
  std::sort(sorted.begin(), sorted.end(), [](const RequestSpec& a, const RequestSpec& b) {
    if (a.arrival_s != b.arrival_s) return a.arrival_s < b.arrival_s;
    return a.id < b.id;
  });
  int n = static_cast<int>(replicas_.size());
  int rr = 0;
  for (const RequestSpec& req : sorted) {
    if (routes_.count(req.id)) fail("invalid-parameters", "duplicate request id " + req.id);
    routes_.emplace(req.id, RouteState{req, rr, 0});
    heap_.push({req.arrival_s, seq_++, rr, false, 0, req.id});
    rr = (rr + 1) % n;
  }

  int64_t guard = 0;
  while (true) {
    if (++guard > 200000000LL) fail("internal-inconsistency", "cluster simulation stuck");
    if (heap_.empty()) {
      bool all = true;
      for (auto& rep : replicas_)
        if (!rep->drained()) {
          all = false;
          break;
        }
      if (all) break;
    }
    double ev_t = heap_.empty() ? kInf : heap_.top().t;
    double rep_t = kInf;
    int bi = -1;
    for (int i = 0; i < n; ++i) {
      double t = replicas_[i]->next_time();
      if (t < rep_t) {
        rep_t = t;
        bi = i;
      }
    }
    if (ev_t <= rep_t) {
      Transfer tr = heap_.top();
      heap_.pop();
      ReplicaSim& rep = *replicas_[tr.target];
      rep.advance_to(tr.t);
      rep.inject(routes_.at(tr.id).spec, tr.t, tr.best_effort, tr.hops);
    } else if (bi >= 0) {
      replicas_[bi]->advance_to(rep_t);
    } else {
      fail("internal-inconsistency", "cluster idle with undrained replicas");
    }
  }

  std::vector<RequestRecord> out = std::move(dropped_);
  for (auto& rep : replicas_) {
    auto part = rep->finalize();
    out.insert(out.end(), std::make_move_iterator(part.begin()),
               std::make_move_iterator(part.end()));
  }
  std::sort(out.begin(), out.end(), [](const RequestRecord& a, const RequestRecord& b) {
    if (a.arrival_s != b.arrival_s) return a.arrival_s < b.arrival_s;
    return a.id < b.id;
  });
  return out;
}

int64_t ClusterSim::total_replans() const {
  int64_t s = 0;
  for (auto& rep : replicas_) s += rep->replan_count();
  return s;
}

int64_t ClusterSim::total_batches() const {
  int64_t s = 0;
  for (auto& rep : replicas_) s += rep->batch_count();
  return s;
}

}  // namespace slosim
