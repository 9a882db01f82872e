#pragma once

#include <cstdint>
#include <memory>
#include <queue>
#include <string>
#include <unordered_map>
#include <vector>

#include "slosim/sim_executor.hpp"

namespace slosim {

struct ClusterConfig {
  int replicas = 1;
  int routing_limit = 3;           // max admission offers beyond the origin
  std::string backup = "decline";  // or "best_effort_on_origin"
  double net_delay_s = 0.001;      // per-hop transfer latency

  void validate() const;
};

ClusterConfig load_cluster_file(const std::string& path);

// Drives one simulated replica per GPU under a shared clock. New requests
// land round-robin; a replica that declines admission hands the request to
// the next replica in ring order after a network delay. Every replica is
// offered at most once, so the effective hop cap is
// min(routing_limit, replicas - 1). When the offers run out, the backup
// policy either drops the request or queues it best-effort at its origin.
// A routed request keeps the deadline derived from its original arrival.
class ClusterSim {
 public:
  ClusterSim(const PerfModel& model, const SloConfig& slo, const ExecConfig& exec,
             const ClusterConfig& cluster, DebugFn debug = {});
  ~ClusterSim();

  ClusterSim(const ClusterSim&) = delete;
  ClusterSim& operator=(const ClusterSim&) = delete;

  // Runs the trace to completion. Single use. Records merge every
  // replica's view plus cluster-level drops, sorted by (arrival, id);
  // each request appears exactly once.
  std::vector<RequestRecord> run(const std::vector<RequestSpec>& trace);

  int64_t total_replans() const;
  int64_t total_batches() const;
  int replica_count() const { return static_cast<int>(replicas_.size()); }
  const ReplicaSim& replica(int i) const { return *replicas_.at(i); }

 private:
  // request movement between replicas: initial arrivals and decline hops
  struct Transfer {
    double t = 0.0;
    int64_t seq = 0;
    int target = 0;
    bool best_effort = false;
    int hops = 0;
    std::string id;
    bool operator>(const Transfer& o) const {
      if (t != o.t) return t > o.t;
      return seq > o.seq;
    }
  };
  struct RouteState {
    RequestSpec spec;
    int origin = 0;
    int hops = 0;
  };

  DeclineAction on_decline(int replica_idx, const std::string& id);

  ClusterConfig cluster_;
  DebugFn debug_;
  std::vector<std::unique_ptr<ReplicaSim>> replicas_;
  std::unordered_map<std::string, RouteState> routes_;
  std::priority_queue<Transfer, std::vector<Transfer>, std::greater<Transfer>> heap_;
  int64_t seq_ = 0;
  std::vector<RequestRecord> dropped_;
  bool ran_ = false;
};

}  // namespace slosim
