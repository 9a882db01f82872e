#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace slosim {

struct ProfileSample {
  int64_t num_tokens = 0;
  int64_t spec_step = 0;
  double latency_s = 0.0;
};

// Batch execution-time model: latency = max over terms of
// k1*num_tokens + k2*spec_step + b. Piecewise-max captures the
// memory-bound floor and the compute-bound slope of a forward pass.
struct PerfTerm {
  double k1 = 0.0;  // seconds per batched token
  double k2 = 0.0;  // seconds per speculation step
  double b = 0.0;   // fixed per-batch overhead, seconds
};

class PerfModel {
 public:
  PerfModel() = default;
  explicit PerfModel(std::vector<PerfTerm> terms);

  const std::vector<PerfTerm>& terms() const { return terms_; }

  // Predicted batch latency in seconds. num_tokens >= 1, spec_step >= 0.
  double predict(int64_t num_tokens, int64_t spec_step = 0) const;

  // Largest batch size whose predicted latency fits in budget, capped at
  // max_tokens. Throws "infeasible-budget" when even one token does not fit.
  int64_t time2bs(double budget_s, int64_t spec_step = 0,
                  int64_t max_tokens = kDefaultMaxTokens) const;

  // Least-squares fit of a max-of-affine model by iterative regime
  // assignment: samples are assigned to their argmax term, each regime is
  // refit, repeated to convergence (at most max_iters rounds). Coefficients
  // are clamped at zero. Throws "insufficient-samples" when samples.size()
  // < 3*num_terms and "degenerate-samples" when a regime cannot be
  // identified (e.g. all samples identical).
  static PerfModel fit(const std::vector<ProfileSample>& samples, int num_terms,
                       int max_iters = 100);

  // R^2 of this model against samples.
  double r_squared(const std::vector<ProfileSample>& samples) const;

  void save(std::ostream& out) const;
  void save_file(const std::string& path) const;
  static PerfModel load(std::istream& in);
  static PerfModel load_file(const std::string& path);

  static constexpr int64_t kDefaultMaxTokens = 16384;

 private:
  std::vector<PerfTerm> terms_;
};

// Profiling CSV: header row then "num_tokens,spec_step,latency_seconds"
// per line. Throws "parse-error" with the offending line number.
std::vector<ProfileSample> load_profile_csv(const std::string& path);

}  // namespace slosim
