#include "slosim/perf_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "slosim/common.hpp"

namespace slosim {
namespace {

// Least squares over active columns of [num_tokens, spec_step, 1] with
// nonnegative coefficients (inactive columns pinned at zero). Active-set
// style: solve, drop the most negative coefficient, repeat.
PerfTerm nonneg_least_squares(const std::vector<ProfileSample>& s,
                              const std::vector<int>& idx) {
  bool use_k1 = false, use_k2 = false;
  for (int i : idx) {
    if (s[i].num_tokens != s[idx[0]].num_tokens) use_k1 = true;
    if (s[i].spec_step != s[idx[0]].spec_step) use_k2 = true;
  }
  bool active[3] = {use_k1, use_k2, true};

  auto col = [&](const ProfileSample& p, int c) -> double {
    switch (c) {
      case 0: return static_cast<double>(p.num_tokens);
      case 1: return static_cast<double>(p.spec_step);
      default: return 1.0;
    }
  };

  double coef[3] = {0.0, 0.0, 0.0};
  for (int pass = 0; pass < 4; ++pass) {
    std::vector<int> cols;
    for (int c = 0; c < 3; ++c)
      if (active[c]) cols.push_back(c);
    const int k = static_cast<int>(cols.size());
    // Normal equations A x = y on the active columns.
    std::vector<std::vector<double>> a(k, std::vector<double>(k + 1, 0.0));
    for (int i : idx) {
      for (int r = 0; r < k; ++r) {
        const double xr = col(s[i], cols[r]);
        for (int c = 0; c < k; ++c) a[r][c] += xr * col(s[i], cols[c]);
        a[r][k] += xr * s[i].latency_s;
      }
    }
    // Gaussian elimination with partial pivoting.
    for (int r = 0; r < k; ++r) {
      int piv = r;
      for (int r2 = r + 1; r2 < k; ++r2)
        if (std::fabs(a[r2][r]) > std::fabs(a[piv][r])) piv = r2;
      std::swap(a[r], a[piv]);
      if (std::fabs(a[r][r]) < 1e-30) {
        a[r][r] = 1.0;
        a[r][k] = 0.0;
        for (int c = 0; c < k; ++c)
          if (c != r) a[r][c] = 0.0;
      }
      for (int r2 = 0; r2 < k; ++r2) {
        if (r2 == r) continue;
        const double f = a[r2][r] / a[r][r];
        for (int c = r; c <= k; ++c) a[r2][c] -= f * a[r][c];
      }
    }
    coef[0] = coef[1] = coef[2] = 0.0;
    for (int r = 0; r < k; ++r) coef[cols[r]] = a[r][k] / a[r][r];

    int worst = -1;
    double worst_v = -1e-12;
    for (int c = 0; c < 3; ++c) {
      if (active[c] && coef[c] < worst_v) {
        worst = c;
        worst_v = coef[c];
      }
    }
    if (worst < 0) break;
    active[worst] = false;
    if (worst == 2) {
      // Keep the intercept column; a negative intercept clamps to zero.
      coef[2] = 0.0;
      break;
    }
  }
  return PerfTerm{std::max(coef[0], 0.0), std::max(coef[1], 0.0),
                  std::max(coef[2], 0.0)};
}

double term_value(const PerfTerm& t, double n, double s) {
  return t.k1 * n + t.k2 * s + t.b;
}

}  // namespace

PerfModel::PerfModel(std::vector<PerfTerm> terms) : terms_(std::move(terms)) {
  if (terms_.empty()) fail("invalid-parameters", "perf model needs at least one term");
  for (const auto& t : terms_) {
    if (t.k1 < 0 || t.k2 < 0 || t.b < 0)
      fail("invalid-parameters", "perf model coefficients must be nonnegative");
  }
}

double PerfModel::predict(int64_t num_tokens, int64_t spec_step) const {
  if (num_tokens < 0 || spec_step < 0)
    fail("invalid-parameters", "predict needs nonnegative num_tokens and spec_step");
  double best = 0.0;
  for (const auto& t : terms_)
    best = std::max(best, term_value(t, static_cast<double>(num_tokens),
                                     static_cast<double>(spec_step)));
  return best;
}

int64_t PerfModel::time2bs(double budget_s, int64_t spec_step,
                           int64_t max_tokens) const {
  if (max_tokens < 1) fail("invalid-parameters", "max_tokens must be positive");
  if (!time_le(predict(1, spec_step), budget_s))
    fail("infeasible-budget", "budget below single-token latency");
  int64_t lo = 1, hi = max_tokens;
  while (lo < hi) {
    const int64_t mid = lo + (hi - lo + 1) / 2;
    if (time_le(predict(mid, spec_step), budget_s))
      lo = mid;
    else
      hi = mid - 1;
  }
  return lo;
}

PerfModel PerfModel::fit(const std::vector<ProfileSample>& samples, int num_terms,
                         int max_iters) {
  if (num_terms < 1) fail("invalid-parameters", "num_terms must be >= 1");
  if (static_cast<int>(samples.size()) < 3 * num_terms)
    fail("insufficient-samples", "need at least 3 samples per term");
  std::set<int64_t> distinct;
  for (const auto& s : samples) distinct.insert(s.num_tokens);
  if (static_cast<int>(distinct.size()) < num_terms)
    fail("degenerate-samples", "fewer distinct num_tokens values than terms");

  // Initial regimes: contiguous num_tokens quantile bands.
  std::vector<int> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (samples[a].num_tokens != samples[b].num_tokens)
      return samples[a].num_tokens < samples[b].num_tokens;
    return samples[a].spec_step < samples[b].spec_step;
  });
  std::vector<int> assign(samples.size(), 0);
  for (size_t r = 0; r < order.size(); ++r)
    assign[order[r]] = static_cast<int>(r * num_terms / order.size());

  std::vector<PerfTerm> terms(num_terms);
  std::vector<PerfTerm> best_terms;
  double best_sse = std::numeric_limits<double>::infinity();

  for (int iter = 0; iter < max_iters; ++iter) {
    std::vector<std::vector<int>> groups(num_terms);
    for (size_t i = 0; i < samples.size(); ++i) groups[assign[i]].push_back(static_cast<int>(i));
    for (int g = 0; g < num_terms; ++g) {
      if (!groups[g].empty()) terms[g] = nonneg_least_squares(samples, groups[g]);
    }

    double sse = 0.0;
    bool changed = false;
    for (size_t i = 0; i < samples.size(); ++i) {
      const double n = static_cast<double>(samples[i].num_tokens);
      const double st = static_cast<double>(samples[i].spec_step);
      int arg = 0;
      double v = term_value(terms[0], n, st);
      for (int g = 1; g < num_terms; ++g) {
        const double vg = term_value(terms[g], n, st);
        // Ties prefer the smaller intercept so duplicate terms collapse
        // deterministically.
        if (vg > v + 1e-15 || (std::fabs(vg - v) <= 1e-15 && terms[g].b < terms[arg].b)) {
          v = vg;
          arg = g;
        }
      }
      const double e = v - samples[i].latency_s;
      sse += e * e;
      if (arg != assign[i]) {
        assign[i] = arg;
        changed = true;
      }
    }
    if (sse < best_sse) {
      best_sse = sse;
      best_terms = terms;
    }
    if (!changed) break;
  }

  std::sort(best_terms.begin(), best_terms.end(), [](const PerfTerm& a, const PerfTerm& b) {
    if (a.k1 != b.k1) return a.k1 < b.k1;
    if (a.k2 != b.k2) return a.k2 < b.k2;
    return a.b < b.b;
  });
  return PerfModel(std::move(best_terms));
}

double PerfModel::r_squared(const std::vector<ProfileSample>& samples) const {
  if (samples.empty()) fail("insufficient-samples", "no samples for r_squared");
  double mean = 0.0;
  for (const auto& s : samples) mean += s.latency_s;
  mean /= static_cast<double>(samples.size());
  double sse = 0.0, sst = 0.0;
  for (const auto& s : samples) {
    const double e = predict(s.num_tokens, s.spec_step) - s.latency_s;
    sse += e * e;
    sst += (s.latency_s - mean) * (s.latency_s - mean);
  }
  if (sst <= 0.0) return sse <= 1e-18 ? 1.0 : 0.0;
  return 1.0 - sse / sst;
}

void PerfModel::save(std::ostream& out) const {
  out << "perf_model v1\n" << terms_.size() << "\n";
  out.precision(17);
  for (const auto& t : terms_) out << t.k1 << " " << t.k2 << " " << t.b << "\n";
}

void PerfModel::save_file(const std::string& path) const {
  std::ofstream out(path);
  if (!out) fail("parse-error", "cannot open " + path + " for writing");
  save(out);
}

PerfModel PerfModel::load(std::istream& in) {
  std::string header;
  std::getline(in, header);
  if (header != "perf_model v1") fail("parse-error", "bad perf model header: " + header);
  size_t n = 0;
  in >> n;
  if (!in || n == 0) fail("parse-error", "bad perf model term count");
  std::vector<PerfTerm> terms(n);
  for (size_t i = 0; i < n; ++i) {
    in >> terms[i].k1 >> terms[i].k2 >> terms[i].b;
    if (!in) fail("parse-error", "bad perf model term at index " + std::to_string(i));
  }
  return PerfModel(std::move(terms));
}

PerfModel PerfModel::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("parse-error", "cannot open " + path);
  return load(in);
}

std::vector<ProfileSample> load_profile_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("parse-error", "cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) fail("parse-error", path + ": empty profile file");
  // Header row is mandatory; accept any column naming but require 3 fields.
  std::vector<ProfileSample> out;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    ProfileSample s;
    if (!(ss >> s.num_tokens >> s.spec_step >> s.latency_s))
      fail("parse-error", path + ":" + std::to_string(line_no) + ": malformed sample row");
    if (s.num_tokens < 1 || s.spec_step < 0 || s.latency_s <= 0.0)
      fail("parse-error", path + ":" + std::to_string(line_no) + ": out-of-range sample");
    out.push_back(s);
  }
  return out;
}

}  // namespace slosim
