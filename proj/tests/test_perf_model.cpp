#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "slosim/common.hpp"
#include "slosim/perf_model.hpp"

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

std::vector<ProfileSample> synth_samples(const PerfModel& m, int64_t max_tokens, double noise,
                                         uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-noise, noise);
  std::vector<ProfileSample> out;
  for (int64_t n = 8; n <= max_tokens; n += 97)
    for (int64_t s : {0, 2, 5}) {
      double lat = m.predict(n, s);
      if (noise > 0) lat *= 1.0 + u(rng);
      out.push_back({n, s, lat});
    }
  return out;
}

}  // namespace

TEST_CASE("predict takes the max across terms") {
  PerfModel m({{1e-4, 0.0, 0.02}, {0.0, 0.0, 0.03}});
  CHECK(m.predict(50) == doctest::Approx(0.03).epsilon(1e-12));
  CHECK(m.predict(200) == doctest::Approx(0.04).epsilon(1e-12));
  // crossover sits where the sloped term overtakes the floor
  CHECK(m.predict(100) == doctest::Approx(0.03).epsilon(1e-12));
  CHECK(m.predict(101) == doctest::Approx(0.0301).epsilon(1e-12));
}

TEST_CASE("predict charges speculation steps") {
  PerfModel m({{1e-4, 5e-4, 0.02}});
  CHECK(m.predict(100, 4) == doctest::Approx(0.032).epsilon(1e-12));
  CHECK(m.predict(100, 0) == doctest::Approx(0.03).epsilon(1e-12));
}

TEST_CASE("time2bs inverts predict") {
  PerfModel m({{1e-4, 0.0, 0.02}});
  CHECK(m.time2bs(0.05) == 300);
  // the returned size fits, one more does not
  CHECK(m.predict(300) <= 0.05 + kTimeEps);
  CHECK(m.predict(301) > 0.05);
  CHECK(thrown_code([&] { m.time2bs(0.019); }) == "infeasible-budget");
}

TEST_CASE("time2bs respects the cap and spec steps") {
  PerfModel m({{1e-5, 1e-3, 0.005}});
  CHECK(m.time2bs(10.0, 0, 512) == 512);
  int64_t with_spec = m.time2bs(0.05, 8);
  int64_t without = m.time2bs(0.05, 0);
  CHECK(with_spec < without);
  CHECK(m.predict(with_spec, 8) <= 0.05 + kTimeEps);
  CHECK(m.predict(with_spec + 1, 8) > 0.05);
}

TEST_CASE("time2bs is monotone in the budget") {
  PerfModel m({{2.5e-5, 2e-3, 0.006}, {0.0, 0.0, 0.02}});
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.021, 0.4);
  for (int i = 0; i < 200; ++i) {
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    CHECK(m.time2bs(a) <= m.time2bs(b));
  }
}

TEST_CASE("fit recovers a two-regime model from clean data") {
  PerfModel truth({{2.5e-5, 2e-3, 0.006}, {0.0, 0.0, 0.02}});
  auto samples = synth_samples(truth, 8192, 0.0, 1);
  PerfModel fitted = PerfModel::fit(samples, 2);
  for (const auto& s : samples)
    CHECK(std::abs(fitted.predict(s.num_tokens, s.spec_step) - s.latency_s) <= 1e-6);
  CHECK(fitted.r_squared(samples) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("fit stays accurate under two percent noise") {
  PerfModel truth({{2.5e-5, 2e-3, 0.006}, {0.0, 0.0, 0.02}});
  auto samples = synth_samples(truth, 8192, 0.02, 2);
  PerfModel fitted = PerfModel::fit(samples, 2);
  CHECK(fitted.r_squared(samples) >= 0.99);
}

TEST_CASE("fit rejects starved and degenerate inputs") {
  PerfModel truth({{1e-4, 0.0, 0.01}});
  auto few = synth_samples(truth, 200, 0.0, 3);
  few.resize(4);
  CHECK(thrown_code([&] { PerfModel::fit(few, 2); }) == "insufficient-samples");
  std::vector<ProfileSample> flat(12, ProfileSample{100, 0, 0.02});
  CHECK(thrown_code([&] { PerfModel::fit(flat, 2); }) == "degenerate-samples");
}

TEST_CASE("save and load round-trip exactly") {
  PerfModel m({{2.5e-5, 2e-3, 0.006}, {0.0, 0.0, 0.02}});
  std::stringstream ss;
  m.save(ss);
  PerfModel back = PerfModel::load(ss);
  REQUIRE(back.terms().size() == m.terms().size());
  for (int64_t n : {1, 57, 300, 4096})
    CHECK(back.predict(n, 3) == m.predict(n, 3));
}

TEST_CASE("profile csv loads and flags bad rows with line numbers") {
  const char* path = "test_profile_tmp.csv";
  {
    std::ofstream f(path);
    f << "num_tokens,spec_step,latency_seconds\n";
    f << "128,0,0.02\n256,2,0.025\n";
  }
  auto rows = load_profile_csv(path);
  REQUIRE(rows.size() == 2);
  CHECK(rows[1].num_tokens == 256);
  CHECK(rows[1].spec_step == 2);
  CHECK(rows[1].latency_s == doctest::Approx(0.025));
  {
    std::ofstream f(path);
    f << "num_tokens,spec_step,latency_seconds\n";
    f << "128,0,0.02\nnot,a,row\n";
  }
  try {
    load_profile_csv(path);
    FAIL("expected parse-error");
  } catch (const Error& e) {
    CHECK(e.code() == "parse-error");
    CHECK(std::string(e.what()).find("3") != std::string::npos);
  }
  std::remove(path);
}
