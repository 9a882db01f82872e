#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

namespace slosim {

// Error with a stable machine-checkable code slug ("parse-error",
// "infeasible-budget", ...) plus a human message.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

[[noreturn]] inline void fail(const std::string& code, const std::string& message) {
  throw Error(code, message);
}

// Comparison slack for times measured in seconds. Token counts are exact
// integers; only clock arithmetic needs this.
inline constexpr double kTimeEps = 1e-9;

inline bool time_le(double a, double b) { return a <= b + kTimeEps; }
inline bool time_lt(double a, double b) { return a < b - kTimeEps; }

}  // namespace slosim
