#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "maskdiff/errors.hpp"

namespace maskdiff {

enum class ScheduleKind { linear, cosine };

inline const char* to_string(ScheduleKind k) {
  return k == ScheduleKind::linear ? "linear" : "cosine";
}

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "linear") return ScheduleKind::linear;
  if (s == "cosine") return ScheduleKind::cosine;
  throw ConfigError("unknown schedule kind: " + s);
}

// Masking schedule alpha_t on t in [0, 1]: the probability that a token is
// still un-masked at time t. Strictly decreasing, alpha_0 = 1, alpha_1 = 0,
// with a closed-form derivative per kind.
//
//   linear: alpha_t = 1 - t
//   cosine: alpha_t = cos^2(pi t / 2)
struct Schedule {
  ScheduleKind kind = ScheduleKind::linear;

  double alpha(double t) const {
    check_time(t);
    switch (kind) {
      case ScheduleKind::linear:
        return 1.0 - t;
      case ScheduleKind::cosine: {
        double c = std::cos(0.5 * std::numbers::pi * t);
        return c * c;
      }
    }
    throw std::logic_error("unreachable");
  }

  double alpha_prime(double t) const {
    check_time(t);
    switch (kind) {
      case ScheduleKind::linear:
        return -1.0;
      case ScheduleKind::cosine:
        return -0.5 * std::numbers::pi * std::sin(std::numbers::pi * t);
    }
    throw std::logic_error("unreachable");
  }

  static void check_time(double t) {
    if (!(t >= 0.0 && t <= 1.0))
      throw std::domain_error("schedule time t=" + std::to_string(t) + " outside [0,1]");
  }
};

}  // namespace maskdiff
