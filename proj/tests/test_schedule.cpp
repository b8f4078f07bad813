#include <catch2/catch_amalgamated.hpp>

#include "maskdiff/schedule.hpp"

using namespace maskdiff;

TEST_CASE("linear schedule endpoints and midpoint") {
  Schedule s{ScheduleKind::linear};
  CHECK(s.alpha(0.0) == Catch::Approx(1.0).margin(1e-12));
  CHECK(s.alpha(1.0) == Catch::Approx(0.0).margin(1e-12));
  CHECK(s.alpha(0.5) == Catch::Approx(0.5).margin(1e-12));
  CHECK(s.alpha_prime(0.3) == Catch::Approx(-1.0));
}

TEST_CASE("cosine schedule endpoints") {
  Schedule s{ScheduleKind::cosine};
  CHECK(s.alpha(0.0) >= 1.0 - 1e-6);
  CHECK(s.alpha(1.0) <= 1e-6);
}

TEST_CASE("schedules are strictly decreasing") {
  for (auto kind : {ScheduleKind::linear, ScheduleKind::cosine}) {
    Schedule s{kind};
    double prev = s.alpha(0.0);
    for (int i = 1; i <= 200; ++i) {
      double a = s.alpha(i / 200.0);
      CHECK(a < prev);
      prev = a;
    }
  }
}

TEST_CASE("alpha_prime matches central differences") {
  const double eps = 1e-6;
  for (auto kind : {ScheduleKind::linear, ScheduleKind::cosine}) {
    Schedule s{kind};
    for (double t : {0.1, 0.25, 0.5, 0.77, 0.9}) {
      double fd = (s.alpha(t + eps) - s.alpha(t - eps)) / (2 * eps);
      CHECK(s.alpha_prime(t) == Catch::Approx(fd).margin(1e-6));
    }
  }
}

TEST_CASE("time outside the unit interval is a domain error") {
  Schedule s{ScheduleKind::linear};
  CHECK_THROWS_AS(s.alpha(-0.01), std::domain_error);
  CHECK_THROWS_AS(s.alpha(1.01), std::domain_error);
  CHECK_THROWS_AS(s.alpha_prime(2.0), std::domain_error);
}
