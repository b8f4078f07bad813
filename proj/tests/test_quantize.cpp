#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "maskdiff/quantize.hpp"

using namespace maskdiff;

TEST_CASE("rvq_encode picks the nearest code") {
  RandomStream rng(1);
  RvqState state = RvqState::init(1, 2, 2, rng);
  state.codebooks[0] = {0.0, 0.0, 1.0, 1.0};
  QuantResult r = rvq_encode(std::vector<double>{0.9, 0.9}, state);
  CHECK(r.codes == std::vector<int>{1});
  CHECK(r.quantized == std::vector<double>{1.0, 1.0});
}

TEST_CASE("rvq exact match has zero commitment loss") {
  RandomStream rng(2);
  RvqState state = RvqState::init(2, 4, 3, rng);
  // the pinned zero code in layer 1 lets the zero residual be matched exactly
  std::vector<double> v(state.code(0, 2).begin(), state.code(0, 2).end());
  QuantResult r = rvq_encode(v, state);
  CHECK(r.codes[0] == 2);
  CHECK(r.codes[1] == 0);
  CHECK(r.commit_loss == Catch::Approx(0.0).margin(1e-18));
}

TEST_CASE("rvq_decode sums the indexed codes and round-trips encode output") {
  RandomStream rng(3);
  RvqState state = RvqState::init(2, 4, 2, rng);
  state.codebooks[0] = {1, 0, 0, 1, 2, 2, 3, 3};
  state.codebooks[1] = {0, 1, 1, 0, 0.5, 0.5, 2, 2};
  // selected codes (1,0) and (0,1) sum to (1,1)
  CHECK(rvq_decode({0, 0}, state) == std::vector<double>{1.0, 1.0});

  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v{rng.uniform(-2, 2), rng.uniform(-2, 2)};
    QuantResult r = rvq_encode(v, state);
    CHECK(rvq_decode(r.codes, state) == r.quantized);  // bit-exact
  }

  RvqState zeros = RvqState::init(1, 4, 2, rng);
  for (auto& c : zeros.codebooks[0]) c = 0.0;
  CHECK(rvq_decode({3}, zeros) == std::vector<double>{0.0, 0.0});

  CHECK_THROWS_AS(rvq_decode({9}, zeros), std::out_of_range);
}

TEST_CASE("rvq residual norms are non-increasing across layers") {
  RandomStream rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> v(8);
    for (auto& x : v) x = rng.normal(0.0, 1.0);
    double prev = std::numeric_limits<double>::infinity();
    for (int layers = 1; layers <= 4; ++layers) {
      RandomStream init_rng(900);  // same codebooks across layer counts
      RvqState state = RvqState::init(4, 32, 8, init_rng);
      state.num_layers = layers;
      state.codebooks.resize(layers);
      state.ema_counts.resize(layers);
      state.ema_sums.resize(layers);
      state.updates_since_assigned.resize(layers);
      QuantResult r = rvq_encode(v, state);
      double err = 0.0;
      for (int j = 0; j < 8; ++j) {
        double diff = v[j] - r.quantized[j];
        err += diff * diff;
      }
      CHECK(err <= prev + 1e-12);
      prev = err;
    }
  }
}

TEST_CASE("rvq_ema_update moves a repeatedly assigned code to the EMA fixed point") {
  RandomStream rng(5);
  RvqState state = RvqState::init(1, 2, 2, rng);
  std::vector<double> target{2.0, -1.0};
  for (int it = 0; it < 400; ++it) {
    RvqAssignment a{0, 1, target};
    rvq_ema_update(state, {a}, 0.9, rng);
  }
  CHECK(state.codebooks[0][2] == Catch::Approx(2.0).margin(1e-6));
  CHECK(state.codebooks[0][3] == Catch::Approx(-1.0).margin(1e-6));
}

TEST_CASE("rvq_ema_update near decay=1 barely moves codes") {
  RandomStream rng(6);
  RvqState state = RvqState::init(1, 2, 2, rng);
  auto before = state.codebooks[0];
  RvqAssignment a{0, 1, {10.0, 10.0}};
  rvq_ema_update(state, {a}, 0.999999, rng);
  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK(state.codebooks[0][i] == Catch::Approx(before[i]).margin(1e-3));
}

TEST_CASE("rvq_ema_update with an empty batch leaves state unchanged") {
  RandomStream rng(7);
  RvqState state = RvqState::init(2, 4, 2, rng);
  auto before = state.codebooks;
  rvq_ema_update(state, {}, 0.9, rng);
  CHECK(state.codebooks == before);
}

TEST_CASE("dead codes reseed after the configured window") {
  RandomStream rng(8);
  RvqState state = RvqState::init(1, 2, 2, rng);
  state.dead_code_window = 5;
  state.codebooks[0] = {0.0, 0.0, 100.0, 100.0};  // code 1 will never be chosen
  state.ema_sums[0] = state.codebooks[0];

  std::vector<double> r{0.1, -0.1};
  for (int it = 0; it < 5; ++it) {
    RvqAssignment a{0, 0, r};
    rvq_ema_update(state, {a}, 0.9, rng);
    if (it < 4) {
      CHECK(state.codebooks[0][2] == 100.0);  // untouched until the window closes
    }
  }
  // reseeded from the only batch residual
  CHECK(state.codebooks[0][2] == Catch::Approx(0.1));
  CHECK(state.codebooks[0][3] == Catch::Approx(-0.1));
}

TEST_CASE("fsq rounding on the odd lattice") {
  CHECK(fsq_round_lattice(0.9, 3) == 1.0);
  CHECK(fsq_round_lattice(0.0, 3) == 0.0);
  CHECK(fsq_round_lattice(-0.9, 3) == -1.0);
}

TEST_CASE("fsq even lattices sit on half-integers") {
  for (double x : {-5.0, -1.3, -0.2, 0.0, 0.4, 2.7, 5.0}) {
    double b = fsq_bound(x, 8);
    double q = fsq_round_lattice(b, 8);
    CHECK(std::fabs(q - b) <= 0.5 + 1e-12);
    CHECK(std::fabs(q * 2.0 - std::round(q * 2.0)) < 1e-12);  // half-integer
    int d = fsq_digit(q, 8);
    CHECK(d >= 0);
    CHECK(d < 8);
    CHECK(fsq_lattice_from_digit(d, 8) == q);
  }
}

TEST_CASE("fsq round-trip error is at most half a lattice unit") {
  RandomStream rng(9);
  for (int trial = 0; trial < 2000; ++trial) {
    int levels = 2 + rng.uniform_int(7);
    double x = rng.uniform(-6, 6);
    double b = fsq_bound(x, levels);
    double q = fsq_round_lattice(b, levels);
    CHECK(std::fabs(q - b) <= 0.5 + 1e-12);
    CHECK(std::fabs(q) <= 0.5 * (levels - 1) + 1e-12);
  }
}

TEST_CASE("fsq_code_index packs mixed radix little-endian") {
  std::vector<int> levels{8, 8, 8};
  CHECK(fsq_code_index({0, 0, 0}, levels) == 0);
  CHECK(fsq_code_index({7, 7, 7}, levels) == 511);
  CHECK(fsq_code_index({1, 2, 3}, levels) == 209);
  CHECK_THROWS_AS(fsq_code_index({8, 0, 0}, levels), std::out_of_range);
}

TEST_CASE("fsq code packing is bijective for levels (8,8,8)") {
  std::vector<int> levels{8, 8, 8};
  std::vector<bool> seen(512, false);
  for (int d0 = 0; d0 < 8; ++d0)
    for (int d1 = 0; d1 < 8; ++d1)
      for (int d2 = 0; d2 < 8; ++d2) {
        int idx = fsq_code_index({d0, d1, d2}, levels);
        REQUIRE(idx >= 0);
        REQUIRE(idx < 512);
        REQUIRE(!seen[idx]);
        seen[idx] = true;
        CHECK(fsq_code_digits(idx, levels) == std::vector<int>{d0, d1, d2});
      }
}

TEST_CASE("fsq_quantize emits lattice points, packed codes, zero commit loss") {
  FsqState state = FsqState::with_groups(2);
  RandomStream rng(10);
  std::vector<double> scalars(state.total_scalar_dims());
  for (auto& s : scalars) s = rng.uniform(-4, 4);
  QuantResult r = fsq_quantize(scalars, state);
  CHECK(r.commit_loss == 0.0);
  REQUIRE(r.codes.size() == 2);
  CHECK(fsq_decode(r.codes, state) == r.quantized);
  for (int g = 0; g < 2; ++g) CHECK(state.codes_per_group(g) == 512);
}

TEST_CASE("bitrate arithmetic matches the published grid") {
  CHECK(bitrate(2, 512, 1.0) == Catch::Approx(18.0));
  CHECK(bitrate(0, 512, 1.0) == 0.0);
  // 2/4/8 layers at 9 bits per layer give 95/190/380 bits/s at the same
  // token rate; back-solve the rate from the 4-layer row
  double tps = 190.0 / (4 * 9);
  CHECK(tps == Catch::Approx(5.28).margin(0.01));
  CHECK(bitrate(4, 512, tps) == Catch::Approx(190.0));
  CHECK(bitrate(2, 512, tps) == Catch::Approx(95.0).margin(0.01));
  CHECK(bitrate(8, 512, tps) == Catch::Approx(380.0).margin(0.01));
}

TEST_CASE("quantizer dimension mismatches raise shape errors") {
  RandomStream rng(11);
  RvqState rvq = RvqState::init(1, 4, 3, rng);
  CHECK_THROWS_AS(rvq_encode(std::vector<double>{1.0, 2.0}, rvq), ShapeError);
  FsqState fsq = FsqState::with_groups(1);
  CHECK_THROWS_AS(fsq_quantize(std::vector<double>{1.0}, fsq), ShapeError);
}
