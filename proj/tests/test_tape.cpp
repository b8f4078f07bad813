#include <catch2/catch_amalgamated.hpp>
#include <functional>

#include "maskdiff/tape.hpp"

using namespace maskdiff;

namespace {

Mat<double> random_mat(int r, int c, RandomStream& rng, double scale = 1.0) {
  Mat<double> m(r, c);
  for (auto& x : m.v) x = rng.normal(0.0, scale);
  return m;
}

using BuildFn = std::function<int(Tape<double>&, const std::vector<int>&)>;

// Compares analytic input gradients against central finite differences for a
// scalar-valued graph built from the given inputs.
double max_grad_err(std::vector<Mat<double>> inputs, const BuildFn& build, double eps = 1e-6) {
  std::vector<Mat<double>> grads;
  {
    Tape<double> tape;
    std::vector<int> ids;
    for (auto& m : inputs) ids.push_back(tape.input(m));
    int loss = build(tape, ids);
    tape.backward(loss);
    for (int id : ids) {
      Mat<double> g(tape.rows(id), tape.cols(id));
      std::copy(tape.grad(id), tape.grad(id) + g.size(), g.data());
      grads.push_back(std::move(g));
    }
  }
  auto eval = [&](const std::vector<Mat<double>>& ins) {
    Tape<double> tape(false);
    std::vector<int> ids;
    for (auto& m : ins) ids.push_back(tape.input(m));
    return tape.scalar(build(tape, ids));
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto plus = inputs, minus = inputs;
      plus[k].data()[i] += eps;
      minus[k].data()[i] -= eps;
      double fd = (eval(plus) - eval(minus)) / (2 * eps);
      double an = grads[k].data()[i];
      double err = std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-8});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

int sum_sq(Tape<double>& t, int y) { return t.mse_const(y, Mat<double>(t.rows(y), t.cols(y)), 1.0); }

}  // namespace

TEST_CASE("matmul gradients") {
  RandomStream rng(1);
  auto err = max_grad_err({random_mat(3, 4, rng), random_mat(4, 5, rng)},
                          [](Tape<double>& t, const std::vector<int>& in) {
                            return sum_sq(t, t.matmul(in[0], in[1]));
                          });
  CHECK(err < 1e-7);
}

TEST_CASE("linear gradients") {
  RandomStream rng(2);
  auto err = max_grad_err({random_mat(3, 4, rng), random_mat(4, 5, rng), random_mat(1, 5, rng)},
                          [](Tape<double>& t, const std::vector<int>& in) {
                            return sum_sq(t, t.linear(in[0], in[1], in[2]));
                          });
  CHECK(err < 1e-7);
}

TEST_CASE("add / concat / broadcast gradients") {
  RandomStream rng(3);
  auto err = max_grad_err({random_mat(3, 4, rng), random_mat(3, 4, rng), random_mat(3, 2, rng),
                           random_mat(1, 6, rng)},
                          [](Tape<double>& t, const std::vector<int>& in) {
                            int a = t.add(in[0], in[1]);
                            int b = t.concat_cols(a, in[2]);
                            int c = t.add(b, t.broadcast_row(in[3], 3));
                            return sum_sq(t, c);
                          });
  CHECK(err < 1e-7);
}

TEST_CASE("layernorm gradients") {
  RandomStream rng(4);
  auto gamma = random_mat(1, 6, rng, 0.3);
  for (auto& g : gamma.v) g += 1.0;
  auto err = max_grad_err({random_mat(4, 6, rng), gamma, random_mat(1, 6, rng)},
                          [](Tape<double>& t, const std::vector<int>& in) {
                            return sum_sq(t, t.layernorm(in[0], in[1], in[2]));
                          });
  CHECK(err < 1e-6);
}

TEST_CASE("gelu gradients") {
  RandomStream rng(5);
  auto err = max_grad_err({random_mat(4, 6, rng)},
                          [](Tape<double>& t, const std::vector<int>& in) {
                            return sum_sq(t, t.gelu(in[0]));
                          });
  CHECK(err < 1e-6);
}

TEST_CASE("attention gradients, bidirectional and causal") {
  RandomStream rng(6);
  for (bool causal : {false, true}) {
    auto err = max_grad_err(
        {random_mat(5, 8, rng, 0.7), random_mat(5, 8, rng, 0.7), random_mat(5, 8, rng, 0.7)},
        [causal](Tape<double>& t, const std::vector<int>& in) {
          return sum_sq(t, t.attention(in[0], in[1], in[2], 2, causal));
        });
    CHECK(err < 1e-6);
  }
}

TEST_CASE("cross attention with different query/key lengths") {
  RandomStream rng(7);
  auto err = max_grad_err(
      {random_mat(3, 8, rng, 0.7), random_mat(6, 8, rng, 0.7), random_mat(6, 8, rng, 0.7)},
      [](Tape<double>& t, const std::vector<int>& in) {
        return sum_sq(t, t.attention(in[0], in[1], in[2], 4, false));
      });
  CHECK(err < 1e-6);
}

TEST_CASE("embedding gather gradients") {
  RandomStream rng(8);
  auto err = max_grad_err({random_mat(7, 4, rng)},
                          [](Tape<double>& t, const std::vector<int>& in) {
                            return sum_sq(t, t.embed(in[0], {2, 2, 0, 6}));
                          });
  CHECK(err < 1e-7);
}

TEST_CASE("masked_ce matches finite differences and skips unselected rows") {
  RandomStream rng(9);
  auto err = max_grad_err({random_mat(4, 6, rng)},
                          [](Tape<double>& t, const std::vector<int>& in) {
                            return t.masked_ce(in[0], {1, 2, 3, 0}, {1, 0, 1, 1}, 5, 1.7);
                          });
  CHECK(err < 1e-7);

  // unselected rows receive no gradient
  Tape<double> tape;
  int logits = tape.input(random_mat(3, 4, rng));
  int loss = tape.masked_ce(logits, {0, 1, 2}, {1, 0, 1}, 4, 1.0);
  tape.backward(loss);
  for (int c = 0; c < 4; ++c) CHECK(tape.grad(logits)[4 + c] == 0.0);
}

TEST_CASE("masked_ce with nothing selected is exactly zero") {
  RandomStream rng(10);
  Tape<double> tape;
  int logits = tape.input(random_mat(3, 4, rng));
  int loss = tape.masked_ce(logits, {0, 1, 2}, {0, 0, 0}, 4, 1.0);
  CHECK(tape.scalar(loss) == 0.0);
  tape.backward(loss);
  for (std::size_t i = 0; i < 12; ++i) CHECK(tape.grad(logits)[i] == 0.0);
}

TEST_CASE("st_offset passes gradients straight through") {
  RandomStream rng(11);
  Mat<double> offset = random_mat(3, 4, rng);
  Tape<double> tape;
  Mat<double> x = random_mat(3, 4, rng);
  int xi = tape.input(x);
  int y = tape.st_offset(xi, offset);
  int loss = sum_sq(tape, y);
  tape.backward(loss);
  for (std::size_t i = 0; i < x.size(); ++i) {
    double expect = 2.0 * (x.data()[i] + offset.data()[i]);
    CHECK(tape.grad(xi)[i] == Catch::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("fsq_bound_cols gradients") {
  RandomStream rng(12);
  auto err = max_grad_err({random_mat(3, 4, rng, 1.5)},
                          [](Tape<double>& t, const std::vector<int>& in) {
                            return sum_sq(t, t.fsq_bound_cols(in[0], {8, 8, 8, 5}));
                          });
  CHECK(err < 1e-6);
}

TEST_CASE("param leaves accumulate into external buffers") {
  RandomStream rng(13);
  Mat<double> w = random_mat(3, 3, rng);
  std::vector<double> sink(9, 0.0);
  Mat<double> x = random_mat(2, 3, rng);

  Tape<double> tape;
  int wid = tape.param(w.data(), sink.data(), 3, 3);
  int xid = tape.constant(x);
  int loss = sum_sq(tape, tape.matmul(xid, wid));
  tape.backward(loss);

  // run a second tape against the same buffer: gradients add up
  Tape<double> tape2;
  int wid2 = tape2.param(w.data(), sink.data(), 3, 3);
  int xid2 = tape2.constant(x);
  int loss2 = sum_sq(tape2, tape2.matmul(xid2, wid2));
  tape2.backward(loss2);

  Tape<double> ref;
  int wr = ref.input(w);
  int xr = ref.constant(x);
  ref.backward(sum_sq(ref, ref.matmul(xr, wr)));
  for (int i = 0; i < 9; ++i) CHECK(sink[i] == Catch::Approx(2.0 * ref.grad(wr)[i]));
}

TEST_CASE("no-grad tapes compute identical values") {
  RandomStream rng(14);
  Mat<double> x = random_mat(4, 6, rng);
  Mat<double> g = random_mat(1, 6, rng);
  Mat<double> b = random_mat(1, 6, rng);
  auto run = [&](bool track) {
    Tape<double> t(track);
    int y = t.layernorm(t.input(x), t.input(g), t.input(b));
    return t.value_copy(t.gelu(y));
  };
  auto a = run(true), c = run(false);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == c.data()[i]);
}

TEST_CASE("backward seed scales gradients linearly") {
  RandomStream rng(15);
  Mat<double> x = random_mat(2, 3, rng);
  Tape<double> t1, t2;
  int a1 = t1.input(x);
  t1.backward(sum_sq(t1, t1.gelu(a1)));
  int a2 = t2.input(x);
  t2.backward(sum_sq(t2, t2.gelu(a2)), 0.25);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(t2.grad(a2)[i] == Catch::Approx(0.25 * t1.grad(a1)[i]).epsilon(1e-12));
}
