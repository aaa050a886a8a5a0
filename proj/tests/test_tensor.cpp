#include <doctest.h>

#include <cmath>
#include <random>

#include "marknmt/tensor.hpp"
#include "test_helpers.hpp"

using namespace marknmt;
using marknmt::testing::GradCheck;
using marknmt::testing::random_values;

TEST_CASE("softmax basics") {
  Tape tape;
  Tensor x = tape.input({1, 3}, {0.0, 0.0, 0.0});
  Tensor y = ops::softmax(x);
  for (double v : y.value()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  Tensor one = ops::softmax(tape.input({1, 1}, {-17.5}));
  CHECK(one.value()[0] == 1.0);

  // rows sum to 1 within 1e-12
  std::mt19937_64 gen(7);
  Tensor big = ops::softmax(tape.input({4, 6}, random_values(24, gen, -8.0, 8.0)));
  for (int r = 0; r < 4; ++r) {
    double s = 0.0;
    for (int j = 0; j < 6; ++j) s += big.value()[r * 6 + j];
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("log_softmax agrees with log(softmax)") {
  std::mt19937_64 gen(11);
  Tape tape;
  auto vals = random_values(15, gen, -6.0, 6.0);
  Tensor x1 = tape.input({3, 5}, vals);
  Tensor x2 = tape.input({3, 5}, vals);
  Tensor ls = ops::log_softmax(x1);
  Tensor s = ops::softmax(x2);
  for (std::size_t i = 0; i < 15; ++i)
    CHECK(std::abs(ls.value()[i] - std::log(s.value()[i])) < 1e-9);
}

TEST_CASE("matmul matches hand-expanded dot products") {
  std::mt19937_64 gen(3);
  std::uniform_int_distribution<int> d(-4, 4);
  std::vector<double> a(6), b(6);
  for (double& x : a) x = d(gen);
  for (double& x : b) x = d(gen);
  Tape tape;
  Tensor c = ops::matmul(tape.input({2, 3}, a), tape.input({3, 2}, b));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += a[i * 3 + k] * b[k * 2 + j];
      CHECK(c.value()[i * 2 + j] == dot);
    }
}

TEST_CASE("backward of sum gives all-ones gradient") {
  Tape tape(TapeOptions{true, 0, true});
  Tensor w = tape.input({2, 3}, {1.0, -2.0, 0.5, 3.0, 4.0, -1.0});
  Tensor loss = ops::sum(w);
  tape.backward(loss);
  for (double g : w.grad()) CHECK(g == 1.0);
}

TEST_CASE("log_softmax pick-k gradient is softmax minus one-hot") {
  std::mt19937_64 gen(23);
  auto z = random_values(5, gen, -3.0, 3.0);
  const int k = 2;
  Tape tape(TapeOptions{true, 0, true});
  Tensor zt = tape.input({1, 5}, z);
  Tensor lp = ops::log_softmax(zt);
  Tensor picked = ops::gather_rows(lp, {k});
  Tensor loss = ops::sum(picked);
  tape.backward(loss);

  // closed form: d(-?)/dz_i for loss = log_softmax(z)[k] is [i==k] - softmax(z)_i
  double mx = *std::max_element(z.begin(), z.end());
  double denom = 0.0;
  for (double v : z) denom += std::exp(v - mx);
  for (int i = 0; i < 5; ++i) {
    const double soft = std::exp(z[i] - mx) / denom;
    const double expected = (i == k ? 1.0 : 0.0) - soft;
    CHECK(zt.grad()[i] == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("finite-difference gradient check across the op set") {
  GradCheck check;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    std::mt19937_64 gen(seed);
    std::uniform_int_distribution<int> dim(1, 5);
    const int m = dim(gen), k = dim(gen), n = dim(gen);

    SUBCASE("") {}  // keep doctest quiet about loops

    {
      std::vector<GradCheck::InputSpec> in = {
          {{m, k}, random_values(m * k, gen)}, {{k, n}, random_values(k * n, gen)}};
      CHECK(check.run(in, [](Tape&, std::vector<Tensor>& t) {
        return ops::matmul(t[0], t[1]);
      }, gen) < 1e-4);
    }
    {
      const int b = 2;
      std::vector<GradCheck::InputSpec> in = {
          {{b, m, k}, random_values(b * m * k, gen)},
          {{b, k, n}, random_values(b * k * n, gen)}};
      CHECK(check.run(in, [](Tape&, std::vector<Tensor>& t) {
        return ops::bmm(t[0], t[1]);
      }, gen) < 1e-4);
    }
    {
      std::vector<GradCheck::InputSpec> in = {{{m, n}, random_values(m * n, gen)},
                                              {{m, n}, random_values(m * n, gen)}};
      CHECK(check.run(in, [](Tape&, std::vector<Tensor>& t) {
        return ops::add(t[0], t[1]);
      }, gen) < 1e-4);
      CHECK(check.run(in, [](Tape&, std::vector<Tensor>& t) {
        return ops::mul(t[0], t[1]);
      }, gen) < 1e-4);
    }
    {
      std::vector<GradCheck::InputSpec> in = {{{m, n}, random_values(m * n, gen)},
                                              {{n}, random_values(n, gen)}};
      CHECK(check.run(in, [](Tape&, std::vector<Tensor>& t) {
        return ops::add_rowvec(t[0], t[1]);
      }, gen) < 1e-4);
    }
    {
      std::vector<GradCheck::InputSpec> in = {{{m, n}, random_values(m * n, gen)}};
      CHECK(check.run(in, [](Tape&, std::vector<Tensor>& t) {
        return ops::scale(t[0], -1.7);
      }, gen) < 1e-4);
      CHECK(check.run(in, [](Tape&, std::vector<Tensor>& t) {
        return ops::softmax(t[0]);
      }, gen) < 1e-4);
      CHECK(check.run(in, [](Tape&, std::vector<Tensor>& t) {
        return ops::log_softmax(t[0]);
      }, gen) < 1e-4);
      CHECK(check.run(in, [m, n](Tape&, std::vector<Tensor>& t) {
        return ops::reshape(t[0], Shape{1, m * n});
      }, gen) < 1e-4);
      CHECK(check.run(in, [](Tape&, std::vector<Tensor>& t) {
        return ops::transpose(t[0]);
      }, gen) < 1e-4);
    }
    {
      // relu and clamp_min away from their kinks
      std::vector<GradCheck::InputSpec> in = {
          {{m, n}, random_values(m * n, gen, -2.0, 2.0, 0.05)}};
      CHECK(check.run(in, [](Tape&, std::vector<Tensor>& t) {
        return ops::relu(t[0]);
      }, gen) < 1e-4);
      std::vector<GradCheck::InputSpec> in2 = {
          {{m, n}, random_values(m * n, gen, -2.0, 2.0, 0.0)}};
      // floor at -10 is far from the sampled range, and one at 0.05 tests the cut
      CHECK(check.run(in2, [](Tape&, std::vector<Tensor>& t) {
        return ops::clamp_min(t[0], -10.0);
      }, gen) < 1e-4);
    }
    {
      std::vector<GradCheck::InputSpec> in = {
          {{2, m, n}, random_values(2 * m * n, gen)}};
      CHECK(check.run(in, [](Tape&, std::vector<Tensor>& t) {
        return ops::transpose3(t[0], 1, 0, 2);
      }, gen) < 1e-4);
      CHECK(check.run(in, [](Tape&, std::vector<Tensor>& t) {
        return ops::transpose3(t[0], 0, 2, 1);
      }, gen) < 1e-4);
    }
    {
      std::vector<GradCheck::InputSpec> in = {{{4, n}, random_values(4 * n, gen)}};
      CHECK(check.run(in, [](Tape&, std::vector<Tensor>& t) {
        return ops::slice_rows(t[0], 1, 3);
      }, gen) < 1e-4);
      std::vector<int> cols = {n - 1, 0, n / 2, n - 1};
      CHECK(check.run(in, [cols](Tape&, std::vector<Tensor>& t) {
        return ops::gather_rows(t[0], cols);
      }, gen) < 1e-4);
    }
    {
      std::vector<GradCheck::InputSpec> in = {{{m, n}, random_values(m * n, gen)},
                                              {{2, n}, random_values(2 * n, gen)}};
      CHECK(check.run(in, [](Tape&, std::vector<Tensor>& t) {
        return ops::concat_rows({t[0], t[1]});
      }, gen) < 1e-4);
    }
    {
      std::vector<GradCheck::InputSpec> in = {{{m, n}, random_values(m * n, gen)},
                                              {{n}, random_values(n, gen, 0.5, 1.5)},
                                              {{n}, random_values(n, gen)}};
      CHECK(check.run(in, [](Tape&, std::vector<Tensor>& t) {
        return ops::layer_norm(t[0], t[1], t[2]);
      }, gen) < 1e-4);
    }
    {
      const int v = 6, d2 = 4;
      std::vector<GradCheck::InputSpec> in = {{{v, d2}, random_values(v * d2, gen)}};
      std::vector<int> ids = {0, 5, 2, 2};
      CHECK(check.run(in, [ids](Tape&, std::vector<Tensor>& t) {
        return ops::embedding_gather(t[0], ids);
      }, gen) < 1e-4);
    }
    {
      std::vector<GradCheck::InputSpec> in = {{{4, 5}, random_values(20, gen)}};
      CHECK(check.run(in, [](Tape&, std::vector<Tensor>& t) {
        return ops::dropout(t[0], 0.3);
      }, gen) < 1e-4);
    }
  }
}

TEST_CASE("backward error paths") {
  SUBCASE("non-scalar loss") {
    Tape tape(TapeOptions{true, 0, true});
    Tensor x = tape.input({2, 2}, {1, 2, 3, 4});
    CHECK_THROWS_AS(tape.backward(x), ShapeError);
  }
  SUBCASE("backward twice") {
    Tape tape(TapeOptions{true, 0, true});
    Tensor x = tape.input({2}, {1, 2});
    Tensor loss = ops::sum(x);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), NumericError);
  }
  SUBCASE("backward on inference tape") {
    Tape tape;
    Tensor loss = ops::sum(tape.input({2}, {1, 2}));
    CHECK_THROWS_AS(tape.backward(loss), NumericError);
  }
}

TEST_CASE("shape errors name the op and both shapes") {
  Tape tape;
  Tensor a = tape.input({2, 3}, std::vector<double>(6, 1.0));
  Tensor b = tape.input({2, 2}, std::vector<double>(4, 1.0));
  try {
    ops::matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[2,2]") != std::string::npos);
  }
}

TEST_CASE("non-finite values are rejected") {
  Tape tape;
  CHECK_THROWS_AS(tape.input({1}, {std::nan("")}), NumericError);
  Tensor big = tape.input({1}, {1e308});
  CHECK_THROWS_AS(ops::mul(big, big), NumericError);
}

TEST_CASE("determinism: identical seeds give bitwise-identical values and gradients") {
  auto run = [](std::vector<double>* grads) {
    Tape tape(TapeOptions{true, 99, true});
    std::mt19937_64 gen(5);
    Tensor a = tape.input({3, 4}, random_values(12, gen));
    Tensor b = tape.input({4, 3}, random_values(12, gen));
    Tensor h = ops::dropout(ops::relu(ops::matmul(a, b)), 0.25);
    Tensor loss = ops::sum(ops::softmax(h));
    const double v = loss.scalar();
    tape.backward(loss);
    *grads = a.grad();
    return v;
  };
  std::vector<double> g1, g2;
  const double v1 = run(&g1);
  const double v2 = run(&g2);
  CHECK(v1 == v2);
  REQUIRE(g1.size() == g2.size());
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}
