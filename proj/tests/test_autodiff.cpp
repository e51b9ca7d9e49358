#include <doctest.h>

#include <cmath>
#include <limits>

#include "gradcheck.hpp"

using namespace seqvi;
using ad::Tensor;
using seqvi::testing::fd_max_rel_error;

TEST_CASE("every op matches central differences on random instances") {
  Rng rng(11, "test-autodiff");
  for (const auto& c : seqvi::testing::gradient_cases()) {
    CAPTURE(c.name);
    for (int i = 0; i < 10; ++i) {
      const auto inst = c.make(rng);
      CHECK(inst.max_rel_error() < 1e-5);
    }
  }
}

TEST_CASE("forward values of elementwise ops") {
  const Tensor a = Tensor::vector({-1.0, 0.0, 2.0});
  CHECK(ad::tanh(a)[2] == doctest::Approx(std::tanh(2.0)));
  CHECK(ad::sigmoid(a)[0] == doctest::Approx(1.0 / (1.0 + std::exp(1.0))));
  CHECK(ad::softplus(a)[2] == doctest::Approx(std::log1p(std::exp(2.0))));
  // Stable at extreme arguments.
  CHECK(ad::softplus(Tensor::scalar(800.0)).item() == doctest::Approx(800.0));
  CHECK(ad::softplus(Tensor::scalar(-800.0)).item() >= 0.0);
  CHECK(ad::sigmoid(Tensor::scalar(-800.0)).item() >= 0.0);
  CHECK(ad::logsumexp(Tensor::vector({1000.0, 1000.0})).item() ==
        doctest::Approx(1000.0 + std::log(2.0)));
}

TEST_CASE("broadcasting follows trailing dimensions") {
  const Tensor m = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor r = Tensor::vector({10, 20, 30});
  const Tensor s = ad::add(m, r);
  CHECK(s.shape() == ad::Shape{2, 3});
  CHECK(s[4] == 25.0);
  CHECK(ad::mul(Tensor::scalar(2.0), m)[5] == 12.0);
  CHECK_THROWS_AS(ad::add(m, Tensor::vector({1, 2})), ShapeError);
}

TEST_CASE("reductions along axes") {
  const Tensor m = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(ad::sum(m).item() == 21.0);
  const Tensor s0 = ad::sum(m, 0);
  CHECK(s0.shape() == ad::Shape{3});
  CHECK(s0[1] == 7.0);
  const Tensor m1 = ad::mean(m, 1);
  CHECK(m1.shape() == ad::Shape{2});
  CHECK(m1[1] == 5.0);
  CHECK_THROWS_AS(ad::sum(m, 2), ShapeError);
}

TEST_CASE("matmul and matvec shapes") {
  const Tensor a = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor b = Tensor::constant({3, 1}, {1, 0, -1});
  const Tensor c = ad::matmul(a, b);
  CHECK(c.shape() == ad::Shape{2, 1});
  CHECK(c[0] == -2.0);
  CHECK(ad::matvec(a, Tensor::vector({1, 1, 1}))[1] == 15.0);
  CHECK_THROWS_AS(ad::matmul(a, a), ShapeError);
  CHECK_THROWS_AS(ad::matvec(a, Tensor::vector({1, 1})), ShapeError);
}

TEST_CASE("structural ops") {
  const Tensor m = Tensor::constant({3, 2}, {1, 2, 3, 4, 5, 6});
  CHECK(ad::index(m, 1)[1] == 4.0);
  CHECK(ad::slice(m, 1, 2).shape() == ad::Shape{2, 2});
  CHECK_THROWS_AS(ad::slice(m, 2, 2), ShapeError);
  const std::vector<Tensor> parts{Tensor::scalar(1.0), Tensor::vector({2.0, 3.0})};
  const Tensor c = ad::concat(parts);
  CHECK(c.shape() == ad::Shape{3});
  CHECK(c[2] == 3.0);
  CHECK_THROWS_AS(ad::reshape(m, {4}), ShapeError);
  const std::vector<Tensor> rows{Tensor::vector({1.0}), Tensor::vector({1.0, 2.0})};
  CHECK_THROWS_AS(ad::stack(rows), ShapeError);
}

TEST_CASE("domain and non-finite errors name the op") {
  CHECK_THROWS_AS(ad::log(Tensor::scalar(0.0)), DomainError);
  CHECK_THROWS_AS(ad::div(Tensor::scalar(1.0), Tensor::scalar(0.0)), DomainError);
  try {
    ad::exp(Tensor::scalar(1000.0));
    FAIL("expected a non-finite error");
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.what()).find("exp") != std::string::npos);
  }
  CHECK_THROWS_AS(Tensor::vector({std::numeric_limits<double>::quiet_NaN()}) + 0.0, NonFiniteError);
}

TEST_CASE("backward contract") {
  ad::Graph g;
  const Tensor a = g.leaf(Tensor::vector({1.0, 2.0}));
  const Tensor unused = g.leaf(Tensor::scalar(5.0));
  const Tensor loss = ad::sum(ad::mul(a, a));
  const auto grads = g.backward(loss);
  CHECK(grads.at(a)[0] == 2.0);
  CHECK(grads.at(a)[1] == 4.0);
  CHECK(grads.at(unused).item() == 0.0);
  CHECK_THROWS_AS(g.backward(a), ShapeError);
  CHECK_THROWS(g.backward(Tensor::scalar(1.0)));
  ad::Graph other;
  const Tensor b = other.leaf(Tensor::scalar(1.0));
  CHECK_THROWS(ad::add(a, b));
}

TEST_CASE("constants record no tape") {
  const Tensor a = Tensor::vector({1.0, 2.0});
  const Tensor b = ad::exp(ad::mul(a, a));
  CHECK_FALSE(b.requires_grad());
  ad::Graph g;
  const Tensor l = g.leaf(a);
  CHECK_FALSE(ad::stop_gradient(l).requires_grad());
  CHECK(g.size() == 1);
}

TEST_CASE("gradients accumulate over repeated uses") {
  ad::Graph g;
  const Tensor x = g.leaf(Tensor::scalar(3.0));
  const Tensor y = ad::add(ad::mul(x, x), ad::mul(Tensor::scalar(2.0), x));
  CHECK(g.backward(y).at(x).item() == 8.0);
}

TEST_CASE("parameter sets") {
  ad::ParameterSet ps;
  ps.add("a", {2}, {1.0, 2.0});
  ps.add("b", {}, {3.0});
  CHECK(ps.total_numel() == 3);
  CHECK(ps.index("b") == 1);
  CHECK_THROWS(ps.add("a", {1}, {0.0}));
  CHECK_THROWS(ps.index("c"));
  CHECK_THROWS_AS(ps.add("c", {2}, {1.0}), ShapeError);

  ad::Graph g;
  const auto bound = ad::bind(g, ps);
  const auto grads = g.backward(ad::mul(ad::sum(bound[0]), bound[1]));
  const auto flat = ad::collect(grads, bound);
  CHECK(flat[0] == std::vector<double>{3.0, 3.0});
  CHECK(flat[1] == std::vector<double>{3.0});
}
