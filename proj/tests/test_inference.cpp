#include <doctest.h>

#include <cmath>

#include "seqvi/inference.hpp"
#include "support.hpp"

using namespace seqvi;
using ad::Tensor;
using seqvi::testing::bit_equal;
using seqvi::testing::random_tensor;

namespace {

struct Net {
  Net(std::size_t d_x, std::size_t n_z, std::size_t n_h, std::uint64_t seed = 1) {
    Rng init(seed, "init");
    net = std::make_unique<infer::InferenceNetwork>(ps, d_x, n_z, n_h, init);
  }
  std::vector<Tensor> p() const { return ad::constants(ps); }
  void zero() {
    for (std::size_t i = 0; i < ps.size(); ++i) ps.set(i, std::vector<double>(ps.value(i).numel(), 0.0));
  }

  ad::ParameterSet ps;
  std::unique_ptr<infer::InferenceNetwork> net;
};

std::vector<Tensor> rows(Rng& rng, std::size_t T, std::size_t d) {
  std::vector<Tensor> x;
  for (std::size_t t = 0; t < T; ++t) x.push_back(random_tensor(rng, {d}, -2, 2));
  return x;
}

}  // namespace

TEST_CASE("valid_prefix accepts only prefix masks") {
  const std::vector<std::uint8_t> a{1, 1, 0, 0}, b{1, 0, 1}, c{0, 0};
  CHECK(infer::valid_prefix(a) == 2);
  CHECK_THROWS_AS(infer::valid_prefix(b), ShapeError);
  CHECK_THROWS_AS(infer::valid_prefix(c), ShapeError);
}

TEST_CASE("zero encoder weights give zero hidden states") {
  Net n(3, 2, 4);
  n.zero();
  Rng rng(1, "x");
  const auto x = rows(rng, 5, 3);
  const std::vector<std::uint8_t> mask(5, 1);
  for (const auto& h : n.net->encoder().encode(n.p(), x, mask))
    for (double v : h.data()) CHECK(v == 0.0);
}

TEST_CASE("single step encoding is one cell application") {
  Net n(3, 2, 4);
  Rng rng(2, "x");
  const auto x = rows(rng, 1, 3);
  const std::vector<std::uint8_t> mask{1};
  const auto p = n.p();
  const auto h = n.net->encoder().encode(p, x, mask);
  CHECK(bit_equal(h[0].data(), n.net->encoder().cell(p, x[0], Tensor::zeros({4})).data()));
}

TEST_CASE("hidden states depend only on the present and future") {
  Net n(3, 2, 4);
  Rng rng(3, "x");
  auto x = rows(rng, 6, 3);
  const std::vector<std::uint8_t> mask(6, 1);
  const auto p = n.p();
  const auto h = n.net->encoder().encode(p, x, mask);
  const std::size_t s = 3;
  x[s] = random_tensor(rng, {3}, -2, 2);
  const auto h2 = n.net->encoder().encode(p, x, mask);
  for (std::size_t t = s + 1; t < 6; ++t) CHECK(bit_equal(h[t].data(), h2[t].data()));
  CHECK_FALSE(bit_equal(h[s].data(), h2[s].data()));
  CHECK_FALSE(bit_equal(h[0].data(), h2[0].data()));
}

TEST_CASE("trailing padding does not change the valid hidden states") {
  Net n(3, 2, 4);
  Rng rng(4, "x");
  const auto x = rows(rng, 4, 3);
  auto padded = x;
  padded.push_back(random_tensor(rng, {3}, -9, 9));
  padded.push_back(random_tensor(rng, {3}, -9, 9));
  const std::vector<std::uint8_t> m4(4, 1), m6{1, 1, 1, 1, 0, 0};
  const auto p = n.p();
  const auto h = n.net->encoder().encode(p, x, m4);
  const auto hp = n.net->encoder().encode(p, padded, m6);
  for (std::size_t t = 0; t < 4; ++t) CHECK(bit_equal(h[t].data(), hp[t].data()));
  CHECK_THROWS_AS(n.net->encoder().encode(p, rows(rng, 2, 2), std::vector<std::uint8_t>(2, 1)), ShapeError);
}

TEST_CASE("zero combiner gives a standard normal") {
  Net n(3, 2, 2);
  n.zero();
  const auto q = n.net->combiner().combine(n.p(), Tensor::vector({1.0, -1.0}), Tensor::vector({0.3, 0.2}));
  CHECK(q.mean.shape() == ad::Shape{2});
  CHECK(q.log_var.shape() == ad::Shape{2});
  for (int i = 0; i < 2; ++i) {
    CHECK(q.mean[i] == 0.0);
    CHECK(q.log_var[i] == 0.0);
  }
  CHECK_THROWS_AS(n.net->combiner().combine(n.p(), Tensor::zeros({3}), Tensor::zeros({2})), ShapeError);
}

TEST_CASE("combiner passes gradient to both inputs") {
  for (std::size_t n_h : {2u, 5u}) {
    Net n(3, 2, n_h);
    ad::Graph g;
    const Tensor z = g.leaf(Tensor::vector({0.4, -0.3}));
    const Tensor h = g.leaf(Tensor::full({n_h}, 0.2));
    const auto q = n.net->combiner().combine(n.p(), z, h);
    const auto grads = g.backward(ad::add(ad::sum(q.mean), ad::sum(q.log_var)));
    auto nonzero = [](const Tensor& t) {
      for (double v : t.data())
        if (v != 0.0) return true;
      return false;
    };
    CHECK(nonzero(grads.at(z)));
    CHECK(nonzero(grads.at(h)));
  }
}

TEST_CASE("rollout contracts") {
  Net n(3, 2, 4);
  Rng rng(5, "x");
  const auto x = rows(rng, 5, 3);
  const std::vector<std::uint8_t> mask(5, 1);
  const auto p = n.p();
  const auto enc = n.net->prepare(p, x, mask);
  std::vector<Tensor> eps;
  for (int t = 0; t < 5; ++t) eps.push_back(random_tensor(rng, {2}, -2, 2));

  SUBCASE("each sample is the reparameterized draw of its step") {
    const auto r = n.net->rollout(p, enc, eps);
    for (std::size_t t = 0; t < 5; ++t) {
      CHECK(bit_equal(r.z[t].data(), dist::gaussian_rsample(r.q[t], r.eps[t]).data()));
    }
    double want = 0.0;
    for (std::size_t t = 0; t < 5; ++t) want += dist::gaussian_log_prob(r.z[t], r.q[t]).item();
    CHECK(infer::rollout_log_q(r).item() == doctest::Approx(want).epsilon(1e-14));
  }

  SUBCASE("zero noise follows the mean path") {
    const std::vector<Tensor> zero(5, Tensor::zeros({2}));
    const auto r = n.net->rollout(p, enc, zero);
    for (std::size_t t = 0; t < 5; ++t) CHECK(bit_equal(r.z[t].data(), r.q[t].mean.data()));
  }

  SUBCASE("the first step conditions on a zero state") {
    const auto r = n.net->rollout(p, enc, eps);
    const auto q1 = n.net->combiner().combine_projected(p, Tensor::zeros({2}), enc.h[0]);
    CHECK(bit_equal(r.q[0].mean.data(), q1.mean.data()));
  }

  SUBCASE("equal noise gives identical rollouts") {
    const auto a = n.net->rollout(p, enc, eps);
    const auto b = n.net->rollout(p, enc, eps);
    for (std::size_t t = 0; t < 5; ++t) CHECK(bit_equal(a.z[t].data(), b.z[t].data()));
  }

  SUBCASE("too little noise is rejected") {
    CHECK_THROWS_AS(n.net->rollout(p, enc, std::span(eps).first(3)), ShapeError);
  }
}

TEST_CASE("rollout gradient matches finite differences on a tiny instance") {
  Net n(2, 2, 3);
  Rng rng(6, "x");
  const auto x = rows(rng, 3, 2);
  std::vector<Tensor> eps;
  for (int t = 0; t < 3; ++t) eps.push_back(random_tensor(rng, {2}, -2, 2));
  const std::vector<std::uint8_t> mask(3, 1);
  const Tensor w = random_tensor(rng, {3, 2});
  std::vector<Tensor> inputs;
  for (std::size_t i = 0; i < n.ps.size(); ++i) inputs.push_back(n.ps.value(i));
  auto f = [&](std::span<const Tensor> p) {
    const auto r = n.net->rollout(p, n.net->prepare(p, x, mask), eps);
    return ad::add(ad::sum(ad::mul(ad::stack(r.z), w)), infer::rollout_log_q(r));
  };
  CHECK(seqvi::testing::fd_max_rel_error(f, inputs) < 1e-5);
}
