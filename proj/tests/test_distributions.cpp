#include <doctest.h>

#include <cmath>
#include <numbers>

#include "seqvi/distributions.hpp"
#include "support.hpp"

using namespace seqvi;
using ad::Tensor;

namespace {

double ref_log_normal(double x, double m, double lv) {
  return -0.5 * (std::log(2.0 * std::numbers::pi) + lv + (x - m) * (x - m) / std::exp(lv));
}

}  // namespace

TEST_CASE("gaussian_log_prob sums independent dimensions") {
  const auto g = dist::make_gaussian(Tensor::vector({0.5, -1.0}), Tensor::vector({0.2, -0.7}));
  const Tensor x = Tensor::vector({1.5, 0.0});
  const double want = ref_log_normal(1.5, 0.5, 0.2) + ref_log_normal(0.0, -1.0, -0.7);
  CHECK(dist::gaussian_log_prob(x, g).item() == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("standard normal density at the origin") {
  const auto g = dist::make_gaussian(Tensor::zeros({3}), Tensor::zeros({3}));
  CHECK(dist::gaussian_log_prob(Tensor::zeros({3}), g).item() ==
        doctest::Approx(-1.5 * std::log(2.0 * std::numbers::pi)));
}

TEST_CASE("gaussian_kl closed form") {
  const auto q = dist::make_gaussian(Tensor::vector({1.0}), Tensor::vector({std::log(2.0)}));
  const auto p = dist::make_gaussian(Tensor::vector({0.0}), Tensor::vector({0.0}));
  // KL(N(1,2) || N(0,1)) = 0.5 (2 + 1 - 1 - ln 2)
  CHECK(dist::gaussian_kl(q, p).item() == doctest::Approx(0.5 * (2.0 - std::log(2.0))));
  CHECK(dist::gaussian_kl(q, q).item() == doctest::Approx(0.0));
}

TEST_CASE("gaussian_kl agrees with a Monte Carlo estimate") {
  Rng rng(3, "test-kl");
  const auto q = dist::make_gaussian(Tensor::vector({0.3, -0.4}), Tensor::vector({-0.5, 0.4}));
  const auto p = dist::make_gaussian(Tensor::vector({-0.2, 0.1}), Tensor::vector({0.3, 0.1}));
  const int n = 200000;
  double acc = 0.0, acc2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const Tensor z = dist::gaussian_rsample(q, Tensor::vector(rng.normals(2)));
    const double d = dist::gaussian_log_prob(z, q).item() - dist::gaussian_log_prob(z, p).item();
    acc += d;
    acc2 += d * d;
  }
  const double mean = acc / n;
  const double se = std::sqrt((acc2 / n - mean * mean) / n);
  CHECK(std::abs(mean - dist::gaussian_kl(q, p).item()) < 4.0 * se);
}

TEST_CASE("gaussian_rsample is the affine map of eps") {
  const auto g = dist::make_gaussian(Tensor::vector({1.0, 2.0}), Tensor::vector({0.0, std::log(4.0)}));
  const Tensor z = dist::gaussian_rsample(g, Tensor::vector({0.5, -1.0}));
  CHECK(z[0] == doctest::Approx(1.5));
  CHECK(z[1] == doctest::Approx(0.0));
  CHECK_THROWS_AS(dist::gaussian_rsample(g, Tensor::vector({0.0})), ShapeError);

  ad::Graph gr;
  const Tensor eps = gr.leaf(Tensor::vector({0.5, -1.0}));
  const Tensor m = gr.leaf(Tensor::vector({1.0, 2.0}));
  const auto grads = gr.backward(ad::sum(dist::gaussian_rsample(dist::make_gaussian(m, Tensor::zeros({2})), eps)));
  CHECK(grads.at(eps)[0] == 0.0);
  CHECK(grads.at(m)[0] == 1.0);
}

TEST_CASE("bernoulli_log_prob in logit form") {
  const Tensor l = Tensor::vector({0.0, 2.0, -3.0});
  const Tensor x = Tensor::vector({1.0, 0.0, 1.0});
  const double want = std::log(0.5) + std::log(1.0 - 1.0 / (1.0 + std::exp(-2.0))) +
                      std::log(1.0 / (1.0 + std::exp(3.0)));
  CHECK(dist::bernoulli_log_prob(x, dist::BernoulliVec{l}).item() == doctest::Approx(want).epsilon(1e-13));
  // Extreme logits stay finite.
  CHECK(std::isfinite(dist::bernoulli_log_prob(Tensor::vector({0.0}), dist::BernoulliVec{Tensor::vector({700.0})}).item()));
  CHECK_THROWS_AS(dist::bernoulli_log_prob(Tensor::vector({0.5, 0, 1}), dist::BernoulliVec{l}), DomainError);
}

TEST_CASE("shape mismatches are rejected") {
  CHECK_THROWS_AS(dist::make_gaussian(Tensor::vector({0.0}), Tensor::vector({0.0, 0.0})), ShapeError);
  const auto g = dist::make_gaussian(Tensor::zeros({2}), Tensor::zeros({2}));
  CHECK_THROWS_AS(dist::gaussian_log_prob(Tensor::zeros({3}), g), ShapeError);
}
