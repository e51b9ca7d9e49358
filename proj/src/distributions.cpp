#include "seqvi/distributions.hpp"

#include <cmath>
#include <numbers>

namespace seqvi::dist {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2 pi)

void require_same(std::string_view op, const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  }
}

}  // namespace

DiagGaussian make_gaussian(Tensor mean, Tensor log_var) {
  require_same("DiagGaussian", mean, log_var);
  return {std::move(mean), std::move(log_var)};
}

Tensor gaussian_log_prob(const Tensor& x, const DiagGaussian& g) {
  require_same("gaussian_log_prob", x, g.mean);
  require_same("gaussian_log_prob", g.mean, g.log_var);
  const auto xv = x.data();
  const auto mu = g.mean.data();
  const auto lv = g.log_var.data();
  double s = 0.0;
  for (std::size_t j = 0; j < xv.size(); ++j) {
    const double d = xv[j] - mu[j];
    s += -kHalfLog2Pi - 0.5 * lv[j] - 0.5 * d * d * std::exp(-lv[j]);
  }
  const Tensor ins[] = {x, g.mean, g.log_var};
  return ad::custom(
      "gaussian_log_prob", ins, ad::Storage{ad::Shape{}, {s}},
      [](std::span<const double> go, std::span<const ad::StoragePtr> in, const ad::Storage&,
         std::span<std::vector<double>*> gi) {
        const auto& xd = in[0]->data;
        const auto& md = in[1]->data;
        const auto& ld = in[2]->data;
        const double g0 = go[0];
        for (std::size_t j = 0; j < xd.size(); ++j) {
          const double prec = std::exp(-ld[j]);
          const double d = xd[j] - md[j];
          if (gi[0]) (*gi[0])[j] -= g0 * d * prec;
          if (gi[1]) (*gi[1])[j] += g0 * d * prec;
          if (gi[2]) (*gi[2])[j] += g0 * (-0.5 + 0.5 * d * d * prec);
        }
      });
}

Tensor gaussian_kl(const DiagGaussian& q, const DiagGaussian& p) {
  require_same("gaussian_kl", q.mean, p.mean);
  require_same("gaussian_kl", q.mean, q.log_var);
  require_same("gaussian_kl", p.mean, p.log_var);
  const auto mq = q.mean.data();
  const auto lq = q.log_var.data();
  const auto mp = p.mean.data();
  const auto lp = p.log_var.data();
  double s = 0.0;
  for (std::size_t j = 0; j < mq.size(); ++j) {
    const double d = mq[j] - mp[j];
    s += 0.5 * (std::exp(lq[j] - lp[j]) + d * d * std::exp(-lp[j]) - 1.0 + lp[j] - lq[j]);
  }
  const Tensor ins[] = {q.mean, q.log_var, p.mean, p.log_var};
  return ad::custom(
      "gaussian_kl", ins, ad::Storage{ad::Shape{}, {s}},
      [](std::span<const double> go, std::span<const ad::StoragePtr> in, const ad::Storage&,
         std::span<std::vector<double>*> gi) {
        const auto& mq = in[0]->data;
        const auto& lq = in[1]->data;
        const auto& mp = in[2]->data;
        const auto& lp = in[3]->data;
        const double g0 = go[0];
        for (std::size_t j = 0; j < mq.size(); ++j) {
          const double d = mq[j] - mp[j];
          const double ratio = std::exp(lq[j] - lp[j]);
          const double prec_p = std::exp(-lp[j]);
          if (gi[0]) (*gi[0])[j] += g0 * d * prec_p;
          if (gi[1]) (*gi[1])[j] += g0 * 0.5 * (ratio - 1.0);
          if (gi[2]) (*gi[2])[j] -= g0 * d * prec_p;
          if (gi[3]) (*gi[3])[j] += g0 * 0.5 * (1.0 - ratio - d * d * prec_p);
        }
      });
}

Tensor gaussian_rsample(const DiagGaussian& g, const Tensor& eps) {
  require_same("gaussian_rsample", g.mean, eps);
  require_same("gaussian_rsample", g.mean, g.log_var);
  const auto mu = g.mean.data();
  const auto lv = g.log_var.data();
  const auto e = eps.data();
  std::vector<double> z(mu.size());
  for (std::size_t j = 0; j < z.size(); ++j) z[j] = mu[j] + std::exp(0.5 * lv[j]) * e[j];
  const Tensor ins[] = {g.mean, g.log_var, ad::stop_gradient(eps)};
  return ad::custom(
      "gaussian_rsample", ins, ad::Storage{g.mean.shape(), std::move(z)},
      [](std::span<const double> go, std::span<const ad::StoragePtr> in, const ad::Storage&,
         std::span<std::vector<double>*> gi) {
        const auto& lv = in[1]->data;
        const auto& e = in[2]->data;
        for (std::size_t j = 0; j < go.size(); ++j) {
          if (gi[0]) (*gi[0])[j] += go[j];
          if (gi[1]) (*gi[1])[j] += go[j] * 0.5 * std::exp(0.5 * lv[j]) * e[j];
        }
      });
}

Tensor bernoulli_log_prob(const Tensor& x, const BernoulliVec& b) {
  require_same("bernoulli_log_prob", x, b.logits);
  for (double v : x.data()) {
    if (v != 0.0 && v != 1.0) throw DomainError("bernoulli_log_prob: observation is not binary");
  }
  // x * l - softplus(l) == x log sigmoid(l) + (1 - x) log sigmoid(-l)
  return ad::sum(x * b.logits - ad::softplus(b.logits));
}

}  // namespace seqvi::dist
