#include "seqvi/generative.hpp"

#include <cmath>

namespace seqvi::model {

std::vector<double> gaussian_init(Rng& rng, std::size_t n, double stddev) {
  std::vector<double> v(n);
  for (auto& x : v) x = stddev * rng.normal();
  return v;
}

std::vector<double> uniform_init(Rng& rng, std::size_t n, double bound) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return v;
}

dist::DiagGaussian initial_prior(std::size_t n_z) {
  return {Tensor::zeros(ad::Shape{n_z}), Tensor::zeros(ad::Shape{n_z})};
}

dist::DiagGaussian GenerativeModel::initial_prior() const {
  return model::initial_prior(latent_dim());
}

void GenerativeModel::check_latent(std::string_view op, const Tensor& z) const {
  if (z.shape().rank() != 1 || z.numel() != latent_dim()) {
    throw ShapeError(std::string(op) + ": expected latent of width " +
                     std::to_string(latent_dim()) + ", got " + z.shape().str());
  }
}

Tensor GenerativeModel::emission_log_prob(Params p, const Tensor& x, const Tensor& z) const {
  const Emission e = emission(p, z);
  if (const auto* g = std::get_if<dist::DiagGaussian>(&e)) return dist::gaussian_log_prob(x, *g);
  return dist::bernoulli_log_prob(x, std::get<dist::BernoulliVec>(e));
}

// ---- Lorenz ---------------------------------------------------------------

Tensor lorenz_drift(const Tensor& z, const Tensor& sigma, const Tensor& rho, const Tensor& beta) {
  if (z.shape().rank() != 1 || z.numel() != 3) {
    throw ShapeError("lorenz_drift: state must have 3 components, got " + z.shape().str());
  }
  const Tensor z1 = ad::index(z, 0);
  const Tensor z2 = ad::index(z, 1);
  const Tensor z3 = ad::index(z, 2);
  const Tensor f[] = {sigma * (z2 - z1), z1 * (rho - z3), z1 * z2 - beta * z3};
  return ad::stack(f);
}

LorenzModel::LorenzModel(ad::ParameterSet& params, LorenzSettings settings,
                         std::array<double, 3> theta_init)
    : settings_(settings) {
  if (!(settings.ts > 0.0)) throw Error("Lorenz step length must be positive");
  if (!(settings.noise_var > 0.0)) throw Error("Lorenz noise variance must be positive");
  theta_ = params.add("gen.theta", ad::Shape{3}, {theta_init[0], theta_init[1], theta_init[2]});
}

std::array<double, 3> LorenzModel::theta(const ad::ParameterSet& params) const {
  const auto d = params.value(theta_).data();
  return {d[0], d[1], d[2]};
}

dist::DiagGaussian LorenzModel::transition(Params p, const Tensor& z_prev) const {
  check_latent("transition", z_prev);
  const Tensor& th = p[theta_];
  const Tensor drift = lorenz_drift(z_prev, ad::index(th, 0), ad::index(th, 1), ad::index(th, 2));
  return {z_prev + settings_.ts * drift, Tensor::full(ad::Shape{3}, std::log(settings_.noise_var))};
}

Emission LorenzModel::emission(Params, const Tensor& z) const {
  check_latent("emission", z);
  return dist::DiagGaussian{z, Tensor::full(ad::Shape{3}, std::log(settings_.noise_var))};
}

// ---- gated / Bernoulli ----------------------------------------------------

GatedBernoulliModel::GatedBernoulliModel(ad::ParameterSet& params, GatedSettings s, Rng& init)
    : settings_(s) {
  const std::size_t n = s.n_z, e = s.emission_hidden, d = s.d_x;
  if (n == 0 || d == 0 || e == 0) throw Error("gated model sizes must be positive");
  const double hid_std = 1.0 / std::sqrt(static_cast<double>(n));
  auto zeros = [](std::size_t k) { return std::vector<double>(k, 0.0); };
  std::vector<double> eye(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;

  gate_w1_ = params.add("gen.trans.gate_w1", {n, n}, gaussian_init(init, n * n, hid_std));
  gate_b1_ = params.add("gen.trans.gate_b1", {n}, zeros(n));
  gate_w2_ = params.add("gen.trans.gate_w2", {n, n}, zeros(n * n));
  gate_b2_ = params.add("gen.trans.gate_b2", {n}, std::vector<double>(n, s.gate_bias_init));
  prop_w1_ = params.add("gen.trans.prop_w1", {n, n}, gaussian_init(init, n * n, hid_std));
  prop_b1_ = params.add("gen.trans.prop_b1", {n}, zeros(n));
  prop_w2_ = params.add("gen.trans.prop_w2", {n, n}, zeros(n * n));
  prop_b2_ = params.add("gen.trans.prop_b2", {n}, zeros(n));
  lin_w_ = params.add("gen.trans.lin_w", {n, n}, eye);
  lin_b_ = params.add("gen.trans.lin_b", {n}, zeros(n));
  lv_w_ = params.add("gen.trans.lv_w", {n, n}, zeros(n * n));
  lv_b_ = params.add("gen.trans.lv_b", {n}, zeros(n));
  emit_w1_ = params.add("gen.emit.w1", {e, n}, gaussian_init(init, e * n, hid_std));
  emit_b1_ = params.add("gen.emit.b1", {e}, zeros(e));
  emit_w2_ = params.add("gen.emit.w2", {d, e}, zeros(d * e));
  emit_b2_ = params.add("gen.emit.b2", {d}, zeros(d));
}

Tensor GatedBernoulliModel::linear_branch(Params p, const Tensor& z_prev) const {
  return ad::matvec(p[lin_w_], z_prev) + p[lin_b_];
}

dist::DiagGaussian GatedBernoulliModel::transition(Params p, const Tensor& z_prev) const {
  check_latent("transition", z_prev);
  const Tensor gate_hidden = ad::tanh(ad::matvec(p[gate_w1_], z_prev) + p[gate_b1_]);
  const Tensor gate = ad::sigmoid(ad::matvec(p[gate_w2_], gate_hidden) + p[gate_b2_]);
  const Tensor prop_hidden = ad::tanh(ad::matvec(p[prop_w1_], z_prev) + p[prop_b1_]);
  const Tensor proposed = ad::matvec(p[prop_w2_], prop_hidden) + p[prop_b2_];
  const Tensor lin = linear_branch(p, z_prev);
  const Tensor one = Tensor::scalar(1.0);
  Tensor mean = (one - gate) * lin + gate * proposed;
  Tensor log_var = ad::matvec(p[lv_w_], proposed) + p[lv_b_];
  return {std::move(mean), std::move(log_var)};
}

Emission GatedBernoulliModel::emission(Params p, const Tensor& z) const {
  check_latent("emission", z);
  const Tensor hidden = ad::tanh(ad::matvec(p[emit_w1_], z) + p[emit_b1_]);
  return dist::BernoulliVec{ad::matvec(p[emit_w2_], hidden) + p[emit_b2_]};
}

// ---- joint ----------------------------------------------------------------

Tensor joint_log_prob(const GenerativeModel& m, Params p, std::span<const Tensor> x,
                      std::span<const Tensor> z, std::span<const std::uint8_t> mask) {
  if (x.size() != z.size() || x.size() != mask.size()) {
    throw ShapeError("joint_log_prob: x, z and mask lengths differ (" + std::to_string(x.size()) +
                     ", " + std::to_string(z.size()) + ", " + std::to_string(mask.size()) + ")");
  }
  if (x.empty()) throw ShapeError("joint_log_prob: empty sequence");
  std::vector<Tensor> terms;
  terms.reserve(2 * x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    if (!mask[t]) continue;
    const dist::DiagGaussian prior = t == 0 ? m.initial_prior() : m.transition(p, z[t - 1]);
    terms.push_back(dist::gaussian_log_prob(z[t], prior));
    terms.push_back(m.emission_log_prob(p, x[t], z[t]));
  }
  if (terms.empty()) return Tensor::scalar(0.0);
  return ad::sum(ad::stack(terms));
}

}  // namespace seqvi::model
