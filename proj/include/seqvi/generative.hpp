#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "seqvi/autodiff.hpp"
#include "seqvi/distributions.hpp"
#include "seqvi/random.hpp"

namespace seqvi::model {

using ad::Tensor;
// Parameters of a ParameterSet, bound as leaves or constants, in set order.
using Params = std::span<const Tensor>;
using Emission = std::variant<dist::DiagGaussian, dist::BernoulliVec>;

// p(z_1) p(z_t | z_{t-1}) p(x_t | z_t) with a standard normal p(z_1).
class GenerativeModel {
 public:
  virtual ~GenerativeModel() = default;

  virtual std::string kind() const = 0;
  virtual std::size_t latent_dim() const = 0;
  virtual std::size_t obs_dim() const = 0;

  dist::DiagGaussian initial_prior() const;
  virtual dist::DiagGaussian transition(Params p, const Tensor& z_prev) const = 0;
  virtual Emission emission(Params p, const Tensor& z) const = 0;

  Tensor emission_log_prob(Params p, const Tensor& x, const Tensor& z) const;

 protected:
  void check_latent(std::string_view op, const Tensor& z) const;
};

dist::DiagGaussian initial_prior(std::size_t n_z);

// Lorenz vector field (sigma (z2 - z1), z1 (rho - z3), z1 z2 - beta z3).
// The parameters are scalar tensors so gradients reach them.
Tensor lorenz_drift(const Tensor& z, const Tensor& sigma, const Tensor& rho, const Tensor& beta);

struct LorenzSettings {
  double ts = 0.01;
  double noise_var = 0.1;  // both process and observation noise
};

// z_t ~ N(z_{t-1} + ts f(z_{t-1}), noise_var I), x_t ~ N(z_t, noise_var I).
// The only learnable parameter is theta = (sigma, rho, beta), stored as
// "gen.theta".
class LorenzModel final : public GenerativeModel {
 public:
  LorenzModel(ad::ParameterSet& params, LorenzSettings settings, std::array<double, 3> theta_init);

  std::string kind() const override { return "lorenz"; }
  std::size_t latent_dim() const override { return 3; }
  std::size_t obs_dim() const override { return 3; }
  dist::DiagGaussian transition(Params p, const Tensor& z_prev) const override;
  Emission emission(Params p, const Tensor& z) const override;

  const LorenzSettings& settings() const { return settings_; }
  std::array<double, 3> theta(const ad::ParameterSet& params) const;
  std::size_t theta_index() const { return theta_; }

 private:
  LorenzSettings settings_;
  std::size_t theta_;
};

struct GatedSettings {
  std::size_t n_z = 100;
  std::size_t d_x = 88;
  std::size_t emission_hidden = 100;
  // Initial gate bias; strongly negative values start the transition close to
  // its linear branch.
  double gate_bias_init = -3.0;
};

// Gated transition: mean = (1 - g) * (W z + b) + g * h(z), with g a sigmoid
// gate and h a one-hidden-layer tanh MLP; log-variance is linear in h(z).
// Emission: one-hidden-layer tanh MLP to Bernoulli logits.
class GatedBernoulliModel final : public GenerativeModel {
 public:
  GatedBernoulliModel(ad::ParameterSet& params, GatedSettings settings, Rng& init);

  std::string kind() const override { return "gated-bernoulli"; }
  std::size_t latent_dim() const override { return settings_.n_z; }
  std::size_t obs_dim() const override { return settings_.d_x; }
  dist::DiagGaussian transition(Params p, const Tensor& z_prev) const override;
  Emission emission(Params p, const Tensor& z) const override;

  const GatedSettings& settings() const { return settings_; }
  // The linear branch W z + b alone.
  Tensor linear_branch(Params p, const Tensor& z_prev) const;

 private:
  GatedSettings settings_;
  std::size_t gate_w1_, gate_b1_, gate_w2_, gate_b2_;
  std::size_t prop_w1_, prop_b1_, prop_w2_, prop_b2_;
  std::size_t lin_w_, lin_b_, lv_w_, lv_b_;
  std::size_t emit_w1_, emit_b1_, emit_w2_, emit_b2_;
};

// log p(z_1) + sum_t log p(x_t | z_t) + sum_{t>=2} log p(z_t | z_{t-1}),
// restricted to steps with mask[t] set.
Tensor joint_log_prob(const GenerativeModel& m, Params p, std::span<const Tensor> x,
                      std::span<const Tensor> z, std::span<const std::uint8_t> mask);

// Helpers shared with the inference network.
std::vector<double> gaussian_init(Rng& rng, std::size_t n, double stddev);
std::vector<double> uniform_init(Rng& rng, std::size_t n, double bound);

}  // namespace seqvi::model
