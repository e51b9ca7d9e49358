#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "seqvi/distributions.hpp"
#include "seqvi/generative.hpp"

namespace seqvi::infer {

using ad::Tensor;
using model::Params;

// One reparameterized draw of z_{1:T} from q(z | x).
struct PosteriorRollout {
  std::vector<Tensor> z;
  std::vector<dist::DiagGaussian> q;
  std::vector<Tensor> eps;

  std::size_t steps() const { return z.size(); }
};

// Per-sequence quantities computed once and shared by all K rollouts.
struct Encoded {
  std::vector<Tensor> h;
  std::size_t steps = 0;
};

// Number of leading valid steps; throws if the mask is not of the form
// 1...1 0...0 or has no valid step.
std::size_t valid_prefix(std::span<const std::uint8_t> mask);

// A sequential proposal q(z_t | z_{t-1}, x).
class Proposal {
 public:
  virtual ~Proposal() = default;
  virtual std::size_t latent_dim() const = 0;
  virtual Encoded prepare(Params p, std::span<const Tensor> x,
                          std::span<const std::uint8_t> mask) const = 0;
  // eps supplies one standard-normal row per valid step.
  virtual PosteriorRollout rollout(Params p, const Encoded& enc,
                                   std::span<const Tensor> eps) const = 0;
};

// Gated recurrent unit run backward in time, so h_t summarizes x_{t:T}.
class GruEncoder {
 public:
  GruEncoder(ad::ParameterSet& params, std::size_t d_x, std::size_t n_h, Rng& init);

  std::size_t input_dim() const { return d_x_; }
  std::size_t hidden_dim() const { return n_h_; }

  Tensor cell(Params p, const Tensor& x, const Tensor& h) const;
  // Masked steps carry the later hidden state through unchanged.
  std::vector<Tensor> encode(Params p, std::span<const Tensor> x,
                             std::span<const std::uint8_t> mask) const;

 private:
  std::size_t d_x_, n_h_;
  std::size_t wr_, ur_, br_, wu_, uu_, bu_, wc_, uc_, bc_;
};

// c = (tanh(W_z z_prev + b_z) + P h) / 2, mean = W_mu c + b_mu,
// log_var = W_lv c + b_lv. P is the identity when n_h == n_z.
class Combiner {
 public:
  Combiner(ad::ParameterSet& params, std::size_t n_z, std::size_t n_h, Rng& init);

  dist::DiagGaussian combine(Params p, const Tensor& z_prev, const Tensor& h) const;
  // P h, hoisted out of the per-sample loop.
  Tensor project(Params p, const Tensor& h) const;
  dist::DiagGaussian combine_projected(Params p, const Tensor& z_prev, const Tensor& ph) const;

  std::size_t latent_dim() const { return n_z_; }
  std::size_t hidden_dim() const { return n_h_; }

 private:
  std::size_t n_z_, n_h_;
  std::size_t wz_, bz_, proj_, wmu_, bmu_, wlv_, blv_;
  bool has_proj_;
};

class InferenceNetwork final : public Proposal {
 public:
  InferenceNetwork(ad::ParameterSet& params, std::size_t d_x, std::size_t n_z, std::size_t n_h,
                   Rng& init);

  std::size_t latent_dim() const override { return combiner_.latent_dim(); }
  std::size_t hidden_dim() const { return combiner_.hidden_dim(); }
  const GruEncoder& encoder() const { return encoder_; }
  const Combiner& combiner() const { return combiner_; }

  Encoded prepare(Params p, std::span<const Tensor> x,
                  std::span<const std::uint8_t> mask) const override;
  PosteriorRollout rollout(Params p, const Encoded& enc,
                           std::span<const Tensor> eps) const override;

 private:
  GruEncoder encoder_;
  Combiner combiner_;
};

// Sum over steps of log q_t(z_t), recomputed from the stored step densities.
Tensor rollout_log_q(const PosteriorRollout& r);

}  // namespace seqvi::infer
