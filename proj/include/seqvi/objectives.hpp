#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "seqvi/generative.hpp"
#include "seqvi/inference.hpp"

namespace seqvi::obj {

using ad::Tensor;
using model::Params;

enum class BoundKind { Dkf, IwDkf };

std::string to_string(BoundKind k);
BoundKind parse_bound_kind(const std::string& s);

struct BoundConfig {
  BoundKind kind = BoundKind::Dkf;
  int K = 1;
  long anneal_total_updates = 5000;  // 0 disables annealing
  int L = 1;                         // inner Monte Carlo samples; only 1 is supported
  // When false, the IW-DKF update leaves the inference parameters untouched
  // and only the generative parameters move.
  bool inference_grads = true;

  void validate() const;
};

// Numerically stable log(sum(exp(v))).
double log_sum_exp(std::span<const double> v);

struct LogWeights {
  std::vector<double> logw;
  std::vector<double> tilde;  // softmax(logw); plain numbers, outside any graph
};

LogWeights normalize_weights(std::span<const double> logw);

// min(1, update_index / total), and 1 when total == 0.
double anneal_coef(long update_index, long total);

// log w split into its reconstruction part sum_t log p(x_t | z_t) and its
// prior part sum_t [log p(z_t | z_{t-1}) - log q(z_t | z_{t-1}, x)].
struct LogWeightTerms {
  Tensor reconstruction;
  Tensor prior_minus_q;

  // reconstruction + coef * prior_minus_q
  Tensor combined(double coef) const;
  double value() const { return reconstruction.item() + prior_minus_q.item(); }
};

LogWeightTerms log_weight_terms(const model::GenerativeModel& m, Params p,
                                std::span<const Tensor> x, const infer::PosteriorRollout& r);

// log p(x, z) - log q(z | x) for one rollout.
Tensor log_weight(const model::GenerativeModel& m, Params p, std::span<const Tensor> x,
                  const infer::PosteriorRollout& r);

// Closed-form KL along the rollout: KL(q_1 || p(z_1)) plus, for t >= 2,
// KL(q_t || p(z_t | z_{t-1})) at the sampled z_{t-1}.
Tensor rollout_kl(const model::GenerativeModel& m, Params p, const infer::PosteriorRollout& r);

// Single-rollout DKF bound with analytic KL terms:
// sum_t log p(x_t | z_t) - anneal * rollout_kl.
Tensor dkf_bound(const model::GenerativeModel& m, Params p, std::span<const Tensor> x,
                 const infer::PosteriorRollout& r, double anneal);

// Result of building one sequence's training loss.
struct SequenceObjective {
  Tensor loss;                 // minimized by the trainer
  std::vector<double> logw;    // unannealed log weights, one per rollout
  double kl = 0.0;             // rollout_kl of the first rollout
  std::size_t steps = 0;

  // log (1/K sum_k w_k), the K-sample bound estimate.
  double bound() const;
};

// eps_bank[k] holds the noise rows of rollout k.
using NoiseBank = std::span<const std::vector<Tensor>>;

// DKF estimator: loss = -log w of a single rollout, so the gradient is the
// negated gradient of log w.
SequenceObjective dkf_loss(const model::GenerativeModel& m, const infer::Proposal& q, Params p,
                           std::span<const Tensor> x, std::span<const std::uint8_t> mask,
                           NoiseBank eps_bank, double anneal);

// IW-DKF estimator: loss = -sum_k tilde_k log w_k with tilde held constant,
// so the gradient is -sum_k tilde_k grad log w_k.
SequenceObjective iwdkf_loss(const model::GenerativeModel& m, const infer::Proposal& q, Params p,
                             std::span<const Tensor> x, std::span<const std::uint8_t> mask, int K,
                             NoiseBank eps_bank, double anneal);

SequenceObjective sequence_objective(const BoundConfig& cfg, const model::GenerativeModel& m,
                                     const infer::Proposal& q, Params p,
                                     std::span<const Tensor> x,
                                     std::span<const std::uint8_t> mask, NoiseBank eps_bank,
                                     double anneal);

}  // namespace seqvi::obj
