#include "seqvi/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace seqvi::obj {

std::string to_string(BoundKind k) { return k == BoundKind::Dkf ? "dkf" : "iwdkf"; }

BoundKind parse_bound_kind(const std::string& s) {
  if (s == "dkf") return BoundKind::Dkf;
  if (s == "iwdkf") return BoundKind::IwDkf;
  throw Error("unknown bound kind '" + s + "' (expected dkf or iwdkf)");
}

void BoundConfig::validate() const {
  if (K < 1) throw Error("K must be at least 1");
  if (L != 1) throw Error("only L = 1 inner Monte Carlo sample is supported");
  if (anneal_total_updates < 0) throw Error("anneal update count must be non-negative");
  if (kind == BoundKind::Dkf && K != 1) throw Error("the DKF bound uses a single sample (K = 1)");
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw ShapeError("log_sum_exp of an empty set");
  const double m = *std::max_element(v.begin(), v.end());
  if (std::isinf(m)) return m;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

LogWeights normalize_weights(std::span<const double> logw) {
  LogWeights w;
  w.logw.assign(logw.begin(), logw.end());
  const double lse = log_sum_exp(logw);
  w.tilde.resize(logw.size());
  for (std::size_t k = 0; k < logw.size(); ++k) w.tilde[k] = std::exp(logw[k] - lse);
  return w;
}

double anneal_coef(long update_index, long total) {
  if (update_index < 0) throw Error("anneal_coef: negative update index");
  if (total < 0) throw Error("anneal_coef: negative schedule length");
  if (total == 0) return 1.0;
  return std::min(1.0, static_cast<double>(update_index) / static_cast<double>(total));
}

Tensor LogWeightTerms::combined(double coef) const {
  return reconstruction + coef * prior_minus_q;
}

LogWeightTerms log_weight_terms(const model::GenerativeModel& m, Params p,
                                std::span<const Tensor> x, const infer::PosteriorRollout& r) {
  if (r.steps() == 0 || r.steps() > x.size()) {
    throw ShapeError("log_weight: rollout of " + std::to_string(r.steps()) +
                     " steps does not fit a sequence of " + std::to_string(x.size()));
  }
  std::vector<Tensor> recon, prior;
  recon.reserve(r.steps());
  prior.reserve(2 * r.steps());
  for (std::size_t t = 0; t < r.steps(); ++t) {
    recon.push_back(m.emission_log_prob(p, x[t], r.z[t]));
    const dist::DiagGaussian pz = t == 0 ? m.initial_prior() : m.transition(p, r.z[t - 1]);
    prior.push_back(dist::gaussian_log_prob(r.z[t], pz) - dist::gaussian_log_prob(r.z[t], r.q[t]));
  }
  return {ad::sum(ad::stack(recon)), ad::sum(ad::stack(prior))};
}

Tensor log_weight(const model::GenerativeModel& m, Params p, std::span<const Tensor> x,
                  const infer::PosteriorRollout& r) {
  return log_weight_terms(m, p, x, r).combined(1.0);
}

Tensor rollout_kl(const model::GenerativeModel& m, Params p, const infer::PosteriorRollout& r) {
  std::vector<Tensor> kl;
  kl.reserve(r.steps());
  for (std::size_t t = 0; t < r.steps(); ++t) {
    const dist::DiagGaussian pz = t == 0 ? m.initial_prior() : m.transition(p, r.z[t - 1]);
    kl.push_back(dist::gaussian_kl(r.q[t], pz));
  }
  return ad::sum(ad::stack(kl));
}

Tensor dkf_bound(const model::GenerativeModel& m, Params p, std::span<const Tensor> x,
                 const infer::PosteriorRollout& r, double anneal) {
  if (!(anneal >= 0.0 && anneal <= 1.0)) throw Error("dkf_bound: anneal coefficient outside [0, 1]");
  std::vector<Tensor> recon;
  recon.reserve(r.steps());
  for (std::size_t t = 0; t < r.steps(); ++t) recon.push_back(m.emission_log_prob(p, x[t], r.z[t]));
  return ad::sum(ad::stack(recon)) - anneal * rollout_kl(m, p, r);
}

double SequenceObjective::bound() const {
  return log_sum_exp(logw) - std::log(static_cast<double>(logw.size()));
}

namespace {

void check_anneal(double anneal) {
  if (!(anneal >= 0.0 && anneal <= 1.0)) throw Error("anneal coefficient outside [0, 1]");
}

}  // namespace

SequenceObjective dkf_loss(const model::GenerativeModel& m, const infer::Proposal& q, Params p,
                           std::span<const Tensor> x, std::span<const std::uint8_t> mask,
                           NoiseBank eps_bank, double anneal) {
  check_anneal(anneal);
  if (eps_bank.empty()) throw Error("dkf_loss: no noise supplied");
  const infer::Encoded enc = q.prepare(p, x, mask);
  const infer::PosteriorRollout r = q.rollout(p, enc, eps_bank[0]);
  const LogWeightTerms terms = log_weight_terms(m, p, x, r);
  SequenceObjective out;
  out.loss = -terms.combined(anneal);
  out.logw = {terms.value()};
  out.kl = rollout_kl(m, p, r).item();
  out.steps = enc.steps;
  return out;
}

SequenceObjective iwdkf_loss(const model::GenerativeModel& m, const infer::Proposal& q, Params p,
                             std::span<const Tensor> x, std::span<const std::uint8_t> mask, int K,
                             NoiseBank eps_bank, double anneal) {
  check_anneal(anneal);
  if (K < 1) throw Error("iwdkf_loss: K must be at least 1");
  if (eps_bank.size() < static_cast<std::size_t>(K)) {
    throw Error("iwdkf_loss: noise bank holds fewer than K rollouts");
  }
  const infer::Encoded enc = q.prepare(p, x, mask);
  SequenceObjective out;
  out.steps = enc.steps;
  std::vector<Tensor> lw;
  std::vector<double> lw_train;
  lw.reserve(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    const infer::PosteriorRollout r = q.rollout(p, enc, eps_bank[static_cast<std::size_t>(k)]);
    const LogWeightTerms terms = log_weight_terms(m, p, x, r);
    lw.push_back(terms.combined(anneal));
    lw_train.push_back(lw.back().item());
    out.logw.push_back(terms.value());
    if (k == 0) out.kl = rollout_kl(m, p, r).item();
  }
  // Normalized weights of the (annealed) training weights, as constants.
  const LogWeights w = normalize_weights(lw_train);
  out.loss = -ad::sum(ad::stack(lw) * Tensor::vector(w.tilde));
  return out;
}

SequenceObjective sequence_objective(const BoundConfig& cfg, const model::GenerativeModel& m,
                                     const infer::Proposal& q, Params p,
                                     std::span<const Tensor> x,
                                     std::span<const std::uint8_t> mask, NoiseBank eps_bank,
                                     double anneal) {
  if (cfg.kind == BoundKind::Dkf) return dkf_loss(m, q, p, x, mask, eps_bank, anneal);
  return iwdkf_loss(m, q, p, x, mask, cfg.K, eps_bank, anneal);
}

}  // namespace seqvi::obj
