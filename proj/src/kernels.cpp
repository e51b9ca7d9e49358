#include "seqvi/kernels.hpp"

#include <cmath>
#include <cstdlib>
#include <exception>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "seqvi/random.hpp"

namespace seqvi::kernels {

std::vector<ad::Tensor> noise_rows(const NoiseKey& key, std::uint64_t seq_key, std::size_t k,
                                   std::size_t steps, std::size_t n_z) {
  Rng rng(key.seed, key.stream, {key.epoch, seq_key, k});
  std::vector<ad::Tensor> rows;
  rows.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) rows.push_back(ad::Tensor::vector(rng.normals(n_z)));
  return rows;
}

double SequenceStats::bound() const {
  return obj::log_sum_exp(logw) - std::log(static_cast<double>(logw.size()));
}

namespace {

std::vector<std::vector<ad::Tensor>> noise_bank(const NoiseKey& key, const data::SequenceView& s,
                                                int K, std::size_t n_z) {
  std::vector<std::vector<ad::Tensor>> bank;
  bank.reserve(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    bank.push_back(noise_rows(key, s.key, static_cast<std::size_t>(k), s.steps, n_z));
  }
  return bank;
}

struct SequenceGradient {
  std::vector<std::vector<double>> grads;
  SequenceStats stats;
};

SequenceGradient sequence_gradient(const ModelBundle& bundle, const data::SequenceView& s,
                                   const obj::BoundConfig& cfg, double anneal, const NoiseKey& key) {
  ad::Graph g;
  const std::vector<ad::Tensor> p = ad::bind(g, bundle.params());
  const auto bank = noise_bank(key, s, cfg.K, bundle.spec().n_z);
  const obj::SequenceObjective o =
      obj::sequence_objective(cfg, bundle.model(), bundle.infnet(), p, s.rows, s.mask, bank, anneal);
  SequenceGradient out;
  out.grads = ad::collect(g.backward(o.loss), p);
  out.stats.logw = o.logw;
  out.stats.kl = o.kl;
  out.stats.loss = o.loss.item();
  out.stats.steps = o.steps;
  return out;
}

SequenceStats sequence_eval(const ModelBundle& bundle, const data::SequenceView& s, int K,
                            const NoiseKey& key) {
  const std::vector<ad::Tensor> p = ad::constants(bundle.params());
  const auto& m = bundle.model();
  const auto& q = bundle.infnet();
  const auto bank = noise_bank(key, s, K, bundle.spec().n_z);
  const infer::Encoded enc = q.prepare(p, s.rows, s.mask);
  SequenceStats st;
  st.steps = enc.steps;
  for (int k = 0; k < K; ++k) {
    const infer::PosteriorRollout r = q.rollout(p, enc, bank[static_cast<std::size_t>(k)]);
    st.logw.push_back(obj::log_weight(m, p, s.rows, r).item());
    if (k == 0) st.kl = obj::rollout_kl(m, p, r).item();
  }
  st.loss = -st.bound();
  return st;
}

BatchGradient reduce_in_order(const ModelBundle& bundle, std::vector<SequenceGradient>& parts) {
  BatchGradient out;
  out.grads.reserve(bundle.params().size());
  for (std::size_t i = 0; i < bundle.params().size(); ++i) {
    out.grads.emplace_back(bundle.params().value(i).numel(), 0.0);
  }
  for (auto& part : parts) {
    for (std::size_t i = 0; i < out.grads.size(); ++i) {
      auto& dst = out.grads[i];
      const auto& src = part.grads[i];
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
    out.stats.push_back(std::move(part.stats));
  }
  return out;
}

// Runs body(i) for i in [0, n) on the OpenMP team and rethrows the first
// exception in index order.
template <typename Body>
void parallel_for(std::size_t n, Body body) {
  std::vector<std::exception_ptr> errors(n);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

BatchGradient gradient_serial(const ModelBundle& bundle, std::span<const data::SequenceView> seqs,
                              const obj::BoundConfig& cfg, double anneal, const NoiseKey& key) {
  std::vector<SequenceGradient> parts;
  parts.reserve(seqs.size());
  for (const auto& s : seqs) parts.push_back(sequence_gradient(bundle, s, cfg, anneal, key));
  return reduce_in_order(bundle, parts);
}

BatchGradient gradient_parallel(const ModelBundle& bundle, std::span<const data::SequenceView> seqs,
                                const obj::BoundConfig& cfg, double anneal, const NoiseKey& key) {
  std::vector<SequenceGradient> parts(seqs.size());
  parallel_for(seqs.size(), [&](std::size_t i) {
    parts[i] = sequence_gradient(bundle, seqs[i], cfg, anneal, key);
  });
  return reduce_in_order(bundle, parts);
}

std::vector<SequenceStats> evaluate_serial(const ModelBundle& bundle,
                                           std::span<const data::SequenceView> seqs, int K,
                                           const NoiseKey& key) {
  std::vector<SequenceStats> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(sequence_eval(bundle, s, K, key));
  return out;
}

std::vector<SequenceStats> evaluate_parallel(const ModelBundle& bundle,
                                             std::span<const data::SequenceView> seqs, int K,
                                             const NoiseKey& key) {
  std::vector<SequenceStats> out(seqs.size());
  parallel_for(seqs.size(), [&](std::size_t i) { out[i] = sequence_eval(bundle, seqs[i], K, key); });
  return out;
}

ad::Tensor posterior_mean_path(const ModelBundle& bundle, const data::SequenceView& s) {
  const std::vector<ad::Tensor> p = ad::constants(bundle.params());
  const auto& q = bundle.infnet();
  const infer::Encoded enc = q.prepare(p, s.rows, s.mask);
  const std::vector<ad::Tensor> zero(enc.steps, ad::Tensor::zeros(ad::Shape{q.latent_dim()}));
  const infer::PosteriorRollout r = q.rollout(p, enc, zero);
  return ad::stack(r.z);
}

int configured_threads() {
  const char* env = std::getenv("SEQVI_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || n < 1) throw Error("SEQVI_THREADS must be a positive integer");
  return static_cast<int>(n);
}

void apply_thread_config() {
#ifdef _OPENMP
  omp_set_num_threads(configured_threads());
#else
  (void)configured_threads();
#endif
}

}  // namespace seqvi::kernels
