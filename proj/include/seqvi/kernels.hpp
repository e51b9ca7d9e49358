#pragma once

// Per-sequence loss/gradient and evaluation kernels. Each sequence is built
// on its own graph, so sequences are independent work items; the OpenMP
// variants run them concurrently and reduce in sequence order, which makes
// their results bit-identical to the serial reference variants.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "seqvi/bundle.hpp"
#include "seqvi/data.hpp"
#include "seqvi/objectives.hpp"

namespace seqvi::kernels {

// Identifies the noise used for a pass: every sequence draws from the
// substream (seed, stream, epoch, sequence key, k).
struct NoiseKey {
  std::uint64_t seed = 0;
  std::string stream = "rollout";
  std::uint64_t epoch = 0;
};

std::vector<ad::Tensor> noise_rows(const NoiseKey& key, std::uint64_t seq_key, std::size_t k,
                                   std::size_t steps, std::size_t n_z);

struct SequenceStats {
  std::vector<double> logw;  // unannealed, one per sample
  double kl = 0.0;
  double loss = 0.0;
  std::size_t steps = 0;

  double bound() const;
};

struct BatchGradient {
  std::vector<std::vector<double>> grads;  // summed over sequences, in ParameterSet order
  std::vector<SequenceStats> stats;        // one per input sequence
};

BatchGradient gradient_serial(const ModelBundle& bundle, std::span<const data::SequenceView> seqs,
                              const obj::BoundConfig& cfg, double anneal, const NoiseKey& key);
BatchGradient gradient_parallel(const ModelBundle& bundle, std::span<const data::SequenceView> seqs,
                                const obj::BoundConfig& cfg, double anneal, const NoiseKey& key);

// Forward-only K-sample log weights and KL, no tape.
std::vector<SequenceStats> evaluate_serial(const ModelBundle& bundle,
                                           std::span<const data::SequenceView> seqs, int K,
                                           const NoiseKey& key);
std::vector<SequenceStats> evaluate_parallel(const ModelBundle& bundle,
                                             std::span<const data::SequenceView> seqs, int K,
                                             const NoiseKey& key);

// Posterior mean path: the rollout with all noise set to zero, [steps, n_z].
ad::Tensor posterior_mean_path(const ModelBundle& bundle, const data::SequenceView& seq);

// Worker count from SEQVI_THREADS (default 1).
int configured_threads();
void apply_thread_config();

}  // namespace seqvi::kernels
