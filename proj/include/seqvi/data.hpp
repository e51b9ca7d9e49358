#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "seqvi/autodiff.hpp"

namespace seqvi::data {

using ad::Tensor;

// Observation sequences x_i of shape [T_i, d_x] with per-step validity
// masks, and optionally the latent states and Lorenz parameters that
// generated them.
struct SequenceDataset {
  std::vector<Tensor> x;
  std::vector<std::vector<std::uint8_t>> mask;
  std::vector<Tensor> z;  // empty, or one [T_i, n_z] tensor per sequence
  std::optional<std::array<double, 3>> theta;

  std::size_t size() const { return x.size(); }
  bool empty() const { return x.empty(); }
  std::size_t obs_dim() const;
  bool has_states() const { return !z.empty(); }
  std::size_t valid_steps() const;

  void push_back(Tensor seq, std::optional<Tensor> states = std::nullopt);
  // Throws if masks, widths or state counts are inconsistent.
  void validate() const;
};

// One sequence prepared for evaluation: rows split out, plus a key derived
// from the valid content that seeds its noise.
struct SequenceView {
  std::vector<Tensor> rows;
  std::vector<std::uint8_t> mask;
  std::uint64_t key = 0;
  std::size_t steps = 0;
};

SequenceView view(const Tensor& x, std::span<const std::uint8_t> mask);
std::vector<Tensor> split_rows(const Tensor& x);

// ---- Lorenz ---------------------------------------------------------------

struct LorenzConfig {
  double sigma = 28.0;
  double rho = 10.0;
  double beta = 8.0 / 3.0;
  double ts = 0.01;
  std::size_t steps = 100;
  std::size_t n_train = 50;
  std::size_t n_val = 10;
  std::size_t n_test = 10;
  double noise_var = 0.1;
  std::array<double, 3> z0{1.0, 1.0, 1.0};
  std::uint64_t seed = 0;

  void validate() const;
};

// Euler-discretized Lorenz drift, plain doubles.
std::array<double, 3> lorenz_field(const std::array<double, 3>& z, double sigma, double rho,
                                   double beta);

struct LorenzTrajectory {
  std::vector<std::array<double, 3>> z, x, q, r;
};

// z_t = z_{t-1} + ts f(z_{t-1}) + q_t from z_0 = cfg.z0, x_t = z_t + r_t.
// Returns nullopt if the trajectory leaves the finite range.
std::optional<LorenzTrajectory> simulate_lorenz(const LorenzConfig& cfg, std::uint64_t stream_seed);

struct LorenzSplits {
  SequenceDataset train, val, test;
};

// Sequences are drawn from per-index substreams of cfg.seed; indices
// [0, n_train) form the training split, then validation, then test.
LorenzSplits gen_lorenz(const LorenzConfig& cfg);

// ---- binary sequences -----------------------------------------------------

constexpr int kLowestPitch = 21;
constexpr int kHighestPitch = 108;
constexpr std::size_t kPianoKeys = 88;

// One JSON array per line; each line is a list of steps, each step a list of
// active MIDI pitches in [21, 108].
SequenceDataset load_pianoroll(const std::filesystem::path& path);
void save_pianoroll(const SequenceDataset& ds, const std::filesystem::path& path);
std::vector<std::vector<int>> decode_pianoroll(const Tensor& roll);
Tensor encode_pianoroll(const std::vector<std::vector<int>>& steps);

// Two-state hidden Markov source over d_x Bernoulli channels. The state
// persists with probability 0.95; in state 0 channel j fires with probability
// 0.1 + 0.5 j / (d_x - 1), in state 1 with 0.8 - 0.6 j / (d_x - 1).
SequenceDataset gen_synthetic_binary(std::size_t d_x, std::size_t steps, std::size_t n_seqs,
                                     std::uint64_t seed);

// ---- persistence ----------------------------------------------------------

// JSON document {"format":"seqvi-dataset","version":1,"x":..., "mask":...,
// "z":..., "theta":..., "config":...}; doubles written round-trip exact.
void save_dataset(const SequenceDataset& ds, const std::filesystem::path& path,
                  const std::optional<LorenzConfig>& cfg = std::nullopt);
SequenceDataset load_dataset(const std::filesystem::path& path);
// Dispatches on extension: .jsonl is a piano roll, anything else a dataset
// document.
SequenceDataset load_any(const std::filesystem::path& path);

// ---- batching -------------------------------------------------------------

struct Batch {
  std::vector<std::size_t> indices;
  std::vector<Tensor> x;  // padded to the batch's longest sequence
  std::vector<std::vector<std::uint8_t>> mask;
};

std::vector<Batch> minibatches(const SequenceDataset& ds, std::size_t batch_size,
                               std::uint64_t shuffle_seed);

}  // namespace seqvi::data
