#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqvi/bundle.hpp"
#include "seqvi/data.hpp"
#include "seqvi/metrics.hpp"
#include "seqvi/objectives.hpp"

namespace seqvi::train {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moments mirror the ParameterSet layout.
struct AdamState {
  AdamConfig cfg;
  std::vector<std::vector<double>> m, v;
  long step = 0;

  static AdamState init(const ad::ParameterSet& params, AdamConfig cfg);
  nlohmann::json to_json() const;
  static AdamState from_json(const nlohmann::json& j);
};

// One bias-corrected Adam update. `grads` must hold one entry per parameter
// with matching sizes.
void adam_step(ad::ParameterSet& params, std::span<const std::vector<double>> grads, AdamState& state);

enum class UpdateMode {
  Epoch,      // gradients summed over every minibatch, one update per epoch
  Minibatch,  // one update per minibatch
};

std::string to_string(UpdateMode m);
UpdateMode parse_update_mode(const std::string& s);

struct TrainConfig {
  obj::BoundConfig bound;
  std::size_t batch_size = 10;
  std::size_t max_epochs = 1000;
  std::size_t patience = 30;
  std::uint64_t seed = 0;
  double lr = 1e-3;
  UpdateMode mode = UpdateMode::Epoch;
  double clip_norm = 10.0;  // global gradient norm; 0 disables

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochMetrics {
  std::uint64_t epoch = 0;
  double train_bound = 0.0;  // per valid step, unannealed
  double train_kl = 0.0;     // per valid step
  long updates_after = 0;    // anneal counter after the epoch
};

struct EpochRecord {
  EpochMetrics train;
  metrics::BoundReport val;
};

// (minibatch visit index, coefficient applied to that visit)
struct AnnealPoint {
  long update = 0;
  double coef = 0.0;
};

struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

struct FitProgress {
  double best_val = 0.0;
  std::optional<std::uint64_t> best_epoch;
  std::size_t since_best = 0;
};

// Everything needed to continue training bit-exactly: all per-epoch noise
// and shuffles derive from (seed, epoch), so the RNG state is next_epoch.
struct Checkpoint {
  static constexpr int kVersion = 1;

  ModelSpec model;
  std::vector<NamedTensor> params;
  AdamState adam;
  long updates = 0;
  std::uint64_t next_epoch = 0;
  TrainConfig config;
  std::optional<double> val_ll;  // validation LL of the last completed epoch
  FitProgress progress;

  static Checkpoint capture(const ModelBundle& bundle);
  ModelBundle restore() const;

  nlohmann::json to_json() const;
  static Checkpoint from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

class Trainer {
 public:
  Trainer(ModelBundle bundle, TrainConfig cfg);
  static Trainer resume(const Checkpoint& ck);

  // One pass over shuffled minibatches of `ds`.
  EpochMetrics train_epoch(const data::SequenceDataset& ds);
  // train_epoch, then validation and early-stopping bookkeeping.
  EpochRecord run_epoch(const data::SequenceDataset& train, const data::SequenceDataset& val);

  bool finished() const;
  Checkpoint checkpoint() const;
  const std::optional<Checkpoint>& best() const { return best_; }

  const ModelBundle& bundle() const { return bundle_; }
  const TrainConfig& config() const { return cfg_; }
  long updates() const { return updates_; }
  std::uint64_t next_epoch() const { return next_epoch_; }
  const AdamState& adam() const { return adam_; }
  const std::vector<AnnealPoint>& anneal_trace() const { return anneal_trace_; }
  const FitProgress& progress() const { return progress_; }

  // Test hook: when true, per-sequence work runs through the serial kernels.
  void use_serial_kernels(bool on) { serial_ = on; }

 private:
  ModelBundle bundle_;
  TrainConfig cfg_;
  AdamState adam_;
  long updates_ = 0;
  std::uint64_t next_epoch_ = 0;
  std::optional<double> last_val_;
  FitProgress progress_;
  std::optional<Checkpoint> best_;
  std::vector<AnnealPoint> anneal_trace_;
  bool serial_ = false;
};

struct FitResult {
  Checkpoint best;
  Checkpoint last;
  std::vector<EpochRecord> history;
  std::vector<AnnealPoint> anneal_trace;
};

using EpochCallback = std::function<void(const EpochRecord&, const Trainer&)>;

// Trains until `patience` epochs pass without a validation improvement or
// max_epochs is reached.
FitResult fit(const data::SequenceDataset& train, const data::SequenceDataset& val, Trainer& trainer,
              const EpochCallback& on_epoch = {});
FitResult fit(const data::SequenceDataset& train, const data::SequenceDataset& val, ModelBundle bundle,
              const TrainConfig& cfg, const EpochCallback& on_epoch = {});

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochRecord& r);

}  // namespace seqvi::train
