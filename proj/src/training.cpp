#include "seqvi/training.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "seqvi/kernels.hpp"
#include "seqvi/random.hpp"

namespace seqvi::train {

using nlohmann::json;

// ---- Adam -----------------------------------------------------------------

AdamState AdamState::init(const ad::ParameterSet& params, AdamConfig cfg) {
  AdamState s;
  s.cfg = cfg;
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m.emplace_back(params.value(i).numel(), 0.0);
    s.v.emplace_back(params.value(i).numel(), 0.0);
  }
  return s;
}

json AdamState::to_json() const {
  return json{{"lr", cfg.lr}, {"beta1", cfg.beta1}, {"beta2", cfg.beta2}, {"eps", cfg.eps},
              {"step", step}, {"m", m},           {"v", v}};
}

AdamState AdamState::from_json(const json& j) {
  AdamState s;
  s.cfg.lr = j.at("lr").get<double>();
  s.cfg.beta1 = j.at("beta1").get<double>();
  s.cfg.beta2 = j.at("beta2").get<double>();
  s.cfg.eps = j.at("eps").get<double>();
  s.step = j.at("step").get<long>();
  s.m = j.at("m").get<std::vector<std::vector<double>>>();
  s.v = j.at("v").get<std::vector<std::vector<double>>>();
  if (s.step < 0 || s.m.size() != s.v.size()) throw Error("malformed optimizer state");
  return s;
}

void adam_step(ad::ParameterSet& params, std::span<const std::vector<double>> grads, AdamState& state) {
  if (grads.size() != params.size()) {
    throw Error("adam_step: " + std::to_string(grads.size()) + " gradient entries for " +
                std::to_string(params.size()) + " parameters");
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw Error("adam_step: optimizer state does not match the parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t n = params.value(i).numel();
    if (grads[i].size() != n || state.m[i].size() != n || state.v[i].size() != n) {
      throw Error("adam_step: missing gradient entry for '" + params.name(i) + "'");
    }
  }
  ++state.step;
  const auto& c = state.cfg;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto cur = params.value(i).data();
    std::vector<double> next(cur.begin(), cur.end());
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < next.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      next[j] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
    params.set(i, std::move(next));
  }
}

// ---- configuration --------------------------------------------------------

std::string to_string(UpdateMode m) { return m == UpdateMode::Epoch ? "epoch" : "minibatch"; }

UpdateMode parse_update_mode(const std::string& s) {
  if (s == "epoch") return UpdateMode::Epoch;
  if (s == "minibatch") return UpdateMode::Minibatch;
  throw Error("unknown update mode '" + s + "' (expected epoch or minibatch)");
}

void TrainConfig::validate() const {
  bound.validate();
  if (batch_size < 1) throw Error("batch size must be at least 1");
  if (patience < 1) throw Error("patience must be at least 1");
  if (max_epochs < 1) throw Error("max_epochs must be at least 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw Error("learning rate must be positive");
  if (!(clip_norm >= 0.0)) throw Error("clip norm must be non-negative");
}

json TrainConfig::to_json() const {
  return json{{"bound", obj::to_string(bound.kind)},
              {"K", bound.K},
              {"anneal_updates", bound.anneal_total_updates},
              {"L", bound.L},
              {"inference_grads", bound.inference_grads},
              {"batch", batch_size},
              {"epochs", max_epochs},
              {"patience", patience},
              {"seed", seed},
              {"lr", lr},
              {"update_mode", to_string(mode)},
              {"clip_norm", clip_norm}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.bound.kind = obj::parse_bound_kind(j.at("bound").get<std::string>());
  c.bound.K = j.at("K").get<int>();
  c.bound.anneal_total_updates = j.at("anneal_updates").get<long>();
  c.bound.L = j.value("L", 1);
  c.bound.inference_grads = j.value("inference_grads", true);
  c.batch_size = j.at("batch").get<std::size_t>();
  c.max_epochs = j.at("epochs").get<std::size_t>();
  c.patience = j.at("patience").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.lr = j.at("lr").get<double>();
  c.mode = parse_update_mode(j.value("update_mode", std::string("epoch")));
  c.clip_norm = j.value("clip_norm", 10.0);
  c.validate();
  return c;
}

// ---- checkpoints ----------------------------------------------------------

Checkpoint Checkpoint::capture(const ModelBundle& bundle) {
  Checkpoint ck;
  ck.model = bundle.spec();
  const auto& ps = bundle.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& t = ps.value(i);
    const auto dims = t.shape().dims();
    const auto d = t.data();
    ck.params.push_back({ps.name(i), {dims.begin(), dims.end()}, {d.begin(), d.end()}});
  }
  return ck;
}

ModelBundle Checkpoint::restore() const {
  ModelBundle b = ModelBundle::create(model, 0);
  auto& ps = b.params();
  if (params.size() != ps.size()) {
    throw Error("checkpoint holds " + std::to_string(params.size()) + " parameters, model expects " +
                std::to_string(ps.size()));
  }
  for (const auto& p : params) {
    if (!ps.contains(p.name)) throw Error("checkpoint parameter '" + p.name + "' is not in the model");
    const std::size_t i = ps.index(p.name);
    if (!(ad::Shape(std::span<const std::size_t>(p.shape)) == ps.value(i).shape())) {
      throw ShapeError("checkpoint parameter '" + p.name + "' has the wrong shape");
    }
    ps.set(i, p.data);
  }
  return b;
}

json Checkpoint::to_json() const {
  json pj = json::object();
  for (const auto& p : params) pj[p.name] = {{"shape", p.shape}, {"data", p.data}};
  json prog{{"best_val", progress.best_val}, {"since_best", progress.since_best}};
  prog["best_epoch"] = progress.best_epoch ? json(*progress.best_epoch) : json(nullptr);
  json j{{"version", kVersion},
         {"model", model.to_json()},
         {"params", pj},
         {"adam", adam.to_json()},
         {"updates", updates},
         {"rng", {{"seed", config.seed}, {"next_epoch", next_epoch}}},
         {"config", config.to_json()},
         {"progress", prog}};
  j["val_ll"] = val_ll ? json(*val_ll) : json(nullptr);
  return j;
}

Checkpoint Checkpoint::from_json(const json& j) {
  if (!j.contains("version") || j.at("version") != kVersion) {
    throw Error("incompatible checkpoint version (expected " + std::to_string(kVersion) + ")");
  }
  Checkpoint ck;
  ck.model = ModelSpec::from_json(j.at("model"));
  for (const auto& [name, v] : j.at("params").items()) {
    ck.params.push_back({name, v.at("shape").get<std::vector<std::size_t>>(),
                         v.at("data").get<std::vector<double>>()});
  }
  ck.adam = AdamState::from_json(j.at("adam"));
  ck.updates = j.at("updates").get<long>();
  ck.config = TrainConfig::from_json(j.at("config"));
  ck.config.seed = j.at("rng").at("seed").get<std::uint64_t>();
  ck.next_epoch = j.at("rng").at("next_epoch").get<std::uint64_t>();
  if (!j.at("val_ll").is_null()) ck.val_ll = j.at("val_ll").get<double>();
  const auto& prog = j.at("progress");
  ck.progress.best_val = prog.at("best_val").get<double>();
  ck.progress.since_best = prog.at("since_best").get<std::size_t>();
  if (!prog.at("best_epoch").is_null()) ck.progress.best_epoch = prog.at("best_epoch").get<std::uint64_t>();
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << to_json().dump() << '\n';
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read checkpoint " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error("malformed checkpoint " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

// ---- trainer --------------------------------------------------------------

namespace {

void scale_in_place(std::vector<std::vector<double>>& g, double s) {
  for (auto& v : g)
    for (double& x : v) x *= s;
}

void add_in_place(std::vector<std::vector<double>>& acc, const std::vector<std::vector<double>>& g) {
  if (acc.empty()) {
    acc = g;
    return;
  }
  for (std::size_t i = 0; i < acc.size(); ++i)
    for (std::size_t j = 0; j < acc[i].size(); ++j) acc[i][j] += g[i][j];
}

double global_norm(const std::vector<std::vector<double>>& g) {
  double s = 0.0;
  for (const auto& v : g)
    for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

Trainer::Trainer(ModelBundle bundle, TrainConfig cfg) : bundle_(std::move(bundle)), cfg_(std::move(cfg)) {
  cfg_.validate();
  AdamConfig ac;
  ac.lr = cfg_.lr;
  adam_ = AdamState::init(bundle_.params(), ac);
  progress_.best_val = -std::numeric_limits<double>::infinity();
}

Trainer Trainer::resume(const Checkpoint& ck) {
  Trainer t(ck.restore(), ck.config);
  t.adam_ = ck.adam;
  if (t.adam_.m.size() != t.bundle_.params().size()) throw Error("optimizer state does not match model");
  t.updates_ = ck.updates;
  t.next_epoch_ = ck.next_epoch;
  t.last_val_ = ck.val_ll;
  t.progress_ = ck.progress;
  return t;
}

EpochMetrics Trainer::train_epoch(const data::SequenceDataset& ds) {
  if (ds.empty()) throw Error("training set is empty");
  const std::uint64_t epoch = next_epoch_;
  const kernels::NoiseKey key{cfg_.seed, "rollout", epoch};
  const auto batches =
      data::minibatches(ds, cfg_.batch_size, derive_seed(cfg_.seed, "shuffle", {epoch}));

  std::vector<std::vector<double>> acc;
  std::size_t acc_steps = 0;
  double bound_sum = 0.0, kl_sum = 0.0;
  std::size_t step_sum = 0;

  auto apply = [&](std::vector<std::vector<double>>& g, std::size_t steps) {
    scale_in_place(g, 1.0 / static_cast<double>(steps));
    if (!cfg_.bound.inference_grads) {
      for (std::size_t i = 0; i < g.size(); ++i)
        if (bundle_.is_inference_param(i)) std::fill(g[i].begin(), g[i].end(), 0.0);
    }
    const double norm = global_norm(g);
    if (!std::isfinite(norm)) {
      throw NonFiniteError("non-finite gradient norm in epoch " + std::to_string(epoch));
    }
    if (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) scale_in_place(g, cfg_.clip_norm / norm);
    adam_step(bundle_.params(), g, adam_);
  };

  for (std::size_t b = 0; b < batches.size(); ++b) {
    const auto& batch = batches[b];
    const double coef = obj::anneal_coef(updates_, cfg_.bound.anneal_total_updates);
    anneal_trace_.push_back({updates_, coef});
    std::vector<data::SequenceView> views;
    views.reserve(batch.x.size());
    for (std::size_t i = 0; i < batch.x.size(); ++i) views.push_back(data::view(batch.x[i], batch.mask[i]));

    kernels::BatchGradient bg;
    try {
      bg = serial_ ? kernels::gradient_serial(bundle_, views, cfg_.bound, coef, key)
                   : kernels::gradient_parallel(bundle_, views, cfg_.bound, coef, key);
    } catch (const NonFiniteError& e) {
      throw NonFiniteError("epoch " + std::to_string(epoch) + ", minibatch " + std::to_string(b) +
                           " (anneal " + std::to_string(coef) + "): " + e.what());
    }
    ++updates_;

    std::size_t steps = 0;
    for (const auto& s : bg.stats) {
      if (!std::isfinite(s.loss)) {
        throw NonFiniteError("non-finite loss in epoch " + std::to_string(epoch) + ", minibatch " +
                             std::to_string(b));
      }
      bound_sum += s.bound();
      kl_sum += s.kl;
      steps += s.steps;
    }
    step_sum += steps;

    if (cfg_.mode == UpdateMode::Minibatch) {
      apply(bg.grads, steps);
    } else {
      add_in_place(acc, bg.grads);
      acc_steps += steps;
    }
  }
  if (cfg_.mode == UpdateMode::Epoch) apply(acc, acc_steps);

  ++next_epoch_;
  EpochMetrics em;
  em.epoch = epoch;
  em.train_bound = bound_sum / static_cast<double>(step_sum);
  em.train_kl = kl_sum / static_cast<double>(step_sum);
  em.updates_after = updates_;
  return em;
}

EpochRecord Trainer::run_epoch(const data::SequenceDataset& train, const data::SequenceDataset& val) {
  if (val.empty()) throw Error("validation set is empty");
  EpochRecord rec;
  rec.train = train_epoch(train);
  rec.val = metrics::evaluate(val, bundle_, cfg_.bound.K, kernels::NoiseKey{cfg_.seed, "eval", rec.train.epoch});
  last_val_ = rec.val.ll_per_step;
  if (rec.val.ll_per_step > progress_.best_val) {
    progress_.best_val = rec.val.ll_per_step;
    progress_.best_epoch = rec.train.epoch;
    progress_.since_best = 0;
    best_ = checkpoint();
  } else {
    ++progress_.since_best;
  }
  return rec;
}

bool Trainer::finished() const {
  return next_epoch_ >= cfg_.max_epochs || progress_.since_best >= cfg_.patience;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck = Checkpoint::capture(bundle_);
  ck.adam = adam_;
  ck.updates = updates_;
  ck.next_epoch = next_epoch_;
  ck.config = cfg_;
  ck.val_ll = last_val_;
  ck.progress = progress_;
  return ck;
}

FitResult fit(const data::SequenceDataset& train, const data::SequenceDataset& val, Trainer& trainer,
              const EpochCallback& on_epoch) {
  if (train.empty() || val.empty()) throw Error("fit needs nonempty training and validation sets");
  FitResult res;
  while (!trainer.finished()) {
    res.history.push_back(trainer.run_epoch(train, val));
    if (on_epoch) on_epoch(res.history.back(), trainer);
  }
  res.last = trainer.checkpoint();
  res.best = trainer.best() ? *trainer.best() : res.last;
  res.anneal_trace = trainer.anneal_trace();
  return res;
}

FitResult fit(const data::SequenceDataset& train, const data::SequenceDataset& val, ModelBundle bundle,
              const TrainConfig& cfg, const EpochCallback& on_epoch) {
  Trainer t(std::move(bundle), cfg);
  return fit(train, val, t, on_epoch);
}

// ---- metrics.csv ----------------------------------------------------------

std::string metrics_csv_header() {
  return "epoch,train_bound,train_kl,val_ll,val_kl,rmse_z,err_sigma,err_rho,err_beta";
}

std::string metrics_csv_row(const EpochRecord& r) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << r.train.epoch << ',' << r.train.train_bound << ',' << r.train.train_kl << ','
     << r.val.ll_per_step << ',' << r.val.kl_per_step << ',';
  if (r.val.rmse_z) os << *r.val.rmse_z;
  for (int i = 0; i < 3; ++i) {
    os << ',';
    if (r.val.param_errors) os << (*r.val.param_errors)[i];
  }
  return os.str();
}

}  // namespace seqvi::train
