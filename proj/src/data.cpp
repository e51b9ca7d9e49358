#include "seqvi/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "seqvi/random.hpp"

namespace seqvi::data {

using nlohmann::json;

// ---- dataset --------------------------------------------------------------

std::size_t SequenceDataset::obs_dim() const {
  if (x.empty()) return 0;
  return x.front().shape()[1];
}

std::size_t SequenceDataset::valid_steps() const {
  std::size_t n = 0;
  for (const auto& m : mask) n += static_cast<std::size_t>(std::count(m.begin(), m.end(), 1));
  return n;
}

void SequenceDataset::push_back(Tensor seq, std::optional<Tensor> states) {
  if (seq.shape().rank() != 2) throw ShapeError("sequence must be [T, d_x], got " + seq.shape().str());
  if (states.has_value() != has_states() && !x.empty()) {
    throw Error("either every sequence carries latent states or none does");
  }
  mask.emplace_back(seq.shape()[0], 1);
  x.push_back(std::move(seq));
  if (states) z.push_back(std::move(*states));
}

void SequenceDataset::validate() const {
  if (mask.size() != x.size()) throw Error("dataset: mask count differs from sequence count");
  if (!z.empty() && z.size() != x.size()) throw Error("dataset: state count differs from sequence count");
  const std::size_t d = obs_dim();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].shape().rank() != 2 || x[i].shape()[1] != d) {
      throw ShapeError("dataset: sequence " + std::to_string(i) + " has shape " +
                       x[i].shape().str() + ", expected width " + std::to_string(d));
    }
    if (mask[i].size() != x[i].shape()[0]) {
      throw ShapeError("dataset: mask length of sequence " + std::to_string(i) + " differs");
    }
    if (!z.empty() && (z[i].shape().rank() != 2 || z[i].shape()[0] != x[i].shape()[0])) {
      throw ShapeError("dataset: states of sequence " + std::to_string(i) + " have wrong length");
    }
  }
}

std::vector<Tensor> split_rows(const Tensor& x) {
  std::vector<Tensor> rows;
  const std::size_t T = x.shape()[0];
  rows.reserve(T);
  for (std::size_t t = 0; t < T; ++t) rows.push_back(ad::index(x, t));
  return rows;
}

SequenceView view(const Tensor& x, std::span<const std::uint8_t> mask) {
  if (x.shape().rank() != 2 || mask.size() != x.shape()[0]) {
    throw ShapeError("view: sequence/mask mismatch");
  }
  SequenceView v;
  v.rows = split_rows(x);
  v.mask.assign(mask.begin(), mask.end());
  while (v.steps < v.mask.size() && v.mask[v.steps]) ++v.steps;
  const std::size_t width = x.shape()[1];
  v.key = content_hash(x.data().subspan(0, v.steps * width));
  return v;
}

// ---- Lorenz ---------------------------------------------------------------

void LorenzConfig::validate() const {
  if (steps == 0) throw Error("sequence length must be positive");
  if (!(ts > 0.0)) throw Error("step length must be positive");
  if (!(noise_var >= 0.0)) throw Error("noise variance must be non-negative");
  if (n_train + n_val + n_test == 0) throw Error("at least one sequence is required");
  for (double v : {sigma, rho, beta, z0[0], z0[1], z0[2]}) {
    if (!std::isfinite(v)) throw Error("Lorenz parameters must be finite");
  }
}

std::array<double, 3> lorenz_field(const std::array<double, 3>& z, double sigma, double rho,
                                   double beta) {
  return {sigma * (z[1] - z[0]), z[0] * (rho - z[2]), z[0] * z[1] - beta * z[2]};
}

std::optional<LorenzTrajectory> simulate_lorenz(const LorenzConfig& cfg, std::uint64_t stream_seed) {
  Rng rng(stream_seed);
  const double sd = std::sqrt(cfg.noise_var);
  LorenzTrajectory tr;
  tr.z.reserve(cfg.steps);
  tr.x.reserve(cfg.steps);
  tr.q.reserve(cfg.steps);
  tr.r.reserve(cfg.steps);
  std::array<double, 3> prev = cfg.z0;
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    const auto f = lorenz_field(prev, cfg.sigma, cfg.rho, cfg.beta);
    std::array<double, 3> q{}, r{}, z{}, x{};
    for (auto& v : q) v = sd * rng.normal();
    for (auto& v : r) v = sd * rng.normal();
    for (int j = 0; j < 3; ++j) {
      z[j] = prev[j] + cfg.ts * f[j] + q[j];
      x[j] = z[j] + r[j];
      if (!std::isfinite(z[j]) || !std::isfinite(x[j])) return std::nullopt;
    }
    tr.z.push_back(z);
    tr.x.push_back(x);
    tr.q.push_back(q);
    tr.r.push_back(r);
    prev = z;
  }
  return tr;
}

namespace {

Tensor rows_to_tensor(const std::vector<std::array<double, 3>>& rows) {
  std::vector<double> flat;
  flat.reserve(rows.size() * 3);
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return Tensor::constant(ad::Shape{rows.size(), 3}, std::move(flat));
}

constexpr int kMaxAttempts = 100;

}  // namespace

LorenzSplits gen_lorenz(const LorenzConfig& cfg) {
  cfg.validate();
  LorenzSplits out;
  const std::size_t total = cfg.n_train + cfg.n_val + cfg.n_test;
  for (std::size_t i = 0; i < total; ++i) {
    std::optional<LorenzTrajectory> tr;
    for (int attempt = 0; attempt < kMaxAttempts && !tr; ++attempt) {
      tr = simulate_lorenz(cfg, derive_seed(cfg.seed, "lorenz", {i, static_cast<std::uint64_t>(attempt)}));
    }
    if (!tr) throw Error("Lorenz trajectory diverged in " + std::to_string(kMaxAttempts) + " attempts");
    SequenceDataset& dst = i < cfg.n_train ? out.train : i < cfg.n_train + cfg.n_val ? out.val : out.test;
    dst.push_back(rows_to_tensor(tr->x), rows_to_tensor(tr->z));
  }
  for (SequenceDataset* d : {&out.train, &out.val, &out.test}) {
    d->theta = std::array<double, 3>{cfg.sigma, cfg.rho, cfg.beta};
  }
  return out;
}

// ---- piano rolls ----------------------------------------------------------

Tensor encode_pianoroll(const std::vector<std::vector<int>>& steps) {
  std::vector<double> flat(steps.size() * kPianoKeys, 0.0);
  for (std::size_t t = 0; t < steps.size(); ++t) {
    for (int pitch : steps[t]) {
      if (pitch < kLowestPitch || pitch > kHighestPitch) {
        throw Error("pitch " + std::to_string(pitch) + " outside the piano range 21-108");
      }
      flat[t * kPianoKeys + static_cast<std::size_t>(pitch - kLowestPitch)] = 1.0;
    }
  }
  return Tensor::constant(ad::Shape{steps.size(), kPianoKeys}, std::move(flat));
}

std::vector<std::vector<int>> decode_pianoroll(const Tensor& roll) {
  if (roll.shape().rank() != 2 || roll.shape()[1] != kPianoKeys) {
    throw ShapeError("piano roll must be [T, 88], got " + roll.shape().str());
  }
  std::vector<std::vector<int>> steps(roll.shape()[0]);
  const auto d = roll.data();
  for (std::size_t t = 0; t < steps.size(); ++t) {
    for (std::size_t k = 0; k < kPianoKeys; ++k) {
      const double v = d[t * kPianoKeys + k];
      if (v == 1.0) {
        steps[t].push_back(kLowestPitch + static_cast<int>(k));
      } else if (v != 0.0) {
        throw Error("piano roll entries must be 0 or 1");
      }
    }
  }
  return steps;
}

SequenceDataset load_pianoroll(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  SequenceDataset ds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<std::vector<int>> steps;
    try {
      steps = json::parse(line).get<std::vector<std::vector<int>>>();
    } catch (const json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": malformed record: " + e.what());
    }
    if (steps.empty()) throw Error(path.string() + ":" + std::to_string(lineno) + ": empty sequence");
    ds.push_back(encode_pianoroll(steps));
  }
  if (ds.empty()) throw Error(path.string() + ": no sequences");
  return ds;
}

void save_pianoroll(const SequenceDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::size_t T = static_cast<std::size_t>(std::count(ds.mask[i].begin(), ds.mask[i].end(), 1));
    auto steps = decode_pianoroll(ds.x[i]);
    steps.resize(T);
    out << json(steps).dump() << '\n';
  }
}

// ---- synthetic binary -----------------------------------------------------

SequenceDataset gen_synthetic_binary(std::size_t d_x, std::size_t steps, std::size_t n_seqs,
                                     std::uint64_t seed) {
  if (d_x == 0 || steps == 0 || n_seqs == 0) throw Error("synthetic sizes must be positive");
  constexpr double kStay = 0.95;
  std::vector<double> p0(d_x), p1(d_x);
  for (std::size_t j = 0; j < d_x; ++j) {
    const double frac = d_x > 1 ? static_cast<double>(j) / static_cast<double>(d_x - 1) : 0.5;
    p0[j] = 0.1 + 0.5 * frac;
    p1[j] = 0.8 - 0.6 * frac;
  }
  SequenceDataset ds;
  for (std::size_t i = 0; i < n_seqs; ++i) {
    Rng rng(seed, "synthetic-binary", {i});
    int state = rng.uniform(0.0, 1.0) < 0.5 ? 0 : 1;
    std::vector<double> flat(steps * d_x);
    for (std::size_t t = 0; t < steps; ++t) {
      if (t > 0 && rng.uniform(0.0, 1.0) >= kStay) state = 1 - state;
      const auto& p = state == 0 ? p0 : p1;
      for (std::size_t j = 0; j < d_x; ++j) flat[t * d_x + j] = rng.uniform(0.0, 1.0) < p[j] ? 1.0 : 0.0;
    }
    ds.push_back(Tensor::constant(ad::Shape{steps, d_x}, std::move(flat)));
  }
  return ds;
}

// ---- persistence ----------------------------------------------------------

namespace {

json tensor_rows(const Tensor& t) {
  const std::size_t T = t.shape()[0], d = t.shape()[1];
  json rows = json::array();
  for (std::size_t i = 0; i < T; ++i) {
    rows.push_back(std::vector<double>(t.data().begin() + static_cast<std::ptrdiff_t>(i * d),
                                       t.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * d)));
  }
  return rows;
}

Tensor rows_tensor(const json& rows) {
  const auto v = rows.get<std::vector<std::vector<double>>>();
  if (v.empty()) throw Error("dataset: empty sequence");
  const std::size_t d = v.front().size();
  std::vector<double> flat;
  flat.reserve(v.size() * d);
  for (const auto& r : v) {
    if (r.size() != d) throw Error("dataset: ragged sequence rows");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor::constant(ad::Shape{v.size(), d}, std::move(flat));
}

json lorenz_config_json(const LorenzConfig& c) {
  return json{{"sigma", c.sigma},     {"rho", c.rho},     {"beta", c.beta},
              {"ts", c.ts},           {"steps", c.steps}, {"n_train", c.n_train},
              {"n_val", c.n_val},     {"n_test", c.n_test}, {"noise_var", c.noise_var},
              {"z0", c.z0},           {"seed", c.seed}};
}

}  // namespace

void save_dataset(const SequenceDataset& ds, const std::filesystem::path& path,
                  const std::optional<LorenzConfig>& cfg) {
  ds.validate();
  json doc;
  doc["format"] = "seqvi-dataset";
  doc["version"] = 1;
  json xs = json::array(), masks = json::array(), zs = json::array();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    xs.push_back(tensor_rows(ds.x[i]));
    masks.push_back(ds.mask[i]);
    if (ds.has_states()) zs.push_back(tensor_rows(ds.z[i]));
  }
  doc["x"] = std::move(xs);
  doc["mask"] = std::move(masks);
  if (ds.has_states()) doc["z"] = std::move(zs);
  if (ds.theta) doc["theta"] = *ds.theta;
  if (cfg) doc["config"] = lorenz_config_json(*cfg);
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump() << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

SequenceDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
  if (doc.value("format", "") != "seqvi-dataset") throw Error(path.string() + ": not a dataset document");
  if (doc.value("version", 0) != 1) throw Error(path.string() + ": unsupported dataset version");
  SequenceDataset ds;
  try {
    const auto& xs = doc.at("x");
    for (std::size_t i = 0; i < xs.size(); ++i) {
      std::optional<Tensor> z;
      if (doc.contains("z")) z = rows_tensor(doc["z"].at(i));
      ds.push_back(rows_tensor(xs[i]), std::move(z));
    }
    if (doc.contains("mask")) {
      const auto masks = doc["mask"].get<std::vector<std::vector<std::uint8_t>>>();
      if (masks.size() != ds.size()) throw Error(path.string() + ": mask count differs");
      ds.mask = masks;
    }
    if (doc.contains("theta")) ds.theta = doc["theta"].get<std::array<double, 3>>();
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
  ds.validate();
  return ds;
}

SequenceDataset load_any(const std::filesystem::path& path) {
  if (path.extension() == ".jsonl") return load_pianoroll(path);
  return load_dataset(path);
}

// ---- batching -------------------------------------------------------------

std::vector<Batch> minibatches(const SequenceDataset& ds, std::size_t batch_size,
                               std::uint64_t shuffle_seed) {
  if (batch_size == 0) throw Error("minibatch size must be at least 1");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 eng(shuffle_seed);
  // Fisher-Yates with explicit draws so the permutation does not depend on
  // the standard library's shuffle implementation.
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(eng() % i);
    std::swap(order[i - 1], order[j]);
  }
  std::vector<Batch> out;
  const std::size_t d = ds.obs_dim();
  for (std::size_t b = 0; b < order.size(); b += batch_size) {
    Batch batch;
    const std::size_t end = std::min(order.size(), b + batch_size);
    batch.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(b),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
    std::size_t tmax = 0;
    for (std::size_t i : batch.indices) tmax = std::max(tmax, ds.x[i].shape()[0]);
    for (std::size_t i : batch.indices) {
      const Tensor& x = ds.x[i];
      std::vector<double> flat(x.data().begin(), x.data().end());
      flat.resize(tmax * d, 0.0);
      std::vector<std::uint8_t> m = ds.mask[i];
      m.resize(tmax, 0);
      batch.x.push_back(Tensor::constant(ad::Shape{tmax, d}, std::move(flat)));
      batch.mask.push_back(std::move(m));
    }
    out.push_back(std::move(batch));
  }
  return out;
}

}  // namespace seqvi::data
