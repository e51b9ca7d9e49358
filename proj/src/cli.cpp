#include "seqvi/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "seqvi/bundle.hpp"
#include "seqvi/data.hpp"
#include "seqvi/kernels.hpp"
#include "seqvi/metrics.hpp"
#include "seqvi/random.hpp"
#include "seqvi/training.hpp"

namespace seqvi::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

class UsageError : public Error {
 public:
  using Error::Error;
};

class PropertyViolation : public Error {
 public:
  using Error::Error;
};

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

// Creates `dir`, refusing to reuse a non-empty directory unless forced.
void prepare_out_dir(const fs::path& dir, bool force) {
  if (dir.empty()) throw UsageError("--out is required");
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw UsageError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !force) {
      throw UsageError(dir.string() + " is not empty (pass --force to overwrite)");
    }
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

struct Manifest {
  std::string command;
  json config;
  std::uint64_t seed = 0;
  std::string started = utc_now();
  std::vector<std::string> outputs;

  void write(const fs::path& dir) const {
    json j{{"command", command},
           {"config", config},
           {"seed", seed},
           {"version", kVersion},
           {"started", started},
           {"finished", utc_now()},
           {"outputs", outputs}};
    write_text(dir / "manifest.json", j.dump(2) + "\n");
  }
};

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t pos = 0;
      const int v = std::stoi(tok, &pos);
      if (pos != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::logic_error&) {
      throw UsageError("'" + s + "' is not a comma-separated list of integers");
    }
  }
  if (out.empty()) throw UsageError("empty integer list");
  return out;
}

// Converts --config JSON entries into command-line tokens for every option
// not given explicitly, so flags override the file.
std::vector<std::string> config_tokens(CLI::App& sub, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw UsageError("malformed config file " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError("config file must hold a JSON object");
  std::vector<std::string> toks;
  for (const auto& [key, value] : j.items()) {
    const std::string flag = "--" + key;
    CLI::Option* opt = sub.get_option_no_throw(flag);
    if (opt == nullptr || key == "config") throw UsageError("unknown config key '" + key + "'");
    if (opt->count() > 0) continue;
    if (value.is_boolean()) {
      if (opt->get_expected_min() != 0) throw UsageError("config key '" + key + "' is not a switch");
      if (value.get<bool>()) toks.push_back(flag);
      continue;
    }
    std::string text;
    if (value.is_string()) {
      text = value.get<std::string>();
    } else if (value.is_array()) {
      for (std::size_t i = 0; i < value.size(); ++i) {
        if (i) text += ',';
        text += value[i].is_string() ? value[i].get<std::string>() : value[i].dump();
      }
    } else if (value.is_number()) {
      text = value.dump();
    } else {
      throw UsageError("config key '" + key + "' has an unsupported type");
    }
    toks.push_back(flag);
    toks.push_back(text);
  }
  return toks;
}

// ---- options --------------------------------------------------------------

struct GenLorenzOpts {
  std::string out, config;
  std::uint64_t seed = 0;
  std::size_t seqs = 50, val_seqs = 10, test_seqs = 10, len = 100;
  double ts = 0.01, noise_var = 0.1;
  double sigma = 28.0, rho = 10.0, beta = 8.0 / 3.0;
  bool force = false;
};

struct GenSyntheticOpts {
  std::string out, config;
  std::uint64_t seed = 0;
  std::size_t dx = 16, len = 30, seqs = 64, val_seqs = 16, test_seqs = 16;
  bool force = false;
};

struct TrainOpts {
  std::string data, val, out, config;
  std::string model = "lorenz", bound = "dkf", update_mode = "epoch";
  int K = 1;
  std::size_t epochs = 1000, batch = 10, patience = 30;
  std::size_t hidden = 32, latent = 100, emission_hidden = 100;
  double lr = 1e-3, clip_norm = 10.0, theta_perturb = 0.2, gate_bias = -3.0;
  long anneal_updates = 5000;
  std::uint64_t seed = 0;
  bool no_inference_grads = false, force = false;
};

struct EvalOpts {
  std::string ckpt, data, out, config;
  int K_eval = 100;
  std::optional<std::uint64_t> seed, epoch;
  bool force = false;
};

struct OracleOpts {
  std::string out, config, K_list = "1,5,15";
  int trials = 1000;
  std::size_t T = 10;
  double inflation = 2.0;
  std::uint64_t seed = 0;
  bool force = false;
};

struct AllOpts {
  GenLorenzOpts gen;
  GenSyntheticOpts syn;
  TrainOpts train;
  EvalOpts eval;
  OracleOpts oracle;
};

struct Commands {
  CLI::App* gen = nullptr;
  CLI::App* syn = nullptr;
  CLI::App* train = nullptr;
  CLI::App* eval = nullptr;
  CLI::App* oracle = nullptr;
};

Commands build(CLI::App& app, AllOpts& o) {
  app.require_subcommand(1);
  Commands c;

  c.gen = app.add_subcommand("gen-lorenz", "Simulate noisy Lorenz trajectories");
  auto& g = o.gen;
  c.gen->add_option("--out", g.out, "Output directory")->required();
  c.gen->add_option("--seed", g.seed, "Data seed");
  c.gen->add_option("--seqs", g.seqs, "Training sequences");
  c.gen->add_option("--val-seqs", g.val_seqs, "Validation sequences");
  c.gen->add_option("--test-seqs", g.test_seqs, "Test sequences");
  c.gen->add_option("--len", g.len, "Steps per sequence");
  c.gen->add_option("--ts", g.ts, "Euler step");
  c.gen->add_option("--noise-var", g.noise_var, "Process and observation noise variance");
  c.gen->add_option("--sigma", g.sigma);
  c.gen->add_option("--rho", g.rho);
  c.gen->add_option("--beta", g.beta);
  c.gen->add_option("--config", g.config, "JSON file of option defaults");
  c.gen->add_flag("--force", g.force, "Overwrite a non-empty output directory");

  c.syn = app.add_subcommand("gen-synthetic", "Sample binary sequences from a two-state source");
  auto& s = o.syn;
  c.syn->add_option("--out", s.out, "Output directory")->required();
  c.syn->add_option("--seed", s.seed);
  c.syn->add_option("--dx", s.dx, "Channels per step");
  c.syn->add_option("--len", s.len, "Steps per sequence");
  c.syn->add_option("--seqs", s.seqs, "Training sequences");
  c.syn->add_option("--val-seqs", s.val_seqs);
  c.syn->add_option("--test-seqs", s.test_seqs);
  c.syn->add_option("--config", s.config);
  c.syn->add_flag("--force", s.force);

  c.train = app.add_subcommand("train", "Fit a model with the DKF or IW-DKF objective");
  auto& t = o.train;
  c.train->add_option("--data", t.data, "Dataset directory, or training file")->required();
  c.train->add_option("--val", t.val, "Validation file when --data is a file");
  c.train->add_option("--model", t.model)->check(CLI::IsMember({"lorenz", "gated-bernoulli"}));
  c.train->add_option("--bound", t.bound)->check(CLI::IsMember({"dkf", "iwdkf"}));
  c.train->add_option("--K", t.K, "Importance samples");
  c.train->add_option("--epochs", t.epochs, "Maximum epochs");
  c.train->add_option("--batch", t.batch, "Minibatch size");
  c.train->add_option("--lr", t.lr, "Adam learning rate");
  c.train->add_option("--anneal-updates", t.anneal_updates, "KL anneal length in minibatch visits (0 disables)");
  c.train->add_option("--patience", t.patience, "Early-stopping patience in epochs");
  c.train->add_option("--seed", t.seed);
  c.train->add_option("--out", t.out, "Run directory")->required();
  c.train->add_option("--update-mode", t.update_mode)->check(CLI::IsMember({"epoch", "minibatch"}));
  c.train->add_option("--clip-norm", t.clip_norm, "Global gradient-norm clip (0 disables)");
  c.train->add_option("--hidden", t.hidden, "Encoder hidden units");
  c.train->add_option("--latent", t.latent, "Latent units of the gated model");
  c.train->add_option("--emission-hidden", t.emission_hidden, "Emission hidden units of the gated model");
  c.train->add_option("--gate-bias", t.gate_bias, "Initial gate bias of the gated model");
  c.train->add_option("--theta-perturb", t.theta_perturb, "Relative perturbation of the initial Lorenz parameters");
  c.train->add_flag("--no-inference-grads", t.no_inference_grads, "Freeze the inference network under IW-DKF");
  c.train->add_option("--config", t.config);
  c.train->add_flag("--force", t.force);

  c.eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  auto& e = o.eval;
  c.eval->add_option("--ckpt", e.ckpt, "Checkpoint file")->required();
  c.eval->add_option("--data", e.data, "Dataset file")->required();
  c.eval->add_option("--K-eval", e.K_eval, "Importance samples for the likelihood estimate");
  c.eval->add_option("--seed", e.seed, "Evaluation seed (default: the checkpoint's)");
  c.eval->add_option("--epoch", e.epoch, "Noise epoch (default: the checkpoint's last epoch)");
  c.eval->add_option("--out", e.out, "Report directory")->required();
  c.eval->add_option("--config", e.config);
  c.eval->add_flag("--force", e.force);

  c.oracle = app.add_subcommand("oracle-check", "Check bound tightening against the exact Kalman likelihood");
  auto& q = o.oracle;
  c.oracle->add_option("--K-list", q.K_list, "Comma-separated sample counts");
  c.oracle->add_option("--trials", q.trials, "Estimator draws per K");
  c.oracle->add_option("--seed", q.seed);
  c.oracle->add_option("--T", q.T, "Sequence length");
  c.oracle->add_option("--inflation", q.inflation, "Proposal covariance inflation");
  c.oracle->add_option("--out", q.out, "Output directory")->required();
  c.oracle->add_option("--config", q.config);
  c.oracle->add_flag("--force", q.force);
  return c;
}

// ---- commands -------------------------------------------------------------

int cmd_gen_lorenz(const GenLorenzOpts& o) {
  data::LorenzConfig cfg;
  cfg.seed = o.seed;
  cfg.n_train = o.seqs;
  cfg.n_val = o.val_seqs;
  cfg.n_test = o.test_seqs;
  cfg.steps = o.len;
  cfg.ts = o.ts;
  cfg.noise_var = o.noise_var;
  cfg.sigma = o.sigma;
  cfg.rho = o.rho;
  cfg.beta = o.beta;
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const fs::path out(o.out);
  prepare_out_dir(out, o.force);
  Manifest man;
  man.command = "gen-lorenz";
  man.seed = o.seed;
  man.config = {{"seed", o.seed},   {"seqs", o.seqs}, {"val-seqs", o.val_seqs}, {"test-seqs", o.test_seqs},
                {"len", o.len},     {"ts", o.ts},     {"noise-var", o.noise_var}, {"sigma", o.sigma},
                {"rho", o.rho},     {"beta", o.beta}};
  const auto splits = data::gen_lorenz(cfg);
  data::save_dataset(splits.train, out / "train.json", cfg);
  data::save_dataset(splits.val, out / "val.json", cfg);
  data::save_dataset(splits.test, out / "test.json", cfg);
  man.outputs = {"train.json", "val.json", "test.json"};
  man.write(out);
  std::cout << "wrote " << splits.train.size() << "/" << splits.val.size() << "/" << splits.test.size()
            << " sequences of length " << cfg.steps << " to " << out.string() << "\n";
  return kOk;
}

int cmd_gen_synthetic(const GenSyntheticOpts& o) {
  if (o.dx < 2 || o.len < 1 || o.seqs < 1 || o.val_seqs < 1) {
    throw UsageError("--dx must be at least 2; --len, --seqs and --val-seqs at least 1");
  }
  const fs::path out(o.out);
  prepare_out_dir(out, o.force);
  Manifest man;
  man.command = "gen-synthetic";
  man.seed = o.seed;
  man.config = {{"seed", o.seed},         {"dx", o.dx},
                {"len", o.len},           {"seqs", o.seqs},
                {"val-seqs", o.val_seqs}, {"test-seqs", o.test_seqs}};
  const std::uint64_t s = derive_seed(o.seed, "data");
  data::save_dataset(data::gen_synthetic_binary(o.dx, o.len, o.seqs, derive_seed(s, "train")), out / "train.json");
  data::save_dataset(data::gen_synthetic_binary(o.dx, o.len, o.val_seqs, derive_seed(s, "val")), out / "val.json");
  man.outputs = {"train.json", "val.json"};
  if (o.test_seqs > 0) {
    data::save_dataset(data::gen_synthetic_binary(o.dx, o.len, o.test_seqs, derive_seed(s, "test")),
                       out / "test.json");
    man.outputs.push_back("test.json");
  }
  man.write(out);
  return kOk;
}

fs::path find_split(const fs::path& dir, const std::string& stem) {
  for (const char* ext : {".json", ".jsonl"}) {
    const fs::path p = dir / (stem + ext);
    if (fs::exists(p)) return p;
  }
  throw UsageError("no " + stem + ".json or " + stem + ".jsonl in " + dir.string());
}

bool is_binary(const data::SequenceDataset& ds) {
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.x[i].data())
      if (v != 0.0 && v != 1.0) return false;
  }
  return true;
}

int cmd_train(const TrainOpts& o) {
  fs::path train_path, val_path;
  if (fs::is_directory(o.data)) {
    train_path = find_split(o.data, "train");
    val_path = o.val.empty() ? find_split(o.data, "val") : fs::path(o.val);
  } else {
    if (!fs::exists(o.data)) throw UsageError("dataset " + o.data + " does not exist");
    if (o.val.empty()) throw UsageError("--val is required when --data is a file");
    train_path = o.data;
    val_path = o.val;
  }
  if (!fs::exists(val_path)) throw UsageError("dataset " + val_path.string() + " does not exist");

  train::TrainConfig cfg;
  ModelSpec spec;
  try {
    cfg.bound.kind = obj::parse_bound_kind(o.bound);
    cfg.bound.K = o.K;
    cfg.bound.anneal_total_updates = o.anneal_updates;
    cfg.bound.inference_grads = !o.no_inference_grads;
    cfg.batch_size = o.batch;
    cfg.max_epochs = o.epochs;
    cfg.patience = o.patience;
    cfg.seed = o.seed;
    cfg.lr = o.lr;
    cfg.mode = train::parse_update_mode(o.update_mode);
    cfg.clip_norm = o.clip_norm;
    cfg.validate();
    if (o.anneal_updates < 0) throw Error("--anneal-updates must be non-negative");
  } catch (const Error& e) {
    throw UsageError(e.what());
  }

  const auto train_ds = data::load_any(train_path);
  const auto val_ds = data::load_any(val_path);
  if (train_ds.empty() || val_ds.empty()) throw UsageError("training and validation sets must be nonempty");
  if (train_ds.obs_dim() != val_ds.obs_dim()) throw UsageError("training and validation widths differ");

  try {
    spec.kind = o.model;
    spec.d_x = train_ds.obs_dim();
    spec.n_h = o.hidden;
    if (o.model == "lorenz") {
      spec.n_z = 3;
      const std::array<double, 3> base = train_ds.theta.value_or(ModelSpec{}.theta_init);
      spec.theta_init = perturb_theta(base, o.theta_perturb, o.seed);
    } else {
      if (!is_binary(train_ds) || !is_binary(val_ds)) {
        throw Error("the gated-bernoulli model needs binary observations");
      }
      spec.n_z = o.latent;
      spec.emission_hidden = o.emission_hidden;
      spec.gate_bias_init = o.gate_bias;
    }
    spec.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }

  const fs::path out(o.out);
  prepare_out_dir(out, o.force);
  kernels::apply_thread_config();

  Manifest man;
  man.command = "train";
  man.seed = o.seed;
  man.config = cfg.to_json();
  man.config["model"] = spec.to_json();
  man.config["data"] = train_path.string();
  man.config["val"] = val_path.string();

  std::ofstream csv(out / "metrics.csv");
  if (!csv) throw Error("cannot write metrics.csv");
  csv << train::metrics_csv_header() << '\n';

  auto on_epoch = [&](const train::EpochRecord& r, const train::Trainer&) {
    csv << train::metrics_csv_row(r) << '\n';
    csv.flush();
    std::cout << "epoch " << r.train.epoch << "  train " << std::setprecision(6) << r.train.train_bound
              << "  val " << r.val.ll_per_step << '\n';
  };

  train::Trainer trainer(ModelBundle::create(spec, o.seed), cfg);
  train::FitResult res;
  try {
    res = train::fit(train_ds, val_ds, trainer, on_epoch);
  } catch (const NonFiniteError&) {
    trainer.checkpoint().save(out / "last.json");
    man.outputs = {"metrics.csv", "last.json"};
    man.write(out);
    throw;
  }

  res.best.save(out / "best.json");
  res.last.save(out / "last.json");
  std::ostringstream an;
  an << "update,coef\n" << std::setprecision(17);
  for (const auto& a : res.anneal_trace) an << a.update << ',' << a.coef << '\n';
  write_text(out / "anneal.csv", an.str());
  man.outputs = {"metrics.csv", "anneal.csv", "best.json", "last.json"};
  man.write(out);
  std::cout << "best validation LL " << std::setprecision(8) << res.best.progress.best_val << " per step\n";
  return kOk;
}

int cmd_eval(const EvalOpts& o) {
  if (o.K_eval < 1) throw UsageError("--K-eval must be at least 1");
  if (!fs::exists(o.ckpt)) throw UsageError("checkpoint " + o.ckpt + " does not exist");
  if (!fs::exists(o.data)) throw UsageError("dataset " + o.data + " does not exist");
  const auto ck = train::Checkpoint::load(o.ckpt);
  const ModelBundle bundle = ck.restore();
  const auto ds = data::load_any(o.data);
  if (ds.obs_dim() != bundle.spec().d_x) throw UsageError("dataset width does not match the model");

  const fs::path out(o.out);
  prepare_out_dir(out, o.force);
  kernels::apply_thread_config();

  const std::uint64_t seed = o.seed.value_or(ck.config.seed);
  const std::uint64_t epoch = o.epoch.value_or(ck.next_epoch > 0 ? ck.next_epoch - 1 : 0);
  const auto rep = metrics::evaluate(ds, bundle, o.K_eval, kernels::NoiseKey{seed, "eval", epoch});

  Manifest man;
  man.command = "eval";
  man.seed = seed;
  man.config = {{"ckpt", o.ckpt}, {"data", o.data}, {"K-eval", o.K_eval}, {"seed", seed}, {"epoch", epoch}};
  write_text(out / "report.json", rep.to_json().dump(2) + "\n");
  write_text(out / "report.csv", rep.csv_header() + "\n" + rep.csv_row() + "\n");
  man.outputs = {"report.json", "report.csv"};
  man.write(out);
  std::cout << std::setprecision(10) << "LL per step " << rep.ll_per_step << "  KL per step "
            << rep.kl_per_step << '\n';
  return kOk;
}

int cmd_oracle_check(const OracleOpts& o) {
  const auto K_list = parse_int_list(o.K_list);
  for (int K : K_list)
    if (K < 1) throw UsageError("every K must be at least 1");
  if (o.trials < metrics::kMinOracleTrials) {
    throw UsageError("--trials must be at least " + std::to_string(metrics::kMinOracleTrials));
  }
  if (o.T < 1) throw UsageError("--T must be at least 1");
  if (!(o.inflation > 0.0)) throw UsageError("--inflation must be positive");

  const fs::path out(o.out);
  prepare_out_dir(out, o.force);
  kernels::apply_thread_config();

  const auto m = metrics::default_scalar_lgssm();
  const auto x = metrics::simulate_lgssm(m, o.T, derive_seed(o.seed, "data"));
  const auto rep = metrics::monotonicity_report(m, x, K_list, o.trials, o.inflation, o.seed);

  Manifest man;
  man.command = "oracle-check";
  man.seed = o.seed;
  man.config = {{"K-list", K_list}, {"trials", o.trials}, {"seed", o.seed}, {"T", o.T}, {"inflation", o.inflation}};
  write_text(out / "oracle.json", rep.to_json().dump(2) + "\n");
  write_text(out / "oracle.txt", rep.table());
  man.outputs = {"oracle.json", "oracle.txt"};
  man.write(out);
  std::cout << rep.table();
  if (!rep.passed()) throw PropertyViolation("bound monotonicity check failed");
  return kOk;
}

// Parses args; when the chosen command has --config, re-parses with the file's
// entries inserted ahead of the explicit flags.
int dispatch(const std::vector<std::string>& args) {
  auto parse = [](CLI::App& app, std::vector<std::string> a) {
    std::reverse(a.begin(), a.end());
    app.parse(a);
  };

  AllOpts o;
  CLI::App app{"Sequential latent-variable models with importance-weighted training", "seqvi"};
  const Commands c = build(app, o);
  try {
    parse(app, args);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  CLI::App* chosen = app.get_subcommands().front();
  const auto* cfg_opt = chosen->get_option_no_throw("--config");
  if (cfg_opt != nullptr && cfg_opt->count() > 0) {
    const std::string path = cfg_opt->as<std::string>();
    std::vector<std::string> merged{chosen->get_name()};
    for (auto& t : config_tokens(*chosen, path)) merged.push_back(std::move(t));
    for (std::size_t i = 1; i < args.size(); ++i) merged.push_back(args[i]);
    AllOpts o2;
    CLI::App app2{"Sequential latent-variable models with importance-weighted training", "seqvi"};
    build(app2, o2);
    try {
      parse(app2, merged);
    } catch (const CLI::ParseError& e) {
      const int rc = app2.exit(e);
      return rc == 0 ? kOk : kUsage;
    }
    o = std::move(o2);
  }

  const std::string& name = chosen->get_name();
  if (name == c.gen->get_name()) return cmd_gen_lorenz(o.gen);
  if (name == c.syn->get_name()) return cmd_gen_synthetic(o.syn);
  if (name == c.train->get_name()) return cmd_train(o.train);
  if (name == c.eval->get_name()) return cmd_eval(o.eval);
  return cmd_oracle_check(o.oracle);
}

}  // namespace

int run(const std::vector<std::string>& args) {
  try {
    return dispatch(args);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\nRun with --help for usage.\n";
    return kUsage;
  } catch (const PropertyViolation& e) {
    std::cerr << "property violation: " << e.what() << '\n';
    return kPropertyViolation;
  } catch (const NonFiniteError& e) {
    std::cerr << "non-finite value: " << e.what() << '\n';
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
}

}  // namespace seqvi::cli
