#include "seqvi/bundle.hpp"

namespace seqvi {

using nlohmann::json;

json ModelSpec::to_json() const {
  return json{{"kind", kind},
              {"d_x", d_x},
              {"n_z", n_z},
              {"n_h", n_h},
              {"emission_hidden", emission_hidden},
              {"ts", ts},
              {"noise_var", noise_var},
              {"theta_init", theta_init},
              {"gate_bias_init", gate_bias_init}};
}

ModelSpec ModelSpec::from_json(const json& j) {
  ModelSpec s;
  s.kind = j.at("kind").get<std::string>();
  s.d_x = j.at("d_x").get<std::size_t>();
  s.n_z = j.at("n_z").get<std::size_t>();
  s.n_h = j.at("n_h").get<std::size_t>();
  s.emission_hidden = j.value("emission_hidden", s.emission_hidden);
  s.ts = j.value("ts", s.ts);
  s.noise_var = j.value("noise_var", s.noise_var);
  s.theta_init = j.value("theta_init", s.theta_init);
  s.gate_bias_init = j.value("gate_bias_init", s.gate_bias_init);
  s.validate();
  return s;
}

void ModelSpec::validate() const {
  if (kind != "lorenz" && kind != "gated-bernoulli") {
    throw Error("unknown model kind '" + kind + "' (expected lorenz or gated-bernoulli)");
  }
  if (kind == "lorenz" && (d_x != 3 || n_z != 3)) {
    throw Error("the Lorenz model needs 3-dimensional observations and states");
  }
  if (d_x == 0 || n_z == 0 || n_h == 0 || emission_hidden == 0) {
    throw Error("model sizes must be positive");
  }
}

ModelBundle ModelBundle::create(const ModelSpec& spec, std::uint64_t init_seed) {
  spec.validate();
  ModelBundle b;
  b.spec_ = spec;
  Rng init(init_seed, "init");
  if (spec.kind == "lorenz") {
    b.model_ = std::make_unique<model::LorenzModel>(
        b.params_, model::LorenzSettings{spec.ts, spec.noise_var}, spec.theta_init);
  } else {
    model::GatedSettings gs;
    gs.n_z = spec.n_z;
    gs.d_x = spec.d_x;
    gs.emission_hidden = spec.emission_hidden;
    gs.gate_bias_init = spec.gate_bias_init;
    b.model_ = std::make_unique<model::GatedBernoulliModel>(b.params_, gs, init);
  }
  b.infnet_ = std::make_unique<infer::InferenceNetwork>(b.params_, spec.d_x, spec.n_z, spec.n_h, init);
  return b;
}

ModelBundle ModelBundle::clone() const {
  ModelBundle b = create(spec_, 0);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto d = params_.value(i).data();
    b.params_.set(i, std::vector<double>(d.begin(), d.end()));
  }
  return b;
}

bool ModelBundle::is_inference_param(std::size_t i) const {
  return params_.name(i).rfind("inf.", 0) == 0;
}

std::optional<std::array<double, 3>> ModelBundle::theta() const {
  if (const auto* lm = dynamic_cast<const model::LorenzModel*>(model_.get())) return lm->theta(params_);
  return std::nullopt;
}

std::array<double, 3> perturb_theta(const std::array<double, 3>& base, double fraction,
                                    std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw Error("theta perturbation must lie in [0, 1)");
  Rng rng(seed, "init", {3});
  std::array<double, 3> out{};
  for (int i = 0; i < 3; ++i) out[i] = base[i] * (1.0 + rng.uniform(-fraction, fraction));
  return out;
}

}  // namespace seqvi
