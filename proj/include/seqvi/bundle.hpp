#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "seqvi/autodiff.hpp"
#include "seqvi/generative.hpp"
#include "seqvi/inference.hpp"

namespace seqvi {

// Architecture and fixed settings of a model; everything learnable lives in
// the ParameterSet.
struct ModelSpec {
  std::string kind = "lorenz";  // "lorenz" or "gated-bernoulli"
  std::size_t d_x = 3;
  std::size_t n_z = 3;
  std::size_t n_h = 32;
  std::size_t emission_hidden = 100;
  double ts = 0.01;
  double noise_var = 0.1;
  std::array<double, 3> theta_init{28.0, 10.0, 8.0 / 3.0};
  double gate_bias_init = -3.0;

  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
  void validate() const;
};

// Generative parameters (names "gen.*") and inference parameters ("inf.*")
// in one set, with the two networks that index into it.
class ModelBundle {
 public:
  static ModelBundle create(const ModelSpec& spec, std::uint64_t init_seed);

  ModelBundle(ModelBundle&&) noexcept = default;
  ModelBundle& operator=(ModelBundle&&) noexcept = default;

  ModelBundle clone() const;

  const ModelSpec& spec() const { return spec_; }
  const ad::ParameterSet& params() const { return params_; }
  ad::ParameterSet& params() { return params_; }
  const model::GenerativeModel& model() const { return *model_; }
  const infer::InferenceNetwork& infnet() const { return *infnet_; }

  bool is_inference_param(std::size_t i) const;
  // Lorenz parameter estimate, when the model is physics-based.
  std::optional<std::array<double, 3>> theta() const;

 private:
  ModelBundle() = default;

  ModelSpec spec_;
  ad::ParameterSet params_;
  std::unique_ptr<model::GenerativeModel> model_;
  std::unique_ptr<infer::InferenceNetwork> infnet_;
};

// base * (1 + u) componentwise, u ~ U(-fraction, fraction) from the "init"
// substream of seed.
std::array<double, 3> perturb_theta(const std::array<double, 3>& base, double fraction,
                                    std::uint64_t seed);

}  // namespace seqvi
