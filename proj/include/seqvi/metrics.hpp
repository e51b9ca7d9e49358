#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "seqvi/bundle.hpp"
#include "seqvi/data.hpp"
#include "seqvi/kernels.hpp"

namespace seqvi::metrics {

struct BoundReport {
  double ll_per_step = 0.0;
  double kl_per_step = 0.0;
  std::optional<double> rmse_z;
  std::optional<std::array<double, 3>> param_errors;  // |sigma|, |rho|, |beta| errors
  int K = 1;
  std::size_t sequences = 0;
  std::size_t steps = 0;

  nlohmann::json to_json() const;
  std::string csv_header() const;
  std::string csv_row() const;
};

// Mean over sequences of [logsumexp_k log w_k - ln K], divided by the
// number of valid steps. Noise is keyed by sequence content, so the value does
// not depend on sequence order or padding.
double estimate_marginal_ll(const data::SequenceDataset& ds, const ModelBundle& bundle, int K,
                            const kernels::NoiseKey& key);

BoundReport evaluate(const data::SequenceDataset& ds, const ModelBundle& bundle, int K,
                     const kernels::NoiseKey& key);

// sqrt(1/T sum_t ||z_t - zhat_t||^2) over two [T, n_z] tensors.
double rmse_states(const ad::Tensor& true_z, const ad::Tensor& estimate);

// Mean over sequences of rmse_states against the posterior mean path.
double dataset_rmse(const data::SequenceDataset& ds, const ModelBundle& bundle);

// Componentwise absolute errors, ordered (sigma, rho, beta).
std::array<double, 3> param_errors(const std::array<double, 3>& estimate,
                                   const std::array<double, 3>& truth);

// ---- linear-Gaussian oracle -----------------------------------------------

// z_1 ~ N(mu0, p0), z_t = A z_{t-1} + N(0, Q), x_t = C z_t + N(0, R).
struct Lgssm {
  Eigen::MatrixXd A, C, Q, R, p0;
  Eigen::VectorXd mu0;

  std::size_t state_dim() const { return static_cast<std::size_t>(A.rows()); }
  std::size_t obs_dim() const { return static_cast<std::size_t>(C.rows()); }
  void validate() const;
};

// Scalar model used by the bound-tightness check: A = 0.9, C = 1, Q = 0.5,
// R = 1, z_1 ~ N(0, 1).
Lgssm default_scalar_lgssm();
Lgssm scalar_lgssm(double a, double c, double q, double r, double mu0, double p0);

std::vector<Eigen::VectorXd> simulate_lgssm(const Lgssm& m, std::size_t steps, std::uint64_t seed);

// Exact log p(x_{1:T}) by the prediction-error decomposition.
double kalman_log_likelihood(const Lgssm& m, const std::vector<Eigen::VectorXd>& x);

// Exact posterior p(z_{1:T} | x_{1:T}) as a dense Gaussian over the stacked
// states.
struct GaussianPosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};
GaussianPosterior exact_posterior(const Lgssm& m, const std::vector<Eigen::VectorXd>& x);

// log p(x, z) for stacked states z.
double lgssm_joint_log_prob(const Lgssm& m, const std::vector<Eigen::VectorXd>& x,
                            const Eigen::VectorXd& z);

struct MonotonicityRow {
  int K = 1;
  double mean = 0.0;
  double stderr_ = 0.0;
};

struct MonotonicityReport {
  std::vector<MonotonicityRow> rows;
  double exact = 0.0;
  bool monotone = true;  // consecutive means non-decreasing within 2 combined stderr
  bool bounded = true;   // every mean <= exact + 2 stderr
  bool passed() const { return monotone && bounded; }

  nlohmann::json to_json() const;
  std::string table() const;
};

constexpr int kMinOracleTrials = 100;

// K-sample importance-weighted estimates of log p(x) under the proposal
// N(posterior mean, inflation * posterior covariance), repeated over `trials`
// independent draws per K.
MonotonicityReport monotonicity_report(const Lgssm& m, const std::vector<Eigen::VectorXd>& x,
                                       const std::vector<int>& K_list, int trials, double inflation,
                                       std::uint64_t seed);

}  // namespace seqvi::metrics
