#include "seqvi/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "seqvi/objectives.hpp"
#include "seqvi/random.hpp"

namespace seqvi::metrics {

using nlohmann::json;

namespace {

std::vector<data::SequenceView> views(const data::SequenceDataset& ds) {
  std::vector<data::SequenceView> v;
  v.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) v.push_back(data::view(ds.x[i], ds.mask[i]));
  return v;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

// ---- reports --------------------------------------------------------------

json BoundReport::to_json() const {
  json j{{"ll_per_step", ll_per_step}, {"kl_per_step", kl_per_step}, {"K", K},
         {"sequences", sequences},     {"steps", steps}};
  j["rmse_z"] = rmse_z ? json(*rmse_z) : json(nullptr);
  if (param_errors) {
    j["param_errors"] = {{"sigma", (*param_errors)[0]},
                         {"rho", (*param_errors)[1]},
                         {"beta", (*param_errors)[2]}};
  } else {
    j["param_errors"] = nullptr;
  }
  return j;
}

std::string BoundReport::csv_header() const {
  return "K,sequences,steps,ll_per_step,kl_per_step,rmse_z,err_sigma,err_rho,err_beta";
}

std::string BoundReport::csv_row() const {
  std::ostringstream os;
  os << K << ',' << sequences << ',' << steps << ',' << fmt(ll_per_step) << ',' << fmt(kl_per_step)
     << ',' << (rmse_z ? fmt(*rmse_z) : "");
  for (int i = 0; i < 3; ++i) os << ',' << (param_errors ? fmt((*param_errors)[i]) : "");
  return os.str();
}

double estimate_marginal_ll(const data::SequenceDataset& ds, const ModelBundle& bundle, int K,
                            const kernels::NoiseKey& key) {
  return evaluate(ds, bundle, K, key).ll_per_step;
}

BoundReport evaluate(const data::SequenceDataset& ds, const ModelBundle& bundle, int K,
                     const kernels::NoiseKey& key) {
  if (K < 1) throw Error("K must be at least 1");
  if (ds.empty()) throw Error("cannot evaluate an empty dataset");
  const auto seqs = views(ds);
  const auto stats = kernels::evaluate_parallel(bundle, seqs, K, key);
  BoundReport rep;
  rep.K = K;
  rep.sequences = ds.size();
  double ll = 0.0, kl = 0.0;
  for (const auto& s : stats) {
    ll += s.bound();
    kl += s.kl;
    rep.steps += s.steps;
  }
  rep.ll_per_step = ll / static_cast<double>(rep.steps);
  rep.kl_per_step = kl / static_cast<double>(rep.steps);
  if (ds.has_states()) rep.rmse_z = dataset_rmse(ds, bundle);
  if (ds.theta) {
    if (auto th = bundle.theta()) rep.param_errors = param_errors(*th, *ds.theta);
  }
  return rep;
}

double rmse_states(const ad::Tensor& true_z, const ad::Tensor& estimate) {
  if (!(true_z.shape() == estimate.shape()) || true_z.shape().rank() != 2) {
    throw ShapeError("rmse_states: shapes " + true_z.shape().str() + " and " +
                     estimate.shape().str() + " differ");
  }
  const std::size_t T = true_z.shape()[0];
  if (T == 0) throw ShapeError("rmse_states: empty trajectory");
  double s = 0.0;
  const auto a = true_z.data();
  const auto b = estimate.data();
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(T));
}

double dataset_rmse(const data::SequenceDataset& ds, const ModelBundle& bundle) {
  if (!ds.has_states()) throw Error("dataset has no latent states");
  double total = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto v = data::view(ds.x[i], ds.mask[i]);
    const ad::Tensor est = kernels::posterior_mean_path(bundle, v);
    total += rmse_states(ad::slice(ds.z[i], 0, v.steps), est);
  }
  return total / static_cast<double>(ds.size());
}

std::array<double, 3> param_errors(const std::array<double, 3>& estimate,
                                   const std::array<double, 3>& truth) {
  std::array<double, 3> e{};
  for (int i = 0; i < 3; ++i) {
    if (!std::isfinite(estimate[i]) || !std::isfinite(truth[i])) {
      throw Error("param_errors: non-finite parameter");
    }
    e[i] = std::abs(estimate[i] - truth[i]);
  }
  return e;
}

// ---- linear-Gaussian oracle -----------------------------------------------

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// log N(x; mean, cov) via Cholesky; throws when cov is not positive definite.
double mvn_log_pdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw Error("covariance is not positive definite");
  const Eigen::VectorXd d = x - mean;
  const Eigen::VectorXd sol = llt.matrixL().solve(d);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + logdet + sol.squaredNorm());
}

bool is_spd(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols() || !m.isApprox(m.transpose())) return false;
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  return llt.info() == Eigen::Success;
}

}  // namespace

void Lgssm::validate() const {
  const auto n = A.rows();
  if (A.cols() != n || C.cols() != n || Q.rows() != n || p0.rows() != n || mu0.size() != n ||
      R.rows() != C.rows()) {
    throw ShapeError("LGSSM: inconsistent matrix sizes");
  }
  if (!is_spd(Q) || !is_spd(R) || !is_spd(p0)) {
    throw Error("LGSSM: Q, R and the initial covariance must be symmetric positive definite");
  }
}

Lgssm scalar_lgssm(double a, double c, double q, double r, double mu0, double p0) {
  Lgssm m;
  m.A = Eigen::MatrixXd::Constant(1, 1, a);
  m.C = Eigen::MatrixXd::Constant(1, 1, c);
  m.Q = Eigen::MatrixXd::Constant(1, 1, q);
  m.R = Eigen::MatrixXd::Constant(1, 1, r);
  m.p0 = Eigen::MatrixXd::Constant(1, 1, p0);
  m.mu0 = Eigen::VectorXd::Constant(1, mu0);
  return m;
}

Lgssm default_scalar_lgssm() { return scalar_lgssm(0.9, 1.0, 0.5, 1.0, 0.0, 1.0); }

std::vector<Eigen::VectorXd> simulate_lgssm(const Lgssm& m, std::size_t steps, std::uint64_t seed) {
  m.validate();
  Rng rng(seed, "lgssm-data");
  const Eigen::MatrixXd lq = Eigen::LLT<Eigen::MatrixXd>(m.Q).matrixL();
  const Eigen::MatrixXd lr = Eigen::LLT<Eigen::MatrixXd>(m.R).matrixL();
  const Eigen::MatrixXd l0 = Eigen::LLT<Eigen::MatrixXd>(m.p0).matrixL();
  auto noise = [&](Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.normal();
    return v;
  };
  std::vector<Eigen::VectorXd> xs;
  Eigen::VectorXd z = m.mu0 + l0 * noise(m.A.rows());
  for (std::size_t t = 0; t < steps; ++t) {
    if (t > 0) z = m.A * z + lq * noise(m.A.rows());
    xs.push_back(m.C * z + lr * noise(m.C.rows()));
  }
  return xs;
}

double kalman_log_likelihood(const Lgssm& m, const std::vector<Eigen::VectorXd>& x) {
  m.validate();
  Eigen::VectorXd mean = m.mu0;
  Eigen::MatrixXd cov = m.p0;
  const auto n = m.A.rows();
  double ll = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    if (t > 0) {
      mean = m.A * mean;
      cov = m.A * cov * m.A.transpose() + m.Q;
    }
    const Eigen::VectorXd pred = m.C * mean;
    const Eigen::MatrixXd S = m.C * cov * m.C.transpose() + m.R;
    ll += mvn_log_pdf(x[t], pred, S);
    const Eigen::MatrixXd gain = cov * m.C.transpose() * S.llt().solve(Eigen::MatrixXd::Identity(S.rows(), S.cols()));
    mean += gain * (x[t] - pred);
    cov = (Eigen::MatrixXd::Identity(n, n) - gain * m.C) * cov;
    cov = 0.5 * (cov + cov.transpose());
  }
  return ll;
}

GaussianPosterior exact_posterior(const Lgssm& m, const std::vector<Eigen::VectorXd>& x) {
  m.validate();
  const auto n = m.A.rows();
  const auto T = static_cast<Eigen::Index>(x.size());
  // Prior precision of the stacked states is block tridiagonal:
  // z_1 ~ N(mu0, P0), z_t - A z_{t-1} ~ N(0, Q).
  const Eigen::MatrixXd p0_inv = m.p0.inverse();
  const Eigen::MatrixXd q_inv = m.Q.inverse();
  const Eigen::MatrixXd r_inv = m.R.inverse();
  Eigen::MatrixXd prec = Eigen::MatrixXd::Zero(n * T, n * T);
  Eigen::VectorXd lin = Eigen::VectorXd::Zero(n * T);
  prec.block(0, 0, n, n) += p0_inv;
  lin.segment(0, n) += p0_inv * m.mu0;
  for (Eigen::Index t = 1; t < T; ++t) {
    prec.block(t * n, t * n, n, n) += q_inv;
    prec.block((t - 1) * n, (t - 1) * n, n, n) += m.A.transpose() * q_inv * m.A;
    prec.block(t * n, (t - 1) * n, n, n) -= q_inv * m.A;
    prec.block((t - 1) * n, t * n, n, n) -= m.A.transpose() * q_inv;
  }
  for (Eigen::Index t = 0; t < T; ++t) {
    prec.block(t * n, t * n, n, n) += m.C.transpose() * r_inv * m.C;
    lin.segment(t * n, n) += m.C.transpose() * r_inv * x[static_cast<std::size_t>(t)];
  }
  GaussianPosterior post;
  post.cov = prec.inverse();
  post.cov = 0.5 * (post.cov + post.cov.transpose());
  post.mean = post.cov * lin;
  return post;
}

double lgssm_joint_log_prob(const Lgssm& m, const std::vector<Eigen::VectorXd>& x,
                            const Eigen::VectorXd& z) {
  const auto n = m.A.rows();
  double lp = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    const Eigen::VectorXd zt = z.segment(static_cast<Eigen::Index>(t) * n, n);
    if (t == 0) {
      lp += mvn_log_pdf(zt, m.mu0, m.p0);
    } else {
      const Eigen::VectorXd zp = z.segment(static_cast<Eigen::Index>(t - 1) * n, n);
      lp += mvn_log_pdf(zt, m.A * zp, m.Q);
    }
    lp += mvn_log_pdf(x[t], m.C * zt, m.R);
  }
  return lp;
}

json MonotonicityReport::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows) rows_j.push_back({{"K", r.K}, {"mean", r.mean}, {"stderr", r.stderr_}});
  return json{{"rows", rows_j}, {"exact", exact}, {"monotone", monotone}, {"bounded", bounded},
              {"passed", passed()}};
}

std::string MonotonicityReport::table() const {
  std::ostringstream os;
  os << std::setw(6) << "K" << std::setw(16) << "mean" << std::setw(14) << "stderr" << std::setw(14)
     << "gap" << '\n';
  os << std::fixed << std::setprecision(6);
  for (const auto& r : rows) {
    os << std::setw(6) << r.K << std::setw(16) << r.mean << std::setw(14) << r.stderr_
       << std::setw(14) << exact - r.mean << '\n';
  }
  os << "exact log p(x) = " << exact << '\n';
  os << "monotone within 2 stderr: " << (monotone ? "yes" : "no") << '\n';
  os << "below exact + 2 stderr:   " << (bounded ? "yes" : "no") << '\n';
  return os.str();
}

MonotonicityReport monotonicity_report(const Lgssm& m, const std::vector<Eigen::VectorXd>& x,
                                       const std::vector<int>& K_list, int trials, double inflation,
                                       std::uint64_t seed) {
  if (trials < kMinOracleTrials) {
    throw Error("at least " + std::to_string(kMinOracleTrials) + " trials are required");
  }
  if (K_list.empty()) throw Error("K list is empty");
  for (int K : K_list) {
    if (K < 1) throw Error("every K must be at least 1");
  }
  if (!(inflation > 0.0)) throw Error("proposal inflation must be positive");

  MonotonicityReport rep;
  rep.exact = kalman_log_likelihood(m, x);
  const GaussianPosterior post = exact_posterior(m, x);
  const Eigen::MatrixXd prop_cov = inflation * post.cov;
  const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(prop_cov).matrixL();
  const auto dim = post.mean.size();

  for (int K : K_list) {
    std::vector<double> est(static_cast<std::size_t>(trials));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(trials));
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int tr = 0; tr < trials; ++tr) {
      try {
        Rng rng(seed, "oracle", {static_cast<std::uint64_t>(K), static_cast<std::uint64_t>(tr)});
        std::vector<double> logw(static_cast<std::size_t>(K));
        for (int k = 0; k < K; ++k) {
          Eigen::VectorXd eps(dim);
          for (Eigen::Index i = 0; i < dim; ++i) eps[i] = rng.normal();
          const Eigen::VectorXd z = post.mean + chol * eps;
          logw[static_cast<std::size_t>(k)] =
              lgssm_joint_log_prob(m, x, z) - mvn_log_pdf(z, post.mean, prop_cov);
        }
        est[static_cast<std::size_t>(tr)] = obj::log_sum_exp(logw) - std::log(static_cast<double>(K));
      } catch (...) {
        errors[static_cast<std::size_t>(tr)] = std::current_exception();
      }
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    double mean = 0.0;
    for (double v : est) mean += v;
    mean /= trials;
    double var = 0.0;
    for (double v : est) var += (v - mean) * (v - mean);
    var /= (trials - 1);
    rep.rows.push_back({K, mean, std::sqrt(var / trials)});
  }

  // Rounding allowance for the degenerate case of an exact proposal, where
  // every weight equals p(x) and the stderr is zero.
  const double slack = 1e-9 * std::max(1.0, std::abs(rep.exact));
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    const auto& r = rep.rows[i];
    if (r.mean > rep.exact + 2.0 * r.stderr_ + slack) rep.bounded = false;
    if (i > 0) {
      const auto& p = rep.rows[i - 1];
      const double se = std::sqrt(p.stderr_ * p.stderr_ + r.stderr_ * r.stderr_);
      if (r.K >= p.K && r.mean < p.mean - 2.0 * se - slack) rep.monotone = false;
    }
  }
  return rep;
}

}  // namespace seqvi::metrics
