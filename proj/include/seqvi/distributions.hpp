#pragma once

#include "seqvi/autodiff.hpp"

namespace seqvi::dist {

using ad::Tensor;

// Diagonal Gaussian parameterized by mean and natural-log variance.
struct DiagGaussian {
  Tensor mean;
  Tensor log_var;

  std::size_t dim() const { return mean.numel(); }
};

struct BernoulliVec {
  Tensor logits;
};

DiagGaussian make_gaussian(Tensor mean, Tensor log_var);

// log N(x; mean, diag(exp(log_var))), summed over dimensions.
Tensor gaussian_log_prob(const Tensor& x, const DiagGaussian& g);

// Closed-form KL(q || p) between diagonal Gaussians.
Tensor gaussian_kl(const DiagGaussian& q, const DiagGaussian& p);

// mean + exp(log_var / 2) * eps. No gradient reaches eps.
Tensor gaussian_rsample(const DiagGaussian& g, const Tensor& eps);

// Sum of x log sigmoid(l) + (1 - x) log(1 - sigmoid(l)), in logit form.
// x must be 0/1 valued.
Tensor bernoulli_log_prob(const Tensor& x, const BernoulliVec& b);

}  // namespace seqvi::dist
