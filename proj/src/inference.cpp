#include "seqvi/inference.hpp"

#include <cmath>

namespace seqvi::infer {

std::size_t valid_prefix(std::span<const std::uint8_t> mask) {
  std::size_t n = 0;
  while (n < mask.size() && mask[n]) ++n;
  for (std::size_t t = n; t < mask.size(); ++t) {
    if (mask[t]) throw ShapeError("mask must mark a prefix of valid steps");
  }
  if (n == 0) throw ShapeError("sequence has no valid steps");
  return n;
}

// ---- GRU ------------------------------------------------------------------

GruEncoder::GruEncoder(ad::ParameterSet& params, std::size_t d_x, std::size_t n_h, Rng& init)
    : d_x_(d_x), n_h_(n_h) {
  if (d_x == 0 || n_h == 0) throw Error("GRU sizes must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(n_h));
  auto add = [&](const char* name, std::size_t cols) {
    if (cols == 0) {
      return params.add(name, {n_h}, model::uniform_init(init, n_h, bound));
    }
    return params.add(name, {n_h, cols}, model::uniform_init(init, n_h * cols, bound));
  };
  wr_ = add("inf.gru.w_r", d_x);
  ur_ = add("inf.gru.u_r", n_h);
  br_ = add("inf.gru.b_r", 0);
  wu_ = add("inf.gru.w_u", d_x);
  uu_ = add("inf.gru.u_u", n_h);
  bu_ = add("inf.gru.b_u", 0);
  wc_ = add("inf.gru.w_c", d_x);
  uc_ = add("inf.gru.u_c", n_h);
  bc_ = add("inf.gru.b_c", 0);
}

Tensor GruEncoder::cell(Params p, const Tensor& x, const Tensor& h) const {
  using ad::matvec;
  const Tensor r = ad::sigmoid(matvec(p[wr_], x) + matvec(p[ur_], h) + p[br_]);
  const Tensor u = ad::sigmoid(matvec(p[wu_], x) + matvec(p[uu_], h) + p[bu_]);
  const Tensor c = ad::tanh(matvec(p[wc_], x) + matvec(p[uc_], r * h) + p[bc_]);
  return h + u * (c - h);
}

std::vector<Tensor> GruEncoder::encode(Params p, std::span<const Tensor> x,
                                       std::span<const std::uint8_t> mask) const {
  if (x.empty()) throw ShapeError("encode: empty sequence");
  if (mask.size() != x.size()) throw ShapeError("encode: mask length differs from sequence");
  for (const Tensor& xt : x) {
    if (xt.shape().rank() != 1 || xt.numel() != d_x_) {
      throw ShapeError("encode: expected input rows of width " + std::to_string(d_x_) + ", got " +
                       xt.shape().str());
    }
  }
  std::vector<Tensor> h(x.size());
  Tensor next = Tensor::zeros(ad::Shape{n_h_});
  for (std::size_t t = x.size(); t-- > 0;) {
    if (mask[t]) next = cell(p, x[t], next);
    h[t] = next;
  }
  return h;
}

// ---- combiner -------------------------------------------------------------

Combiner::Combiner(ad::ParameterSet& params, std::size_t n_z, std::size_t n_h, Rng& init)
    : n_z_(n_z), n_h_(n_h), has_proj_(n_h != n_z) {
  if (n_z == 0 || n_h == 0) throw Error("combiner sizes must be positive");
  const double sz = 1.0 / std::sqrt(static_cast<double>(n_z));
  const double sh = 1.0 / std::sqrt(static_cast<double>(n_h));
  auto zeros = [](std::size_t k) { return std::vector<double>(k, 0.0); };
  wz_ = params.add("inf.comb.w_z", {n_z, n_z}, model::gaussian_init(init, n_z * n_z, sz));
  bz_ = params.add("inf.comb.b_z", {n_z}, zeros(n_z));
  proj_ = has_proj_ ? params.add("inf.comb.proj", {n_z, n_h}, model::gaussian_init(init, n_z * n_h, sh))
                    : 0;
  wmu_ = params.add("inf.comb.w_mu", {n_z, n_z}, model::gaussian_init(init, n_z * n_z, sz));
  bmu_ = params.add("inf.comb.b_mu", {n_z}, zeros(n_z));
  wlv_ = params.add("inf.comb.w_lv", {n_z, n_z}, model::gaussian_init(init, n_z * n_z, sz));
  blv_ = params.add("inf.comb.b_lv", {n_z}, zeros(n_z));
}

Tensor Combiner::project(Params p, const Tensor& h) const {
  if (h.shape().rank() != 1 || h.numel() != n_h_) {
    throw ShapeError("combine: expected hidden state of width " + std::to_string(n_h_) + ", got " +
                     h.shape().str());
  }
  return has_proj_ ? ad::matvec(p[proj_], h) : h;
}

dist::DiagGaussian Combiner::combine_projected(Params p, const Tensor& z_prev,
                                               const Tensor& ph) const {
  if (z_prev.shape().rank() != 1 || z_prev.numel() != n_z_) {
    throw ShapeError("combine: expected previous state of width " + std::to_string(n_z_) +
                     ", got " + z_prev.shape().str());
  }
  const Tensor c = 0.5 * (ad::tanh(ad::matvec(p[wz_], z_prev) + p[bz_]) + ph);
  return {ad::matvec(p[wmu_], c) + p[bmu_], ad::matvec(p[wlv_], c) + p[blv_]};
}

dist::DiagGaussian Combiner::combine(Params p, const Tensor& z_prev, const Tensor& h) const {
  return combine_projected(p, z_prev, project(p, h));
}

// ---- network --------------------------------------------------------------

InferenceNetwork::InferenceNetwork(ad::ParameterSet& params, std::size_t d_x, std::size_t n_z,
                                   std::size_t n_h, Rng& init)
    : encoder_(params, d_x, n_h, init), combiner_(params, n_z, n_h, init) {}

Encoded InferenceNetwork::prepare(Params p, std::span<const Tensor> x,
                                  std::span<const std::uint8_t> mask) const {
  const std::size_t steps = valid_prefix(mask);
  std::vector<Tensor> h = encoder_.encode(p, x, mask);
  Encoded enc;
  enc.steps = steps;
  enc.h.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) enc.h.push_back(combiner_.project(p, h[t]));
  return enc;
}

PosteriorRollout InferenceNetwork::rollout(Params p, const Encoded& enc,
                                           std::span<const Tensor> eps) const {
  if (eps.size() < enc.steps) {
    throw ShapeError("rollout: need " + std::to_string(enc.steps) + " noise rows, got " +
                     std::to_string(eps.size()));
  }
  PosteriorRollout r;
  r.z.reserve(enc.steps);
  r.q.reserve(enc.steps);
  r.eps.assign(eps.begin(), eps.begin() + static_cast<std::ptrdiff_t>(enc.steps));
  Tensor z_prev = Tensor::zeros(ad::Shape{latent_dim()});
  for (std::size_t t = 0; t < enc.steps; ++t) {
    dist::DiagGaussian q = combiner_.combine_projected(p, z_prev, enc.h[t]);
    z_prev = dist::gaussian_rsample(q, eps[t]);
    r.q.push_back(std::move(q));
    r.z.push_back(z_prev);
  }
  return r;
}

Tensor rollout_log_q(const PosteriorRollout& r) {
  std::vector<Tensor> terms;
  terms.reserve(r.steps());
  for (std::size_t t = 0; t < r.steps(); ++t) terms.push_back(dist::gaussian_log_prob(r.z[t], r.q[t]));
  return ad::sum(ad::stack(terms));
}

}  // namespace seqvi::infer
