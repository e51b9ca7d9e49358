#pragma once

// Random instances for central-difference gradient checks, shared by the unit
// tests and the acceptance run.

#include <string>
#include <vector>

#include "seqvi/bundle.hpp"
#include "seqvi/distributions.hpp"
#include "seqvi/objectives.hpp"
#include "support.hpp"

namespace seqvi::testing {

struct GradInstance {
  Fn f;
  std::vector<Tensor> inputs;
  // Function differenced numerically when it differs from f: stopped
  // subexpressions frozen at the unperturbed inputs.
  Fn numeric = {};

  double max_rel_error(double h = 1e-5) const { return fd_max_rel_error(f, inputs, h, numeric); }
};

struct GradCase {
  std::string name;
  std::function<GradInstance(Rng&)> make;
};

// Contracts every output element against fixed random weights.
inline Tensor contract(const Tensor& out, const Tensor& w) { return ad::sum(ad::mul(out, w)); }

inline GradCase unary_case(std::string name, Tensor (*op)(const Tensor&), double lo, double hi) {
  return {name, [op, lo, hi](Rng& rng) {
            const Tensor w = random_tensor(rng, {3, 4});
            return GradInstance{[op, w](std::span<const Tensor> in) { return contract(op(in[0]), w); },
                                {random_tensor(rng, {3, 4}, lo, hi)}};
          }};
}

inline GradCase binary_case(std::string name, Tensor (*op)(const Tensor&, const Tensor&),
                            ad::Shape sa, ad::Shape sb, double blo = -1.0, double bhi = 1.0) {
  return {name, [=](Rng& rng) {
            const ad::Shape so = sa.rank() >= sb.rank() ? sa : sb;
            const Tensor w = random_tensor(rng, so);
            Tensor b = random_tensor(rng, sb, blo, bhi);
            return GradInstance{[op, w](std::span<const Tensor> in) { return contract(op(in[0], in[1]), w); },
                                {random_tensor(rng, sa), b}};
          }};
}

inline Tensor log_op(const Tensor& a) { return ad::log(a); }
inline Tensor exp_op(const Tensor& a) { return ad::exp(a); }
inline Tensor tanh_op(const Tensor& a) { return ad::tanh(a); }
inline Tensor sigmoid_op(const Tensor& a) { return ad::sigmoid(a); }
inline Tensor softplus_op(const Tensor& a) { return ad::softplus(a); }
inline Tensor neg_op(const Tensor& a) { return ad::neg(a); }
inline Tensor add_op(const Tensor& a, const Tensor& b) { return ad::add(a, b); }
inline Tensor sub_op(const Tensor& a, const Tensor& b) { return ad::sub(a, b); }
inline Tensor mul_op(const Tensor& a, const Tensor& b) { return ad::mul(a, b); }
inline Tensor div_op(const Tensor& a, const Tensor& b) { return ad::div(a, b); }

// Sets every parameter to uniform noise so that no branch sits at an exact
// zero initialization.
inline void randomize(ad::ParameterSet& ps, Rng& rng, double scale) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    std::vector<double> d(ps.value(i).numel());
    for (double& v : d) v = rng.uniform(-scale, scale);
    ps.set(i, std::move(d));
  }
}

// log w of one rollout as a function of every model and inference parameter.
inline GradInstance model_instance(Rng& rng, const ModelSpec& spec, std::size_t T) {
  auto bundle = std::make_shared<ModelBundle>(ModelBundle::create(spec, 0));
  if (spec.kind == "lorenz") {
    randomize(bundle->params(), rng, 0.5);
    const std::size_t th = bundle->params().index("gen.theta");
    bundle->params().set(th, {rng.uniform(20, 34), rng.uniform(7, 13), rng.uniform(2, 3.3)});
  } else {
    randomize(bundle->params(), rng, 0.6);
  }
  std::vector<Tensor> x, eps;
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> row(spec.d_x);
    for (double& v : row) {
      v = spec.kind == "lorenz" ? rng.uniform(-3, 3) : (rng.uniform(0, 1) < 0.4 ? 1.0 : 0.0);
    }
    x.push_back(Tensor::vector(row));
    eps.push_back(Tensor::vector(rng.normals(spec.n_z)));
  }
  std::vector<Tensor> inputs;
  for (std::size_t i = 0; i < bundle->params().size(); ++i) inputs.push_back(bundle->params().value(i));
  std::vector<std::uint8_t> mask(T, 1);
  auto f = [bundle, x, eps, mask](std::span<const Tensor> p) {
    const auto enc = bundle->infnet().prepare(p, x, mask);
    const auto r = bundle->infnet().rollout(p, enc, eps);
    return obj::log_weight(bundle->model(), p, x, r);
  };
  return {f, inputs};
}

inline ModelSpec tiny_gated_spec() {
  ModelSpec s;
  s.kind = "gated-bernoulli";
  s.d_x = 4;
  s.n_z = 3;
  s.n_h = 2;  // exercises the projection branch of the combiner
  s.emission_hidden = 3;
  return s;
}

inline ModelSpec tiny_lorenz_spec() {
  ModelSpec s;
  s.kind = "lorenz";
  s.n_h = 4;
  return s;
}

inline std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> cases;
  cases.push_back(binary_case("add", add_op, {3, 4}, {3, 4}));
  cases.push_back(binary_case("add-broadcast", add_op, {3, 4}, {4}));
  cases.push_back(binary_case("sub-broadcast", sub_op, {4}, {3, 4}));
  cases.push_back(binary_case("mul", mul_op, {3, 4}, {3, 4}));
  cases.push_back(binary_case("mul-scalar", mul_op, {}, {3, 4}));
  cases.push_back(binary_case("div", div_op, {3, 4}, {3, 4}, 0.5, 2.0));
  cases.push_back(binary_case("div-broadcast", div_op, {3, 4}, {4}, 0.5, 2.0));
  cases.push_back(unary_case("neg", neg_op, -2, 2));
  cases.push_back(unary_case("tanh", tanh_op, -2, 2));
  cases.push_back(unary_case("sigmoid", sigmoid_op, -4, 4));
  cases.push_back(unary_case("softplus", softplus_op, -4, 4));
  cases.push_back(unary_case("exp", exp_op, -2, 2));
  cases.push_back(unary_case("log", log_op, 0.2, 3));
  cases.push_back({"matmul", [](Rng& rng) {
                     const Tensor w = random_tensor(rng, {2, 4});
                     return GradInstance{[w](std::span<const Tensor> in) {
                                           return contract(ad::matmul(in[0], in[1]), w);
                                         },
                                         {random_tensor(rng, {2, 3}), random_tensor(rng, {3, 4})}};
                   }});
  cases.push_back({"matvec", [](Rng& rng) {
                     const Tensor w = random_tensor(rng, {2});
                     return GradInstance{[w](std::span<const Tensor> in) {
                                           return contract(ad::matvec(in[0], in[1]), w);
                                         },
                                         {random_tensor(rng, {2, 3}), random_tensor(rng, {3})}};
                   }});
  for (int axis : {-1, 0, 1}) {
    for (auto kind : {ad::Reduce::Sum, ad::Reduce::Mean, ad::Reduce::LogSumExp}) {
      const std::string kname = kind == ad::Reduce::Sum ? "sum" : kind == ad::Reduce::Mean ? "mean" : "logsumexp";
      cases.push_back({kname + "-axis" + std::to_string(axis), [kind, axis](Rng& rng) {
                         const ad::Shape out = axis < 0 ? ad::Shape{} : axis == 0 ? ad::Shape{4} : ad::Shape{3};
                         const Tensor w = random_tensor(rng, out);
                         return GradInstance{[kind, axis, w](std::span<const Tensor> in) {
                                               return contract(ad::tanh(ad::reduce(kind, in[0], axis)), w);
                                             },
                                             {random_tensor(rng, {3, 4}, -2, 2)}};
                       }});
    }
  }
  cases.push_back({"stop_gradient", [](Rng& rng) {
                     const Tensor x = random_tensor(rng, {5});
                     const Tensor frozen = ad::exp(x);
                     return GradInstance{[](std::span<const Tensor> in) {
                                           return ad::sum(ad::mul(in[0], ad::stop_gradient(ad::exp(in[0]))));
                                         },
                                         {x},
                                         [frozen](std::span<const Tensor> in) {
                                           return ad::sum(ad::mul(in[0], frozen));
                                         }};
                   }});
  cases.push_back({"slice-index", [](Rng& rng) {
                     const Tensor w = random_tensor(rng, {2, 3});
                     return GradInstance{[w](std::span<const Tensor> in) {
                                           return ad::add(contract(ad::slice(in[0], 1, 2), w),
                                                          ad::sum(ad::tanh(ad::index(in[0], 3))));
                                         },
                                         {random_tensor(rng, {4, 3})}};
                   }});
  cases.push_back({"concat-stack-reshape", [](Rng& rng) {
                     const Tensor w = random_tensor(rng, {3, 2});
                     return GradInstance{[w](std::span<const Tensor> in) {
                                           const std::vector<Tensor> parts{in[0], ad::tanh(in[1]), in[0]};
                                           const Tensor c = ad::concat(parts);  // [6]
                                           const std::vector<Tensor> rows{in[1], ad::exp(in[0])};
                                           const Tensor s = ad::stack(rows);  // [2, 2]
                                           return ad::add(contract(ad::reshape(c, {3, 2}), w),
                                                          ad::sum(ad::mul(s, s)));
                                         },
                                         {random_tensor(rng, {2}), random_tensor(rng, {2})}};
                   }});
  cases.push_back({"gaussian_log_prob", [](Rng& rng) {
                     return GradInstance{[](std::span<const Tensor> in) {
                                           return dist::gaussian_log_prob(in[0], dist::make_gaussian(in[1], in[2]));
                                         },
                                         {random_tensor(rng, {4}, -2, 2), random_tensor(rng, {4}),
                                          random_tensor(rng, {4})}};
                   }});
  cases.push_back({"gaussian_kl", [](Rng& rng) {
                     return GradInstance{[](std::span<const Tensor> in) {
                                           return dist::gaussian_kl(dist::make_gaussian(in[0], in[1]),
                                                                    dist::make_gaussian(in[2], in[3]));
                                         },
                                         {random_tensor(rng, {3}), random_tensor(rng, {3}),
                                          random_tensor(rng, {3}), random_tensor(rng, {3})}};
                   }});
  cases.push_back({"gaussian_rsample", [](Rng& rng) {
                     const Tensor eps = random_tensor(rng, {3}, -2, 2);
                     const Tensor w = random_tensor(rng, {3});
                     return GradInstance{[eps, w](std::span<const Tensor> in) {
                                           return contract(dist::gaussian_rsample(dist::make_gaussian(in[0], in[1]), eps), w);
                                         },
                                         {random_tensor(rng, {3}), random_tensor(rng, {3})}};
                   }});
  cases.push_back({"bernoulli_log_prob", [](Rng& rng) {
                     std::vector<double> xb(5);
                     for (double& v : xb) v = rng.uniform(0, 1) < 0.5 ? 0.0 : 1.0;
                     const Tensor x = Tensor::vector(xb);
                     return GradInstance{[x](std::span<const Tensor> in) {
                                           return dist::bernoulli_log_prob(x, dist::BernoulliVec{in[0]});
                                         },
                                         {random_tensor(rng, {5}, -3, 3)}};
                   }});
  cases.push_back({"lorenz-model", [](Rng& rng) { return model_instance(rng, tiny_lorenz_spec(), 3); }});
  cases.push_back({"gated-bernoulli-model", [](Rng& rng) { return model_instance(rng, tiny_gated_spec(), 3); }});
  return cases;
}

}  // namespace seqvi::testing
