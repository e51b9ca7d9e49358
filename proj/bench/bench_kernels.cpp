// Serial reference kernels against their OpenMP counterparts on one Lorenz
// minibatch. Thread count comes from SEQVI_THREADS; the state argument is the
// number of sequences in the batch.

#include <benchmark/benchmark.h>

#include <omp.h>

#include "seqvi/kernels.hpp"

namespace {

using namespace seqvi;

struct Fixture {
  explicit Fixture(std::size_t n) : bundle(ModelBundle::create(ModelSpec{}, 1)) {
    data::LorenzConfig cfg;
    cfg.n_train = n;
    cfg.n_val = cfg.n_test = 0;
    const auto ds = data::gen_lorenz(cfg).train;
    for (std::size_t i = 0; i < ds.size(); ++i) views.push_back(data::view(ds.x[i], ds.mask[i]));
    bound.kind = obj::BoundKind::IwDkf;
    bound.K = 5;
  }
  ModelBundle bundle;
  std::vector<data::SequenceView> views;
  obj::BoundConfig bound;
};

template <auto Kernel>
void gradient(benchmark::State& state) {
  kernels::apply_thread_config();
  const Fixture fx(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    auto g = Kernel(fx.bundle, fx.views, fx.bound, 1.0, kernels::NoiseKey{});
    benchmark::DoNotOptimize(g.grads.data());
  }
  state.counters["threads"] = omp_get_max_threads();
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <auto Kernel>
void evaluate(benchmark::State& state) {
  kernels::apply_thread_config();
  const Fixture fx(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    auto s = Kernel(fx.bundle, fx.views, 100, kernels::NoiseKey{0, "eval", 0});
    benchmark::DoNotOptimize(s.data());
  }
  state.counters["threads"] = omp_get_max_threads();
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

BENCHMARK(gradient<kernels::gradient_serial>)->Name("gradient/serial")->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);
BENCHMARK(gradient<kernels::gradient_parallel>)->Name("gradient/parallel")->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);
BENCHMARK(evaluate<kernels::evaluate_serial>)->Name("evaluate/serial")->Arg(10)->Unit(benchmark::kMillisecond);
BENCHMARK(evaluate<kernels::evaluate_parallel>)->Name("evaluate/parallel")->Arg(10)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
