// Timings for the hot paths: one lasso fit, a CV path, and a full cross-fit.

#include "bifdr/crossfit.hpp"
#include "bifdr/functional.hpp"
#include "bifdr/simulate.hpp"
#include "bifdr/solver.hpp"

#include <benchmark/benchmark.h>

using namespace bifdr;

namespace {

Dataset experiment_data(int experiment, std::size_t n, std::size_t p) {
  return sample_experiment(make_design(experiment, p, 5.0, 5.0), n, 42);
}

void BM_FitL1(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto p = static_cast<std::size_t>(state.range(1));
  const Dataset data = experiment_data(1, n, p);
  const auto prob = build_loss(registry_get("expected_product"), data, Basis::linear(p), Target::a,
                               link("identity"));
  const double lambda = default_lambda(static_cast<double>(n), static_cast<double>(p));
  FitConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(fit_l1(prob, lambda, cfg));
}
BENCHMARK(BM_FitL1)->Args({1000, 100})->Args({4000, 200})->Unit(benchmark::kMillisecond);

void BM_FitL1Exp(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto p = static_cast<std::size_t>(state.range(1));
  const Dataset data = experiment_data(3, n, p);
  const auto prob = build_loss(registry_get("expected_product"), data, Basis::linear(p), Target::a,
                               link("exp"));
  const double lambda = default_lambda(static_cast<double>(n), static_cast<double>(p));
  FitConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(fit_l1(prob, lambda, cfg));
}
BENCHMARK(BM_FitL1Exp)->Args({1000, 100})->Unit(benchmark::kMillisecond);

void BM_CvPath(benchmark::State& state) {
  const Dataset data = experiment_data(1, 1000, 100);
  const auto spec = registry_get("expected_product");
  const Basis basis = Basis::linear(100);
  FitConfig cfg;
  cfg.threads = static_cast<int>(state.range(0));
  auto build = [&](const Dataset& d) { return build_loss(spec, d, basis, Target::a, link("identity")); };
  for (auto _ : state) benchmark::DoNotOptimize(cv_lambda(build, data, cfg));
}
BENCHMARK(BM_CvPath)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();

void BM_Crossfit(benchmark::State& state) {
  const int experiment = static_cast<int>(state.range(0));
  const Dataset data = experiment_data(experiment, 1000, 100);
  const char* la = working_link(experiment);
  const char* lb = experiment == 1 ? "identity" : "exp";
  CrossfitConfig cfg;
  cfg.seed = 1;
  for (auto _ : state)
    benchmark::DoNotOptimize(
        estimate(registry_get("expected_product"), data, Basis::linear(100), link(la), link(lb), cfg));
}
BENCHMARK(BM_Crossfit)->Arg(1)->Arg(2)->Arg(3)->Unit(benchmark::kSecond)->Iterations(1);

}  // namespace

BENCHMARK_MAIN();
