#include "gibbsdiag/core_engine.hpp"
#include "gibbsdiag/diagnostics.hpp"
#include "gibbsdiag/gaussian_lab.hpp"

#include <benchmark/benchmark.h>

namespace {

using namespace gibbsdiag;
namespace ga = gibbsdiag::gaussian;

// Scaled random matrix with spectral radius 0.9.
Matrix stable_matrix(Eigen::Index d, Rng& rng) {
  Matrix a(d, d);
  for (auto& x : a.reshaped()) x = rng.normal();
  return a * (0.9 / ga::spectral_radius(a));
}

void BM_Lyapunov(benchmark::State& state) {
  const auto d = static_cast<Eigen::Index>(state.range(0));
  Rng rng(1);
  const Matrix a = stable_matrix(d, rng);
  const Matrix b = Matrix::Identity(d, d);
  for (auto _ : state) benchmark::DoNotOptimize(ga::solve_discrete_lyapunov(a, b));
}
BENCHMARK(BM_Lyapunov)->Arg(2)->Arg(8)->Arg(16);

void BM_GaussianChain(benchmark::State& state) {
  const auto pair = ga::make_conditional_pair(ga::setting_prior_model(),
                                              ga::MeanField{ga::DivergenceKind::ReverseKL});
  ChainConfig cfg;
  cfg.steps = static_cast<std::size_t>(state.range(0));
  cfg.seed = 3;
  for (auto _ : state) benchmark::DoNotOptimize(simulate_gibbs_chain(pair, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_GaussianChain)->Arg(10'000)->Unit(benchmark::kMillisecond);

void BM_Mmd2(benchmark::State& state) {
  const auto n = static_cast<Eigen::Index>(state.range(0));
  Rng rng(4);
  Matrix a(n, 2), b(n, 2);
  for (auto& x : a.reshaped()) x = rng.normal();
  for (auto& x : b.reshaped()) x = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(diag::mmd2(a, b));
}
BENCHMARK(BM_Mmd2)->Arg(1000)->Arg(5000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
