#include <benchmark/benchmark.h>

#include "adarl/kernels.hpp"
#include "adarl/pacbound.hpp"
#include "adarl/rng.hpp"

using namespace adarl;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  return Eigen::MatrixXd::NullaryExpr(rows, cols, [&] { return rng.normal(); });
}

Exec exec_of(const benchmark::State& s) { return s.range(1) == 0 ? Exec::serial : Exec::parallel; }

void BM_ColumnMeans(benchmark::State& state) {
  const auto x = random_matrix(state.range(0), 16, 1);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::column_means(x, exec_of(state)));
  state.SetItemsProcessed(state.iterations() * x.size());
}

void BM_Covariance(benchmark::State& state) {
  const auto x = random_matrix(state.range(0), 16, 2);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::covariance(x, exec_of(state)));
  state.SetItemsProcessed(state.iterations() * x.size());
}

void BM_DenseTanh(benchmark::State& state) {
  const auto x = random_matrix(state.range(0), 64, 3);
  const auto w = random_matrix(64, 64, 4);
  const Eigen::RowVectorXd b = random_matrix(1, 64, 5);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::dense_tanh(x, w, b, exec_of(state)));
  state.SetItemsProcessed(state.iterations() * x.rows());
}

void BM_BoundCoverage(benchmark::State& state) {
  pacbound::CoverageSpec spec;
  spec.trials = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(pacbound::bound_holds_empirically(spec).holds);
}

}  // namespace

BENCHMARK(BM_ColumnMeans)->ArgsProduct({{1 << 12, 1 << 16}, {0, 1}});
BENCHMARK(BM_Covariance)->ArgsProduct({{1 << 12, 1 << 16}, {0, 1}});
BENCHMARK(BM_DenseTanh)->ArgsProduct({{64, 4096}, {0, 1}});
BENCHMARK(BM_BoundCoverage)->Arg(16)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
