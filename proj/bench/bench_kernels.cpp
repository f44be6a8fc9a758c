// Row-parallel kernels against their serial references.
#include <benchmark/benchmark.h>

#include "advmiss/dataset.hpp"
#include "advmiss/kernels.hpp"
#include "advmiss/mechanisms.hpp"
#include "advmiss/scm.hpp"

using namespace advmiss;

namespace {

GaussianScm chain(int d) {
  Matrix B = Matrix::Zero(d, d);
  for (int j = 0; j + 1 < d; ++j) B(j, j + 1) = 0.8;
  return GaussianScm::equal_variance(B);
}

MaskedDataset masked(Index n, int d) {
  Dataset ds;
  for (int j = 0; j < d; ++j) ds.columns.push_back("x" + std::to_string(j));
  ds.values = sample(chain(d), n, 7);
  // each of the last three columns masked independently with prob 0.3
  std::vector<int> v{d - 3, d - 2, d - 1};
  std::vector<ObservationPattern> support;
  Vector probs(8);
  for (int k = 0; k < 8; ++k) {
    support.push_back(pattern_from_code(static_cast<std::uint64_t>(k), v, d));
    const int masked = 3 - std::popcount(static_cast<unsigned>(k));
    probs(k) = std::pow(0.3, masked) * std::pow(0.7, 3 - masked);
  }
  return apply_mechanism_serial(ds, Mcar(d, support, probs), 11);
}

void BM_PatternMoments(benchmark::State& state) {
  const auto mds = masked(state.range(0), 8);
  for (auto _ : state) benchmark::DoNotOptimize(pattern_moments(mds));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_PatternMomentsSerial(benchmark::State& state) {
  const auto mds = masked(state.range(0), 8);
  for (auto _ : state) benchmark::DoNotOptimize(pattern_moments_serial(mds));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_WeightedMoments(benchmark::State& state, bool serial) {
  const Index n = state.range(0);
  const Matrix X = sample(chain(6), n, 3);
  std::vector<std::uint64_t> bits;
  for (std::uint64_t k = 0; k < 64; ++k) bits.push_back(k);
  const Matrix omega = Matrix::Constant(n, 64, 1.0 / 64);
  for (auto _ : state) {
    if (serial)
      benchmark::DoNotOptimize(weighted_pattern_moments_serial(X, omega, bits));
    else
      benchmark::DoNotOptimize(weighted_pattern_moments(X, omega, bits));
  }
  state.SetItemsProcessed(state.iterations() * n);
}

void BM_ApplyMechanism(benchmark::State& state, bool serial) {
  Dataset ds;
  for (int j = 0; j < 8; ++j) ds.columns.push_back("x" + std::to_string(j));
  ds.values = sample(chain(8), state.range(0), 5);
  const auto mech = Mcar::always_observed(8);
  for (auto _ : state) {
    if (serial)
      benchmark::DoNotOptimize(apply_mechanism_serial(ds, *mech, 1));
    else
      benchmark::DoNotOptimize(apply_mechanism(ds, *mech, 1));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_PatternMoments)->Arg(10000)->Arg(100000);
BENCHMARK(BM_PatternMomentsSerial)->Arg(10000)->Arg(100000);
BENCHMARK_CAPTURE(BM_WeightedMoments, parallel, false)->Arg(2000)->Arg(20000);
BENCHMARK_CAPTURE(BM_WeightedMoments, serial, true)->Arg(2000)->Arg(20000);
BENCHMARK_CAPTURE(BM_ApplyMechanism, parallel, false)->Arg(100000);
BENCHMARK_CAPTURE(BM_ApplyMechanism, serial, true)->Arg(100000);

BENCHMARK_MAIN();
