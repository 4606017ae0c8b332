#include <benchmark/benchmark.h>

#include <random>

#include "didkit/csdid.hpp"
#include "didkit/diagnostics.hpp"
#include "didkit/regress.hpp"
#include "didkit/variance.hpp"

using namespace didkit;

namespace {

struct ConleyInput {
  Eigen::MatrixXd scores;
  std::vector<std::size_t> location;
  std::vector<GeoPoint> points;
};

ConleyInput conley_input(long n) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> lat(54.6, 57.7), lon(8.1, 12.6);
  ConleyInput in;
  in.scores.resize(n * 4, 3);
  for (Eigen::Index i = 0; i < in.scores.size(); ++i) in.scores.data()[i] = z(rng);
  for (long i = 0; i < n; ++i) in.points.push_back({lat(rng), lon(rng)});
  for (long r = 0; r < n * 4; ++r) in.location.push_back(static_cast<std::size_t>(r / 4));
  return in;
}

void BM_ConleyMeat(benchmark::State& state) {
  const auto in = conley_input(state.range(0));
  for (auto _ : state)
    benchmark::DoNotOptimize(conley_meat(in.scores, in.location, in.points, 50.0, Kernel::bartlett));
}

void BM_ConleyMeatSerial(benchmark::State& state) {
  const auto in = conley_input(state.range(0));
  for (auto _ : state)
    benchmark::DoNotOptimize(conley_meat_serial(in.scores, in.location, in.points, 50.0, Kernel::bartlett));
}

struct DemeanInput {
  Eigen::MatrixXd columns;
  std::vector<Factor> factors;
};

DemeanInput demean_input(long n_units) {
  const int periods = 4, counties = 20;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> z;
  const long n = n_units * periods;
  DemeanInput in;
  in.columns.resize(n, 40);
  for (Eigen::Index i = 0; i < in.columns.size(); ++i) in.columns.data()[i] = z(rng);
  std::vector<long> unit(n), period(n), county_period(n);
  for (long r = 0; r < n; ++r) {
    unit[r] = r / periods;
    period[r] = r % periods;
    county_period[r] = (unit[r] % counties) * periods + period[r];
  }
  in.factors = {Factor::from_keys(unit), Factor::from_keys(period), Factor::from_keys(county_period)};
  return in;
}

void BM_Demean(benchmark::State& state) {
  const auto in = demean_input(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(demean(in.columns, in.factors));
}

void BM_DemeanSerial(benchmark::State& state) {
  const auto in = demean_input(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(demean_serial(in.columns, in.factors));
}

Eigen::MatrixXd influence_input(long n) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  Eigen::MatrixXd m(n, 8);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = z(rng);
  return m;
}

void BM_MultiplierBootstrap(benchmark::State& state) {
  const auto m = influence_input(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(multiplier_bootstrap(m, 999, 1));
}

void BM_MultiplierBootstrapSerial(benchmark::State& state) {
  const auto m = influence_input(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(multiplier_bootstrap_serial(m, 999, 1));
}

std::vector<double> kde_input(long n) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z;
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = z(rng);
  return v;
}

void BM_Kde(benchmark::State& state) {
  const auto v = kde_input(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(kde_export(v, 512));
}

void BM_KdeSerial(benchmark::State& state) {
  const auto v = kde_input(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(kde_export_serial(v, 512));
}

}  // namespace

BENCHMARK(BM_ConleyMeat)->Arg(400)->Arg(1600)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConleyMeatSerial)->Arg(400)->Arg(1600)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Demean)->Arg(1600)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DemeanSerial)->Arg(1600)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MultiplierBootstrap)->Arg(1600)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MultiplierBootstrapSerial)->Arg(1600)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Kde)->Arg(1600)->Arg(20000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_KdeSerial)->Arg(1600)->Arg(20000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
