#include <benchmark/benchmark.h>

#include <random>

#include "poolcf/bprfit.hpp"
#include "poolcf/mlp.hpp"
#include "poolcf/synthgen.hpp"

using namespace poolcf;

namespace {

synth::CityConfig bench_city(int segments, synth::FdFamily family = synth::FdFamily::Greenshields) {
  synth::CityConfig c;
  c.name = "bench";
  c.seed = 3;
  c.start_date = Date::from_iso("2024-03-04");
  c.weeks = 7;
  c.penetration = 0.5;
  c.fd_family = family;
  c.highway.count = segments;
  c.arterial.count = 0;
  return c;
}

std::vector<TrainingExample> bench_examples(std::size_t n) {
  std::mt19937_64 g(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<TrainingExample> out(n);
  for (auto& ex : out) {
    for (auto& x : ex.x) x = u(g);
    ex.label_inv_speed = 0.05;
  }
  return out;
}

void BM_GenerateCity(benchmark::State& state) {
  const auto cfg = bench_city(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(synth::generate_city(cfg));
}

void BM_GenerateCitySerial(benchmark::State& state) {
  const auto cfg = bench_city(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(synth::serial::generate_city(cfg));
}

void BM_PredictSpeeds(benchmark::State& state) {
  const auto xs = bench_examples(static_cast<std::size_t>(state.range(0)));
  const auto m = mlp::initialize(1, fit_norm_stats(xs), RoadPriority::Highway, "bench");
  for (auto _ : state) benchmark::DoNotOptimize(mlp::predict_speeds(m, xs));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_PredictSpeedsSerial(benchmark::State& state) {
  const auto xs = bench_examples(static_cast<std::size_t>(state.range(0)));
  const auto m = mlp::initialize(1, fit_norm_stats(xs), RoadPriority::Highway, "bench");
  for (auto _ : state) benchmark::DoNotOptimize(mlp::serial::predict_speeds(m, xs));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_FitCity(benchmark::State& state) {
  const auto d = synth::generate_city(bench_city(static_cast<int>(state.range(0)), synth::FdFamily::Bpr)).data;
  for (auto _ : state) benchmark::DoNotOptimize(bpr::fit_city(d));
}

void BM_FitCitySerial(benchmark::State& state) {
  const auto d = synth::generate_city(bench_city(static_cast<int>(state.range(0)), synth::FdFamily::Bpr)).data;
  for (auto _ : state) benchmark::DoNotOptimize(bpr::serial::fit_city(d));
}

}  // namespace

BENCHMARK(BM_GenerateCity)->Arg(100)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GenerateCitySerial)->Arg(100)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PredictSpeeds)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PredictSpeedsSerial)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FitCity)->Arg(40)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FitCitySerial)->Arg(40)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
