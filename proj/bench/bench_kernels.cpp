// Serial reference vs OpenMP paths of the two parallel kernels.
#include <benchmark/benchmark.h>

#include "designz/simlab.hpp"

namespace {

using namespace designz;

Scenario small_study() {
  Scenario s;
  s.dgp.kind = DgpKind::heterogeneous;
  s.n = 200;
  s.n1 = 100;
  s.seed = 7;
  const GScale g(GKind::log);
  s.roster.push_back({"Pois", "Yes", "I=A", {EstimatorKind::model_assisted, {FamilyKind::poisson, true, {}}, FitMethod::mle, g, {}}});
  s.roster.push_back({"Linear", "Yes", "I=A", {EstimatorKind::model_assisted, {FamilyKind::gaussian, true, {}}, FitMethod::mle, g, {}}});
  s.roster.push_back({"Unadjusted", "", "", {EstimatorKind::unadjusted, {}, FitMethod::mle, g, {}}});
  return s;
}

void run_study_kernel(benchmark::State& state, Execution exec) {
  const Scenario s = small_study();
  RunOptions opts;
  opts.execution = exec;
  for (auto _ : state) {
    StudyTable t = run_study(s, static_cast<std::size_t>(state.range(0)), s.seed, opts);
    benchmark::DoNotOptimize(t.rows.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void enumeration_kernel(benchmark::State& state, Execution exec) {
  Rng rng(11);
  const auto n = static_cast<std::size_t>(state.range(0));
  const PotentialTable pop = gen_population(DgpKind::heterogeneous, n, rng);
  AteRequest req{EstimatorKind::model_assisted, {FamilyKind::gaussian, true, {}}, FitMethod::mle, GScale(), {}};
  RunOptions opts;
  opts.execution = exec;
  for (auto _ : state) {
    RandomizationDistribution dist = exact_randomization_distribution(pop, n / 2, req, kDefaultEnumerationCap, opts);
    benchmark::DoNotOptimize(dist.mean);
  }
}

void BM_StudySerial(benchmark::State& state) { run_study_kernel(state, Execution::serial); }
void BM_StudyParallel(benchmark::State& state) { run_study_kernel(state, Execution::parallel); }
void BM_EnumerateSerial(benchmark::State& state) { enumeration_kernel(state, Execution::serial); }
void BM_EnumerateParallel(benchmark::State& state) { enumeration_kernel(state, Execution::parallel); }

}  // namespace

BENCHMARK(BM_StudySerial)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_StudyParallel)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EnumerateSerial)->Arg(12)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EnumerateParallel)->Arg(12)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
