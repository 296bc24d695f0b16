#include <benchmark/benchmark.h>

#include <map>

#include "tda/attributors.hpp"
#include "tda/data_io.hpp"
#include "tda/hessian.hpp"
#include "tda/model.hpp"

namespace {

struct Fixture {
  tda::Corpus corpus;
  tda::ModelParams model;
};

// One trained model per dimension, shared by every benchmark.
const Fixture& fixture(std::size_t d) {
  static std::map<std::size_t, Fixture> cache;
  auto it = cache.find(d);
  if (it != cache.end()) return it->second;
  tda::GeneratorSpec spec;
  spec.n = 500;
  spec.n_test = 50;
  spec.d = d;
  auto corpus = tda::gen_gaussian(spec);
  tda::TrainConfig tc;
  tc.grad_tol = 1e-6;
  auto model = tda::train(corpus.train, tc).params;
  return cache.emplace(d, Fixture{std::move(corpus), std::move(model)}).first->second;
}

void BM_ExactHessian(benchmark::State& state) {
  const auto& f = fixture(state.range(0));
  for (auto _ : state)
    benchmark::DoNotOptimize(tda::exact_hessian(f.model, f.corpus.train, 0.05, 0.01));
}
BENCHMARK(BM_ExactHessian)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Hvp(benchmark::State& state) {
  const auto& f = fixture(state.range(0));
  const tda::Vector v = tda::Vector::Ones(f.model.param_count());
  for (auto _ : state)
    benchmark::DoNotOptimize(tda::hvp(f.model, f.corpus.train, 0.05, 0.01, v));
}
BENCHMARK(BM_Hvp)->Arg(16)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_Ihvp(benchmark::State& state, tda::IhvpMethod method) {
  const auto& f = fixture(state.range(0));
  const tda::HessianOperator op(f.model, f.corpus.train, 0.05, 0.01);
  tda::Vector v = tda::Vector::LinSpaced(op.size(), -1.0, 1.0);
  tda::IhvpConfig cfg;
  cfg.method = method;
  for (auto _ : state) benchmark::DoNotOptimize(tda::ihvp(op, v, cfg));
}
BENCHMARK_CAPTURE(BM_Ihvp, direct, tda::IhvpMethod::kDirect)->Arg(16)->Arg(64)
    ->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Ihvp, cg, tda::IhvpMethod::kCg)->Arg(16)->Arg(64)
    ->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Ihvp, lissa, tda::IhvpMethod::kLissa)->Arg(16)->Arg(64)
    ->Unit(benchmark::kMillisecond);

// Full attribution of 50 tests, caches rebuilt each iteration.
void BM_Attribute(benchmark::State& state, tda::Method method) {
  const auto& f = fixture(state.range(0));
  tda::AttributionConfig cfg;
  for (auto _ : state)
    benchmark::DoNotOptimize(tda::attribute(method, f.model, f.corpus.train, f.corpus.test, cfg));
  state.SetItemsProcessed(state.iterations() * f.corpus.test.size() * f.corpus.train.size());
}
BENCHMARK_CAPTURE(BM_Attribute, NN_COS, tda::Method::kNnCos)->Arg(16)->Arg(64)
    ->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Attribute, GD, tda::Method::kGd)->Arg(16)->Arg(64)
    ->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Attribute, GC, tda::Method::kGc)->Arg(16)->Arg(64)
    ->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Attribute, IF, tda::Method::kIf)->Arg(16)->Arg(64)
    ->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Attribute, RIF, tda::Method::kRif)->Arg(16)->Arg(64)
    ->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Attribute, REP, tda::Method::kRep)->Arg(16)->Arg(64)
    ->Unit(benchmark::kMillisecond);

// Scoring only, against a prepared Attributor.
void BM_ScorePrepared(benchmark::State& state, tda::Method method) {
  const auto& f = fixture(state.range(0));
  tda::Attributor attr(f.model, f.corpus.train, tda::AttributionConfig{});
  attr.prepare(method);
  for (auto _ : state) benchmark::DoNotOptimize(attr.score(method, f.corpus.test));
}
BENCHMARK_CAPTURE(BM_ScorePrepared, IF, tda::Method::kIf)->Arg(16)->Arg(64)
    ->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_ScorePrepared, RIF, tda::Method::kRif)->Arg(16)->Arg(64)
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
