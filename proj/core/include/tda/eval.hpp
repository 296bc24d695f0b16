#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tda/attributors.hpp"
#include "tda/data_io.hpp"
#include "tda/model.hpp"
#include "tda/report.hpp"

namespace tda {

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::size_t n_test_sample = 100;
  std::size_t n_train_sample = 500;
  std::vector<std::size_t> k_remove{20, 100};
  std::size_t n_removal_tests = 50;
  std::size_t n_random_runs = 50;
  std::vector<std::size_t> k_top{1, 10, 50};
  bool abs_scores = false;  // rank |score| in correlate/overlap
  unsigned threads = 1;
};

// Average (fractional) ranks, 1-based.
std::vector<double> average_ranks(std::span<const double> values);

// Pearson correlation of the average ranks. nullopt when either side has
// zero rank variance. Throws ConfigError unless both have the same length >= 2.
MaybeValue spearman(std::span<const double> a, std::span<const double> b);

// |top_k(a) ∩ top_k(b)| / k.
double overlap_fraction(const Ranking& a, const Ranking& b, std::size_t k);

// Seeded sample of min(count, n) indices from [0, n), sorted ascending.
std::vector<std::size_t> sample_sorted(std::size_t n, std::size_t count, std::uint64_t seed);

// Mean-over-tests Spearman between every method pair on a seeded train
// sample. Keys rho/A/B and count/A/B for every ordered pair.
EvalReport correlation_matrix(std::span<const Method> methods, const ModelParams& model,
                              const Dataset& train, const Dataset& tests,
                              const AttributionConfig& acfg, const ExperimentConfig& cfg);

// Mean-over-tests share of common top-k ids; keys overlap/A/B/k.
EvalReport topk_overlap(std::span<const Method> methods, const ModelParams& model,
                        const Dataset& train, const Dataset& tests,
                        const AttributionConfig& acfg, const ExperimentConfig& cfg);

// For each sampled test, removes the method's top-k train instances, retrains
// from the original init and records p_after(y^) - p_before(y^) where y^ is
// the original prediction. `model` must be the result of train(train, tcfg).
// Keys delta/M/k, failed/M/k, random_mean/k, random_std/k, random_se/k.
EvalReport remove_and_retrain(std::span<const Method> methods, const ModelParams& model,
                              const Dataset& train, const Dataset& tests,
                              const TrainConfig& tcfg, const AttributionConfig& acfg,
                              const ExperimentConfig& cfg);

// Mean over sampled tests of the Spearman correlation between scores under
// the trained model and under ModelParams::random_init(C, d, random_seed).
// Keys rho/M, count/M.
EvalReport randomized_test(std::span<const Method> methods, const ModelParams& model,
                           const Dataset& train, const Dataset& tests,
                           const AttributionConfig& acfg, const ExperimentConfig& cfg,
                           std::uint64_t random_seed);

// Tests predicted as the artifact-aligned class (the class with the highest
// tag frequency in train) while labelled otherwise; rate = mean share of
// tagged train instances in the top-k. Keys rate/M/k plus rate/RANDOM/k for
// seeded random rankings, base_rate, aligned_class, mispredicted.
EvalReport artifact_rate(std::span<const Method> methods, const ModelParams& model,
                         const Dataset& train, const Dataset& tests, const std::string& tag,
                         const AttributionConfig& acfg, const ExperimentConfig& cfg);

// HIT@k: share of sampled train instances whose perturbed copy, used as the
// target, ranks the original within the top k. Keys hit/M/kind/k.
EvalReport perturb_recover(std::span<const Method> methods, std::span<const PerturbKind> kinds,
                           const ModelParams& model, const Dataset& train,
                           const AttributionConfig& acfg, const ExperimentConfig& cfg,
                           double noise_scale = 0.1);

struct TimingConfig {
  std::vector<std::size_t> dims{64, 128, 256};
  std::size_t n_train = 100;
  std::size_t n_test = 100;
  int classes = 2;
  int runs = 5;
  std::uint64_t seed = 0;
};

// Per-test wall time (seconds, median over runs) of each method's scoring
// pass, caches excluded, on synthetic gaussian data for each dim. IF uses the
// per-test ordering with a materialized inverse. Keys seconds/M/d and
// ratio/M/d (time at d over time at the previous dim).
EvalReport timing(std::span<const Method> methods, const AttributionConfig& acfg,
                  const TimingConfig& cfg);

}  // namespace tda
