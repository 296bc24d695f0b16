#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "tda/hessian.hpp"
#include "tda/model.hpp"

namespace tda {

enum class Method {
  kNnEuc,
  kNnCos,
  kNnDot,
  kNnEucUntuned,
  kNnCosUntuned,
  kNnDotUntuned,
  kIf,
  kRif,
  kGd,
  kGc,
  kRep,
};

inline constexpr std::array kAllMethods = {
    Method::kNnEuc, Method::kNnCos, Method::kNnDot, Method::kNnEucUntuned,
    Method::kNnCosUntuned, Method::kNnDotUntuned, Method::kIf, Method::kRif,
    Method::kGd, Method::kGc, Method::kRep};

std::string_view to_string(Method method);
Method parse_method(std::string_view name);
std::vector<Method> parse_method_list(std::string_view csv);
// False for the similarity methods, whose scores never read the weights.
bool depends_on_model(Method method);

enum class NnKind { kEuclidean, kCosine, kDot };

// NN EUC = -||a - b||^2, NN COS = cos(a, b), NN DOT = <a, b>.
double score_nn(NnKind kind, const Vector& test, const Vector& train);

// +g_t^T H^{-1} g_i: positive when upweighting the train point lowers the
// test loss.
double score_if(const Vector& test_grad, const Vector& train_grad,
                const HessianOperator& op, const IhvpConfig& cfg);
// cos(H^{-1/2} g_t, H^{-1/2} g_i).
double score_rif(const Vector& test_grad, const Vector& train_grad, const HessianOperator& op,
                 double eig_floor = 1e-8);
double score_rif(const Vector& test_grad, const Vector& train_grad,
                 const InvSqrtHessian& inv_sqrt);
double score_gd(const Vector& test_grad, const Vector& train_grad);
double score_gc(const Vector& test_grad, const Vector& train_grad);

struct RepresenterWeights {
  Matrix alpha;  // n x C; row i = -(p_i - onehot(y_i)) / (2 lambda n)
  double grad_norm = 0.0;
  // False when ||grad J|| exceeds the tolerance: the decomposition of the
  // logits into train contributions then does not hold.
  bool stationary = false;
};

RepresenterWeights representer_alphas(const ModelParams& params, const Dataset& data,
                                      double lambda, double stationarity_tol = 1e-8);

// alpha_{i,c} <f~_i, f~_t>.
double score_rep(const Vector& alpha_row, const Vector& train_aug, const Vector& test_aug,
                 int target_class);

struct AttributionMatrix {
  Method method = Method::kNnEuc;
  std::vector<std::uint64_t> test_ids;
  std::vector<std::uint64_t> train_ids;
  Matrix scores;  // |test| x |train|; higher = more important
  bool representer_stationary = true;
};

// Train ids ordered by descending score, ties by ascending id.
struct Ranking {
  std::vector<std::uint64_t> ids;
};

Ranking rank(const AttributionMatrix& matrix, std::uint64_t test_id);
Ranking rank_scores(std::span<const std::uint64_t> ids, std::span<const double> scores);
// Positions (indices into `scores`) in ranking order.
std::vector<std::size_t> rank_order(std::span<const std::uint64_t> ids,
                                    std::span<const double> scores);

enum class IfStrategy {
  // ihvp of every train gradient once; O(p) per (test, train) pair afterwards.
  kCacheTrain,
  // ihvp of each test gradient (the "s_test" ordering); O(p^2) per test with a
  // materialized inverse.
  kPerTest,
};

struct AttributionConfig {
  double lambda = 0.05;
  double damping = 0.01;
  IhvpConfig ihvp;
  IfStrategy if_strategy = IfStrategy::kCacheTrain;
  LabelPolicy test_label_policy = LabelPolicy::kGold;
  double if_sign = 1.0;
  double eig_floor = 1e-8;
  double stationarity_tol = 1e-8;
  std::size_t hessian_cap = kDefaultHessianCap;
  unsigned threads = 1;
  // Replaces the model Hessian (used for the identity / isotropic checks).
  std::optional<double> isotropic_hessian;
};

// Scores `tests` against the train set the model was fit on. Per-method
// caches (train gradients, ihvp(g_i), H^{-1/2} g_i, representer weights) are
// built once, on first use, under a lock; scoring itself is parallel over
// tests and writes into pre-sized rows.
class Attributor {
 public:
  Attributor(const ModelParams& model, const Dataset& train, AttributionConfig cfg);
  ~Attributor();
  Attributor(const Attributor&) = delete;
  Attributor& operator=(const Attributor&) = delete;

  AttributionMatrix score(Method method, const Dataset& tests) const;
  // Restricts the train columns to `candidates` (indices into train).
  AttributionMatrix score(Method method, const Dataset& tests,
                          std::span<const std::size_t> candidates) const;

  // Builds the caches `method` needs; score() calls this itself.
  void prepare(Method method) const;

  const ModelParams& model() const { return model_; }
  const Dataset& train() const { return train_; }
  const AttributionConfig& config() const { return cfg_; }
  const HessianOperator& hessian() const;

 private:
  struct Cache;

  Vector test_gradient(const Instance& inst) const;

  ModelParams model_;
  const Dataset& train_;  // must outlive the Attributor
  AttributionConfig cfg_;
  std::unique_ptr<Cache> cache_;
  mutable std::mutex mutex_;
};

AttributionMatrix attribute(Method method, const ModelParams& model, const Dataset& train,
                            const Dataset& tests, const AttributionConfig& cfg);

}  // namespace tda
