#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace tda {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
// C x (d+1) weights. Row-major storage makes the flattened parameter vector
// index c * (d+1) + j for class c and augmented feature j.
using ParamMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Instance {
  std::uint64_t id = 0;
  Vector features;
  // Alternate embedding consumed by the *_UNTUNED similarity methods. When
  // absent those methods fall back to `features`.
  std::optional<Vector> untuned;
  int label = 0;
  std::vector<std::string> tags;  // sorted, unique
  std::string text;

  bool has_tag(std::string_view tag) const;
  void add_tag(std::string tag);
};

// Ordered, validated collection of instances sharing one feature dimension
// and class count.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::size_t dim, int classes);
  Dataset(std::size_t dim, int classes, std::vector<Instance> instances);

  void add(Instance inst);

  std::size_t size() const { return instances_.size(); }
  bool empty() const { return instances_.empty(); }
  std::size_t dim() const { return dim_; }
  int classes() const { return classes_; }

  const Instance& operator[](std::size_t i) const { return instances_[i]; }
  const std::vector<Instance>& instances() const { return instances_; }
  auto begin() const { return instances_.begin(); }
  auto end() const { return instances_.end(); }

  std::optional<std::size_t> index_of(std::uint64_t id) const;
  std::vector<std::uint64_t> ids() const;

  // New dataset holding the instances at `indices`, in that order.
  Dataset subset(std::span<const std::size_t> indices) const;
  // New dataset without the instances at `indices`; order otherwise kept.
  Dataset without(std::span<const std::size_t> indices) const;

  // n x (d+1) design matrix with the constant 1 in the last column.
  Matrix augmented_design() const;

 private:
  void validate(const Instance& inst) const;

  std::size_t dim_ = 0;
  int classes_ = 0;
  std::vector<Instance> instances_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
  std::optional<std::size_t> untuned_dim_;
};

struct ModelParams {
  ParamMatrix weights;  // C x (d+1); column d multiplies the constant feature

  int classes() const { return static_cast<int>(weights.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(weights.cols()) - 1; }
  std::size_t param_count() const { return static_cast<std::size_t>(weights.size()); }

  Eigen::Map<const Vector> flat() const {
    return {weights.data(), weights.size()};
  }

  static ModelParams zeros(int classes, std::size_t dim);
  // Entries i.i.d. uniform in [-0.01, 0.01].
  static ModelParams random_init(int classes, std::size_t dim, std::uint64_t seed);
  static ModelParams from_flat(int classes, std::size_t dim, const Vector& flat);
};

enum class LabelPolicy { kGold, kPredicted };

std::string_view to_string(LabelPolicy policy);
LabelPolicy parse_label_policy(std::string_view name);

struct TrainConfig {
  double lambda = 0.05;
  // Step size. Unset selects 1/L for the objective's smoothness bound L
  // (see suggest_learning_rate).
  std::optional<double> lr;
  int max_epochs = 20000;
  double grad_tol = 1e-8;
  std::uint64_t seed = 0;
};

struct TrainResult {
  ModelParams params;
  bool converged = false;
  int epochs = 0;
  double grad_norm = 0.0;
  double objective = 0.0;
  double lr = 0.0;
  std::vector<double> objective_trace;  // J before each step, then final J
};

struct Prediction {
  Vector logits;
  Vector probs;
  int predicted = 0;
};

// f with the constant feature 1 appended.
Vector augment(const Vector& features);

Prediction predict(const ModelParams& params, const Vector& features);

// Cross-entropy -log p_label. The L2 term is not part of per-instance losses.
double loss(const ModelParams& params, const Instance& inst);
double loss_for_label(const ModelParams& params, const Vector& features, int label);

// Gradient of loss() with respect to the flattened weights:
// (probs - onehot(y)) outer f~, row-major over (class, augmented feature).
Vector grad(const ModelParams& params, const Instance& inst, LabelPolicy policy);
Vector grad_for_label(const ModelParams& params, const Vector& features, int label);

// J = (1/n) sum_i L_i + lambda * ||W||_F^2, and its gradient.
double objective(const ModelParams& params, const Dataset& data, double lambda);
ParamMatrix objective_gradient(const ModelParams& params, const Dataset& data,
                               double lambda);

// 1/L with L = 0.5 * lambda_max((1/n) sum f~ f~^T) + 2 lambda, an upper bound
// on the largest Hessian eigenvalue of J at any parameter value.
double suggest_learning_rate(const Dataset& data, double lambda);

// Full-batch gradient descent on J. Single-threaded; bit-identical for fixed
// (data, cfg, init). Without `init` the start point is
// ModelParams::random_init(C, d, cfg.seed).
TrainResult train(const Dataset& data, const TrainConfig& cfg,
                  const std::optional<ModelParams>& init = std::nullopt);

double accuracy(const ModelParams& params, const Dataset& data);

}  // namespace tda
