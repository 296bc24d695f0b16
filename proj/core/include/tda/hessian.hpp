#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string_view>

#include "tda/model.hpp"

namespace tda {

inline constexpr std::size_t kDefaultHessianCap = 4096;

enum class HessianMode { kMaterialized, kImplicit };

// Hessian of J plus damping for the softmax linear layer:
//
//   H = (1/n) sum_i (diag(p_i) - p_i p_i^T) kron (f~_i f~_i^T) + (2 lambda + delta) I
//
// over the row-major flattened weights. The operator snapshots the design
// matrix and the per-instance probabilities at construction and is read-only
// afterwards.
class HessianOperator {
 public:
  HessianOperator(const ModelParams& params, const Dataset& data, double lambda,
                  double damping, HessianMode mode = HessianMode::kMaterialized,
                  std::size_t cap = kDefaultHessianCap);

  // H = value * I with no data term.
  static HessianOperator isotropic(std::size_t params, double value);

  std::size_t size() const { return size_; }
  std::size_t sample_count() const { return static_cast<std::size_t>(design_.rows()); }
  bool materialized() const { return dense_ != nullptr; }
  // 2 lambda + delta, the diagonal shift shared by every sampled estimate.
  double shift() const { return shift_; }

  // Throws ConfigError in implicit mode.
  const Matrix& matrix() const;

  // Exact H v. Uses the dense matrix when present, the O(n p) implicit
  // product otherwise.
  Vector apply(const Vector& v) const;
  Vector apply_implicit(const Vector& v) const;
  // Data term averaged over `batch` (instance indices) plus the shift.
  Vector apply_sampled(const Vector& v, std::span<const std::size_t> batch) const;

 private:
  HessianOperator() = default;

  std::size_t size_ = 0;
  int classes_ = 0;
  double shift_ = 0.0;
  Matrix design_;  // n x (d+1)
  Matrix probs_;   // n x C
  std::shared_ptr<const Matrix> dense_;
};

// Dense H. Throws ConfigError when C*(d+1) exceeds `cap`.
Matrix exact_hessian(const ModelParams& params, const Dataset& data, double lambda,
                     double damping, std::size_t cap = kDefaultHessianCap);

// H v without materializing H; O(n p).
Vector hvp(const ModelParams& params, const Dataset& data, double lambda,
           double damping, const Vector& v);

// Largest eigenvalue estimate from `steps` power iterations (H is PSD).
double spectral_norm_estimate(const HessianOperator& op, int steps = 20);

enum class IhvpMethod { kDirect, kLissa, kCg };

std::string_view to_string(IhvpMethod method);
IhvpMethod parse_ihvp_method(std::string_view name);

struct IhvpConfig {
  IhvpMethod method = IhvpMethod::kDirect;
  // LiSSA scale sigma; unset selects 10 * spectral_norm_estimate(op).
  std::optional<double> scale;
  int iterations = 1000;
  int repeats = 4;
  // LiSSA batch size; unset selects min(32, n).
  std::optional<std::size_t> batch_size;
  std::uint64_t seed = 0;
  double tol = 1e-8;  // cg relative residual
  int max_cg_iterations = 10000;
  unsigned threads = 1;
};

struct IhvpResult {
  Vector x;
  int iterations = 0;
  double residual = 0.0;  // cg: ||H x - v|| / ||v||
};

// H^{-1} v.
//   direct: Cholesky solve of the materialized matrix.
//   lissa:  per repeat r (seed + r), r_0 = v,
//           r_{j+1} = v + (I - H_B / sigma) r_j with a fresh batch B each step;
//           result = mean_r r_J / sigma.
//   cg:     conjugate gradients on apply() to relative residual tol.
Vector ihvp(const HessianOperator& op, const Vector& v, const IhvpConfig& cfg);
IhvpResult ihvp_detailed(const HessianOperator& op, const Vector& v, const IhvpConfig& cfg);

Vector lissa(const HessianOperator& op, const Vector& v, const IhvpConfig& cfg);
IhvpResult conjugate_gradient(const HessianOperator& op, const Vector& v, double tol,
                              int max_iterations);

// Cholesky factor of a materialized operator, reusable across right-hand
// sides. Each solve is independent of how many others were performed.
class DirectSolver {
 public:
  explicit DirectSolver(const HessianOperator& op);
  Vector solve(const Vector& v) const;
  // Dense H^{-1}.
  Matrix inverse() const;

 private:
  Eigen::LLT<Matrix> llt_;
};

// H^{-1/2} from the symmetric eigendecomposition, eigenvalues clamped below
// at eig_floor.
class InvSqrtHessian {
 public:
  explicit InvSqrtHessian(const HessianOperator& op, double eig_floor = 1e-8);
  Vector apply(const Vector& v) const;
  const Vector& eigenvalues() const { return eigenvalues_; }

 private:
  Matrix eigenvectors_;
  Vector eigenvalues_;
  Vector inv_sqrt_;
};

Vector inv_sqrt_apply(const HessianOperator& op, const Vector& v, double eig_floor = 1e-8);

}  // namespace tda
