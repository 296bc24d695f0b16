#include "tda/hessian.hpp"

#include <cmath>
#include <sstream>
#include <vector>

#include "tda/error.hpp"
#include "tda/parallel.hpp"
#include "tda/rng.hpp"

namespace tda {

namespace {

Matrix softmax_rows(const Matrix& logits) {
  Matrix probs = logits;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    auto row = probs.row(i);
    row.array() = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
  return probs;
}

void check_length(const char* what, Eigen::Index got, std::size_t want) {
  if (static_cast<std::size_t>(got) != want) {
    std::ostringstream msg;
    msg << what << ": vector length " << got << " != parameter count " << want;
    throw ConfigError(msg.str());
  }
}

// (1/m) sum_k (diag(p) - p p^T) kron (f~ f~^T) v over m = count rows; a null
// `rows` means rows 0..count-1.
Vector data_term(const Matrix& design, const Matrix& probs, const Vector& v,
                 const std::size_t* rows, std::size_t count) {
  const auto classes = probs.cols();
  const auto width = design.cols();
  Eigen::Map<const ParamMatrix> vm(v.data(), classes, width);
  ParamMatrix out = ParamMatrix::Zero(classes, width);
  if (count == 0) return Eigen::Map<const Vector>(out.data(), out.size());
  Vector u(classes);
  Vector a(classes);
  for (std::size_t k = 0; k < count; ++k) {
    const auto i = static_cast<Eigen::Index>(rows ? rows[k] : k);
    const auto f = design.row(i);
    const auto p = probs.row(i).transpose();
    u.noalias() = vm * f.transpose();
    a = p.cwiseProduct(u) - p * p.dot(u);
    out.noalias() += a * f;
  }
  out /= static_cast<double>(count);
  return Eigen::Map<const Vector>(out.data(), out.size());
}

}  // namespace

HessianOperator::HessianOperator(const ModelParams& params, const Dataset& data,
                                 double lambda, double damping, HessianMode mode,
                                 std::size_t cap) {
  if (params.dim() != data.dim() || params.classes() != data.classes())
    throw ConfigError("hessian: model shape does not match dataset");
  if (!(lambda >= 0.0)) throw ConfigError("lambda: must be >= 0");
  if (!(damping >= 0.0)) throw ConfigError("damping: must be >= 0");
  size_ = params.param_count();
  classes_ = params.classes();
  shift_ = 2.0 * lambda + damping;
  design_ = data.augmented_design();
  probs_ = softmax_rows(design_ * params.weights.transpose());

  if (mode == HessianMode::kImplicit) return;
  if (size_ > cap) {
    std::ostringstream msg;
    msg << "hessian_cap: parameter count " << size_ << " exceeds materialization cap "
        << cap << "; use implicit mode (ihvp_method=cg or lissa)";
    throw ConfigError(msg.str());
  }

  const auto width = design_.cols();
  const auto n = design_.rows();
  auto dense = std::make_shared<Matrix>(Matrix::Zero(static_cast<Eigen::Index>(size_),
                                                     static_cast<Eigen::Index>(size_)));
  const double inv_n = n > 0 ? 1.0 / static_cast<double>(n) : 0.0;
  Vector weight(n);
  for (int c = 0; c < classes_; ++c) {
    for (int c2 = c; c2 < classes_; ++c2) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double pc = probs_(i, c);
        weight(i) = (c == c2 ? pc : 0.0) - pc * probs_(i, c2);
      }
      const Matrix block =
          (design_.transpose() * weight.asDiagonal() * design_) * inv_n;
      dense->block(c * width, c2 * width, width, width) = block;
      if (c2 != c) dense->block(c2 * width, c * width, width, width) = block.transpose();
    }
  }
  // Diagonal blocks are only symmetric up to rounding.
  *dense = (0.5 * (*dense + dense->transpose())).eval();
  dense->diagonal().array() += shift_;
  dense_ = std::move(dense);
}

HessianOperator HessianOperator::isotropic(std::size_t params, double value) {
  HessianOperator op;
  op.size_ = params;
  op.classes_ = 1;
  op.shift_ = value;
  op.design_ = Matrix(0, static_cast<Eigen::Index>(params));
  op.probs_ = Matrix(0, 1);
  const auto p = static_cast<Eigen::Index>(params);
  op.dense_ = std::make_shared<Matrix>(value * Matrix::Identity(p, p));
  return op;
}

const Matrix& HessianOperator::matrix() const {
  if (!dense_)
    throw ConfigError("hessian: operator is implicit; materialized mode required");
  return *dense_;
}

Vector HessianOperator::apply(const Vector& v) const {
  check_length("hvp", v.size(), size_);
  if (dense_) return *dense_ * v;
  return apply_implicit(v);
}

Vector HessianOperator::apply_implicit(const Vector& v) const {
  check_length("hvp", v.size(), size_);
  const auto n = static_cast<std::size_t>(design_.rows());
  return data_term(design_, probs_, v, nullptr, n) + shift_ * v;
}

Vector HessianOperator::apply_sampled(const Vector& v,
                                      std::span<const std::size_t> batch) const {
  check_length("hvp", v.size(), size_);
  return data_term(design_, probs_, v, batch.data(), batch.size()) + shift_ * v;
}

Matrix exact_hessian(const ModelParams& params, const Dataset& data, double lambda,
                     double damping, std::size_t cap) {
  return HessianOperator(params, data, lambda, damping, HessianMode::kMaterialized, cap)
      .matrix();
}

Vector hvp(const ModelParams& params, const Dataset& data, double lambda, double damping,
           const Vector& v) {
  return HessianOperator(params, data, lambda, damping, HessianMode::kImplicit)
      .apply_implicit(v);
}

double spectral_norm_estimate(const HessianOperator& op, int steps) {
  const auto p = static_cast<Eigen::Index>(op.size());
  if (p == 0) return 0.0;
  Rng rng(0x9e3779b97f4a7c15ULL);
  Vector v(p);
  for (Eigen::Index i = 0; i < p; ++i) v(i) = rng.normal();
  v.normalize();
  double estimate = 0.0;
  for (int s = 0; s < steps; ++s) {
    Vector hv = op.apply(v);
    estimate = hv.norm();
    if (estimate == 0.0) return 0.0;
    v = hv / estimate;
  }
  return estimate;
}

std::string_view to_string(IhvpMethod method) {
  switch (method) {
    case IhvpMethod::kDirect: return "direct";
    case IhvpMethod::kLissa: return "lissa";
    case IhvpMethod::kCg: return "cg";
  }
  return "direct";
}

IhvpMethod parse_ihvp_method(std::string_view name) {
  if (name == "direct") return IhvpMethod::kDirect;
  if (name == "lissa") return IhvpMethod::kLissa;
  if (name == "cg") return IhvpMethod::kCg;
  throw ConfigError("ihvp_method: expected direct|lissa|cg, got '" + std::string(name) + "'");
}

DirectSolver::DirectSolver(const HessianOperator& op) : llt_(op.matrix()) {
  if (llt_.info() != Eigen::Success)
    throw NumericalError("direct ihvp: Hessian is not positive definite; increase damping");
}

Vector DirectSolver::solve(const Vector& v) const {
  check_length("ihvp", v.size(), static_cast<std::size_t>(llt_.rows()));
  return llt_.solve(v);
}

Matrix DirectSolver::inverse() const {
  return llt_.solve(Matrix::Identity(llt_.rows(), llt_.cols()));
}

Vector lissa(const HessianOperator& op, const Vector& v, const IhvpConfig& cfg) {
  check_length("lissa", v.size(), op.size());
  if (cfg.iterations < 0) throw ConfigError("ihvp_iterations: must be >= 0");
  if (cfg.repeats < 1) throw ConfigError("ihvp_repeats: must be >= 1");
  const std::size_t n = op.sample_count();
  const std::size_t batch =
      std::min(n, cfg.batch_size ? *cfg.batch_size : std::size_t{32});
  if (cfg.batch_size && *cfg.batch_size == 0) throw ConfigError("ihvp_batch: must be >= 1");

  const double norm_estimate = spectral_norm_estimate(op, 20);
  const double scale = cfg.scale ? *cfg.scale : 10.0 * norm_estimate;
  if (!(scale > 0.0)) throw ConfigError("ihvp_scale: must be > 0");
  if (norm_estimate / scale >= 1.0) {
    std::ostringstream msg;
    msg << "ihvp_scale: sigma=" << scale << " does not exceed the Hessian norm estimate "
        << norm_estimate << "; LiSSA requires ||H||/sigma < 1";
    throw ConfigError(msg.str());
  }

  std::vector<Vector> results(static_cast<std::size_t>(cfg.repeats));
  parallel_for(results.size(), cfg.threads, [&](std::size_t r) {
    Rng rng(cfg.seed + r);
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<double> norms;
    norms.reserve(static_cast<std::size_t>(cfg.iterations) + 1);
    Vector cur = v;
    norms.push_back(cur.norm());
    for (int j = 0; j < cfg.iterations; ++j) {
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t pick = b + static_cast<std::size_t>(rng.below(n - b));
        std::swap(pool[b], pool[pick]);
      }
      const Vector hv = op.apply_sampled(cur, std::span(pool.data(), batch));
      cur = v + cur - hv / scale;
      const double norm = cur.norm();
      norms.push_back(norm);
      const std::size_t step = norms.size() - 1;
      if (!std::isfinite(norm) || (step >= 20 && norm > 10.0 * norms[step - 10])) {
        std::ostringstream msg;
        msg << "LiSSA diverged at step " << step << " (repeat " << r
            << "); increase ihvp_scale (sigma=" << scale << ")";
        throw NumericalError(msg.str());
      }
    }
    results[r] = cur / scale;
  });
  Vector out = Vector::Zero(v.size());
  for (const auto& x : results) out += x;
  return out / static_cast<double>(results.size());
}

IhvpResult conjugate_gradient(const HessianOperator& op, const Vector& v, double tol,
                              int max_iterations) {
  check_length("cg", v.size(), op.size());
  if (!(tol > 0.0)) throw ConfigError("ihvp_tol: must be > 0");
  IhvpResult out;
  out.x = Vector::Zero(v.size());
  const double v_norm = v.norm();
  if (v_norm == 0.0) return out;
  Vector r = v;
  Vector p = r;
  double rr = r.squaredNorm();
  while (std::sqrt(rr) > tol * v_norm) {
    if (out.iterations >= max_iterations) {
      std::ostringstream msg;
      msg << "cg did not reach ihvp_tol=" << tol << " within " << max_iterations
          << " iterations (relative residual " << std::sqrt(rr) / v_norm << ")";
      throw NumericalError(msg.str());
    }
    const Vector hp = op.apply(p);
    const double curvature = p.dot(hp);
    if (!(curvature > 0.0)) throw NumericalError("cg: Hessian is not positive definite");
    const double alpha = rr / curvature;
    out.x += alpha * p;
    r -= alpha * hp;
    const double rr_next = r.squaredNorm();
    p = r + (rr_next / rr) * p;
    rr = rr_next;
    ++out.iterations;
  }
  // Recurrence residual drifts from the true one; report the true one.
  out.residual = (op.apply(out.x) - v).norm() / v_norm;
  return out;
}

IhvpResult ihvp_detailed(const HessianOperator& op, const Vector& v, const IhvpConfig& cfg) {
  switch (cfg.method) {
    case IhvpMethod::kDirect: {
      IhvpResult out;
      out.x = DirectSolver(op).solve(v);
      return out;
    }
    case IhvpMethod::kLissa: {
      IhvpResult out;
      out.x = lissa(op, v, cfg);
      out.iterations = cfg.iterations;
      return out;
    }
    case IhvpMethod::kCg:
      return conjugate_gradient(op, v, cfg.tol, cfg.max_cg_iterations);
  }
  throw ConfigError("ihvp_method: unknown");
}

Vector ihvp(const HessianOperator& op, const Vector& v, const IhvpConfig& cfg) {
  return ihvp_detailed(op, v, cfg).x;
}

InvSqrtHessian::InvSqrtHessian(const HessianOperator& op, double eig_floor) {
  if (!(eig_floor > 0.0)) throw ConfigError("eig_floor: must be > 0");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(op.matrix());
  if (eig.info() != Eigen::Success || !eig.eigenvalues().allFinite())
    throw NumericalError("inv_sqrt: eigendecomposition produced non-finite eigenvalues");
  eigenvectors_ = eig.eigenvectors();
  eigenvalues_ = eig.eigenvalues();
  inv_sqrt_ = eigenvalues_.cwiseMax(eig_floor).cwiseSqrt().cwiseInverse();
}

Vector InvSqrtHessian::apply(const Vector& v) const {
  check_length("inv_sqrt", v.size(), static_cast<std::size_t>(eigenvectors_.rows()));
  return eigenvectors_ * inv_sqrt_.cwiseProduct(eigenvectors_.transpose() * v);
}

Vector inv_sqrt_apply(const HessianOperator& op, const Vector& v, double eig_floor) {
  return InvSqrtHessian(op, eig_floor).apply(v);
}

}  // namespace tda
