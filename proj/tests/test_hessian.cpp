#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "support.hpp"
#include "tda/error.hpp"
#include "tda/hessian.hpp"

using namespace tda;

namespace {

// Finite differences of the objective gradient, plus the damping diagonal.
Matrix fd_hessian(const ModelParams& m, const Dataset& data, double lambda, double damping,
                  double h = 1e-5) {
  const auto p = static_cast<Eigen::Index>(m.param_count());
  Matrix out(p, p);
  for (Eigen::Index k = 0; k < p; ++k) {
    ModelParams plus = m, minus = m;
    plus.weights.data()[k] += h;
    minus.weights.data()[k] -= h;
    const ParamMatrix gp = objective_gradient(plus, data, lambda);
    const ParamMatrix gm = objective_gradient(minus, data, lambda);
    for (Eigen::Index j = 0; j < p; ++j) out(j, k) = (gp.data()[j] - gm.data()[j]) / (2 * h);
  }
  out.diagonal().array() += damping;
  return out;
}

// Cyclic Jacobi eigenvalue sweep; independent of Eigen's solvers.
void jacobi_eigen(Matrix a, Vector& values, Matrix& vectors) {
  const Eigen::Index n = a.rows();
  vectors = Matrix::Identity(n, n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (off < 1e-30) break;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = vectors(k, p), vkq = vectors(k, q);
          vectors(k, p) = c * vkp - s * vkq;
          vectors(k, q) = s * vkp + c * vkq;
        }
      }
  }
  values = a.diagonal();
}

struct Problem {
  Dataset data;
  ModelParams model;
};

Problem small_problem(std::size_t n = 20, std::size_t d = 4, int classes = 2, std::uint64_t seed = 1) {
  return {tda::testing::random_dataset(n, d, classes, seed),
          tda::testing::random_params(classes, d, seed + 100, 0.5)};
}

}  // namespace

TEST(ExactHessian, PureRegularizationWhenSaturated) {
  Dataset data(1, 2);
  data.add(tda::testing::make_instance(0, {1.0}, 0));
  ModelParams m = ModelParams::zeros(2, 1);
  m.weights(0, 1) = 60.0;  // p = one-hot, data term vanishes
  const Matrix h = exact_hessian(m, data, 0.5, 0.0);
  EXPECT_LE((h - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ExactHessian, UniformTwoClassSingleInstance) {
  Dataset data(2, 2);
  data.add(tda::testing::make_instance(0, {1.0, 2.0}, 1));
  const Matrix h = exact_hessian(ModelParams::zeros(2, 2), data, 0.0, 0.0);
  Vector f(3);
  f << 1.0, 2.0, 1.0;
  const Matrix ff = f * f.transpose();
  EXPECT_LE((h.block(0, 0, 3, 3) - 0.25 * ff).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE((h.block(0, 3, 3, 3) + 0.25 * ff).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE((h.block(3, 3, 3, 3) - 0.25 * ff).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ExactHessian, MatchesFiniteDifferenceOfGradient) {
  for (int classes : {2, 3}) {
    const auto pr = small_problem(20, 4, classes, 7);
    const Matrix h = exact_hessian(pr.model, pr.data, 0.05, 0.01);
    const Matrix fd = fd_hessian(pr.model, pr.data, 0.05, 0.01);
    EXPECT_LE((h - fd).cwiseAbs().maxCoeff(), 1e-5);
  }
}

TEST(ExactHessian, SymmetricAndPdFloor) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto pr = small_problem(30, 5, 3, seed);
    const double lambda = 0.05, damping = 0.01;
    const Matrix h = exact_hessian(pr.model, pr.data, lambda, damping);
    EXPECT_LE((h - h.transpose()).cwiseAbs().maxCoeff(), 1e-10);
    Eigen::SelfAdjointEigenSolver<Matrix> es(h);
    EXPECT_GE(es.eigenvalues().minCoeff(), 2 * lambda + damping - 1e-10);
  }
}

TEST(ExactHessian, CapExceededAdvisesImplicitMode) {
  const auto data = tda::testing::random_dataset(5, 40, 3, 1);
  try {
    exact_hessian(ModelParams::zeros(3, 40), data, 0.05, 0.01, 100);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("implicit"), std::string::npos);
  }
}

TEST(Hvp, Examples) {
  const auto pr = small_problem(25, 4, 3, 3);
  const auto p = pr.model.param_count();
  EXPECT_EQ(hvp(pr.model, pr.data, 0.05, 0.01, Vector::Zero(static_cast<Eigen::Index>(p))).norm(), 0.0);
  const Matrix h = exact_hessian(pr.model, pr.data, 0.05, 0.01);
  Rng rng(4);
  for (int t = 0; t < 10; ++t) {
    const Vector v = tda::testing::random_vector(p, rng);
    EXPECT_LE((hvp(pr.model, pr.data, 0.05, 0.01, v) - h * v).cwiseAbs().maxCoeff(), 1e-10);
  }
  const auto iso = HessianOperator::isotropic(p, 3.5);
  const Vector v = tda::testing::random_vector(p, rng);
  EXPECT_LE((iso.apply(v) - 3.5 * v).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_THROW(hvp(pr.model, pr.data, 0.05, 0.01, Vector::Zero(3)), ConfigError);
}

TEST(Hvp, ImplicitOperator) {
  const auto pr = small_problem(25, 4, 2, 9);
  HessianOperator dense(pr.model, pr.data, 0.05, 0.01);
  HessianOperator implicit(pr.model, pr.data, 0.05, 0.01, HessianMode::kImplicit);
  EXPECT_FALSE(implicit.materialized());
  EXPECT_THROW(implicit.matrix(), ConfigError);
  Rng rng(2);
  const Vector v = tda::testing::random_vector(dense.size(), rng);
  EXPECT_LE((dense.apply(v) - implicit.apply(v)).cwiseAbs().maxCoeff(), 1e-10);
  std::vector<std::size_t> all(pr.data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  EXPECT_LE((implicit.apply_sampled(v, all) - dense.apply(v)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Ihvp, PureRegularizationHalves) {
  Dataset data(2, 2);
  data.add(tda::testing::make_instance(0, {1.0, 1.0}, 0));
  ModelParams m = ModelParams::zeros(2, 2);
  m.weights(0, 2) = 60.0;
  HessianOperator op(m, data, 1.0, 0.0);
  Vector v(6);
  v << 1, -2, 3, 0.5, 4, -1;
  IhvpConfig cfg;
  EXPECT_LE((ihvp(op, v, cfg) - v / 2).cwiseAbs().maxCoeff(), 1e-12);
  cfg.method = IhvpMethod::kCg;
  EXPECT_LE((ihvp(op, v, cfg) - v / 2).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Ihvp, DirectRoundTrip) {
  const auto pr = small_problem(40, 5, 3, 5);
  HessianOperator op(pr.model, pr.data, 0.05, 0.01);
  Rng rng(8);
  for (int t = 0; t < 5; ++t) {
    const Vector v = tda::testing::random_vector(op.size(), rng);
    const Vector x = ihvp(op, v, IhvpConfig{});
    EXPECT_LE((op.matrix() * x - v).norm() / v.norm(), 1e-8);
  }
}

TEST(Ihvp, CgRoundTrip) {
  const auto pr = small_problem(40, 5, 3, 6);
  HessianOperator op(pr.model, pr.data, 0.05, 0.01, HessianMode::kImplicit);
  Rng rng(9);
  IhvpConfig cfg;
  cfg.method = IhvpMethod::kCg;
  cfg.tol = 1e-8;
  for (int t = 0; t < 5; ++t) {
    const Vector v = tda::testing::random_vector(op.size(), rng);
    const auto r = ihvp_detailed(op, v, cfg);
    EXPECT_LE((op.apply(r.x) - v).norm() / v.norm(), 1e-8);
    EXPECT_LE(r.residual, 1e-8);
  }
}

TEST(Ihvp, LissaMatchesDirect) {
  const auto data = tda::testing::gaussian_train(200, 16, 2, 2.0, 3);
  const auto model = train(data, TrainConfig{}).params;
  HessianOperator op(model, data, 0.05, 0.01);
  IhvpConfig cfg;
  cfg.method = IhvpMethod::kLissa;
  cfg.iterations = 2000;
  cfg.repeats = 4;
  cfg.batch_size = 16;
  cfg.scale = 10 * spectral_norm_estimate(op);
  Rng rng(12);
  for (int t = 0; t < 5; ++t) {
    const Vector v = tda::testing::random_vector(op.size(), rng);
    const Vector exact = DirectSolver(op).solve(v);
    cfg.seed = 100 * t;
    EXPECT_LE((lissa(op, v, cfg) - exact).norm() / exact.norm(), 1e-2);
  }
}

TEST(Ihvp, LissaErrorNonIncreasingInDepth) {
  const auto data = tda::testing::gaussian_train(200, 8, 2, 2.0, 4);
  const auto model = train(data, TrainConfig{}).params;
  HessianOperator op(model, data, 0.05, 0.01);
  Rng rng(3);
  const Vector v = tda::testing::random_vector(op.size(), rng);
  const Vector exact = DirectSolver(op).solve(v);
  std::vector<double> medians;
  for (int depth : {50, 200, 800, 2000}) {
    std::vector<double> errs;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      IhvpConfig cfg;
      cfg.method = IhvpMethod::kLissa;
      cfg.iterations = depth;
      cfg.seed = seed * 17;
      errs.push_back((lissa(op, v, cfg) - exact).norm() / exact.norm());
    }
    std::nth_element(errs.begin(), errs.begin() + 5, errs.end());
    medians.push_back(errs[5]);
  }
  for (std::size_t i = 1; i < medians.size(); ++i) EXPECT_LE(medians[i], medians[i - 1]) << i;
}

TEST(Ihvp, LissaRejectsSmallScale) {
  const auto pr = small_problem(30, 4, 2, 2);
  HessianOperator op(pr.model, pr.data, 0.05, 0.01);
  IhvpConfig cfg;
  cfg.method = IhvpMethod::kLissa;
  cfg.scale = 0.5 * spectral_norm_estimate(op);
  EXPECT_THROW(lissa(op, Vector::Ones(static_cast<Eigen::Index>(op.size())), cfg), ConfigError);
}

TEST(Ihvp, LissaDivergenceSuggestsLargerScale) {
  // One instance with a huge norm: batches containing it overshoot badly.
  Dataset data(2, 2);
  Rng rng(1);
  for (int i = 0; i < 100; ++i)
    data.add(tda::testing::make_instance(i, {0.1 * rng.normal(), 0.1 * rng.normal()}, i % 2));
  data.add(tda::testing::make_instance(100, {300.0, 300.0}, 0));
  HessianOperator op(ModelParams::zeros(2, 2), data, 0.001, 0.0);
  IhvpConfig cfg;
  cfg.method = IhvpMethod::kLissa;
  cfg.batch_size = 1;
  cfg.iterations = 5000;
  cfg.scale = 1.5 * spectral_norm_estimate(op);
  Vector v(6);
  v << 1, -1, 0.5, -0.5, 2, 1;
  try {
    lissa(op, v, cfg);
    FAIL() << "expected divergence";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("ihvp_scale"), std::string::npos);
  }
}

TEST(Ihvp, LissaIndependentOfThreads) {
  const auto pr = small_problem(60, 4, 3, 4);
  HessianOperator op(pr.model, pr.data, 0.05, 0.01);
  IhvpConfig cfg;
  cfg.method = IhvpMethod::kLissa;
  cfg.iterations = 200;
  const Vector v = Vector::LinSpaced(static_cast<Eigen::Index>(op.size()), -1, 1);
  const Vector one = lissa(op, v, cfg);
  cfg.threads = 4;
  EXPECT_EQ(lissa(op, v, cfg), one);
}

TEST(InvSqrt, IsotropicHalves) {
  const auto op = HessianOperator::isotropic(6, 4.0);
  const Vector v = Vector::LinSpaced(6, -3, 2);
  EXPECT_LE((inv_sqrt_apply(op, v) - v / 2).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(InvSqrt, TwiceEqualsDirectIhvp) {
  const auto pr = small_problem(40, 4, 3, 10);
  HessianOperator op(pr.model, pr.data, 0.05, 0.01);
  const InvSqrtHessian s(op);
  Rng rng(1);
  const Vector v = tda::testing::random_vector(op.size(), rng);
  const Vector direct = DirectSolver(op).solve(v);
  EXPECT_LE((s.apply(s.apply(v)) - direct).norm() / direct.norm(), 1e-6);
}

TEST(InvSqrt, MatchesJacobiOracle) {
  const auto pr = small_problem(30, 3, 2, 11);
  HessianOperator op(pr.model, pr.data, 0.05, 0.01);
  Vector values;
  Matrix vectors;
  jacobi_eigen(op.matrix(), values, vectors);
  const Matrix oracle = vectors * values.cwiseMax(1e-8).cwiseSqrt().cwiseInverse().asDiagonal() *
                        vectors.transpose();
  Rng rng(5);
  const Vector v = tda::testing::random_vector(op.size(), rng);
  EXPECT_LE((inv_sqrt_apply(op, v) - oracle * v).norm() / (oracle * v).norm(), 1e-9);
}

TEST(InvSqrt, ImplicitModeRejected) {
  const auto pr = small_problem(10, 2, 2, 1);
  HessianOperator op(pr.model, pr.data, 0.05, 0.01, HessianMode::kImplicit);
  EXPECT_THROW(InvSqrtHessian{op}, ConfigError);
}

TEST(SpectralNorm, CloseToLargestEigenvalue) {
  const auto pr = small_problem(50, 4, 2, 13);
  HessianOperator op(pr.model, pr.data, 0.05, 0.01);
  Eigen::SelfAdjointEigenSolver<Matrix> es(op.matrix());
  const double top = es.eigenvalues().maxCoeff();
  const double est = spectral_norm_estimate(op);
  EXPECT_LE(est, top * (1 + 1e-12));
  EXPECT_GE(est, 0.5 * top);
}
