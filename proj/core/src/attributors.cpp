#include "tda/attributors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "tda/error.hpp"
#include "tda/parallel.hpp"

namespace tda {

namespace {

struct MethodName {
  Method method;
  std::string_view name;
};

constexpr std::array<MethodName, 11> kMethodNames = {{
    {Method::kNnEuc, "NN_EUC"},
    {Method::kNnCos, "NN_COS"},
    {Method::kNnDot, "NN_DOT"},
    {Method::kNnEucUntuned, "NN_EUC_UNTUNED"},
    {Method::kNnCosUntuned, "NN_COS_UNTUNED"},
    {Method::kNnDotUntuned, "NN_DOT_UNTUNED"},
    {Method::kIf, "IF"},
    {Method::kRif, "RIF"},
    {Method::kGd, "GD"},
    {Method::kGc, "GC"},
    {Method::kRep, "REP"},
}};

void check_same_length(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) {
    std::ostringstream msg;
    msg << "dimension mismatch: " << a.size() << " vs " << b.size();
    throw ConfigError(msg.str());
  }
}

double cosine_with_norms(const Vector& a, const Vector& b, double norm_a, double norm_b) {
  if (norm_a == 0.0 || norm_b == 0.0)
    throw NumericalError("cosine of a zero-norm vector is undefined");
  return std::clamp(a.dot(b) / (norm_a * norm_b), -1.0, 1.0);
}

double cosine(const Vector& a, const Vector& b) {
  check_same_length(a, b);
  return cosine_with_norms(a, b, a.norm(), b.norm());
}

bool is_untuned(Method m) {
  return m == Method::kNnEucUntuned || m == Method::kNnCosUntuned ||
         m == Method::kNnDotUntuned;
}

std::optional<NnKind> nn_kind(Method m) {
  switch (m) {
    case Method::kNnEuc:
    case Method::kNnEucUntuned: return NnKind::kEuclidean;
    case Method::kNnCos:
    case Method::kNnCosUntuned: return NnKind::kCosine;
    case Method::kNnDot:
    case Method::kNnDotUntuned: return NnKind::kDot;
    default: return std::nullopt;
  }
}

const Vector& similarity_view(const Instance& inst, bool untuned) {
  return untuned && inst.untuned ? *inst.untuned : inst.features;
}

}  // namespace

std::string_view to_string(Method method) {
  for (const auto& entry : kMethodNames)
    if (entry.method == method) return entry.name;
  return "UNKNOWN";
}

Method parse_method(std::string_view name) {
  for (const auto& entry : kMethodNames)
    if (entry.name == name) return entry.method;
  throw ConfigError("methods: unknown method '" + std::string(name) + "'");
}

std::vector<Method> parse_method_list(std::string_view csv) {
  std::vector<Method> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    std::size_t end = csv.find(',', start);
    if (end == std::string_view::npos) end = csv.size();
    std::string_view token = csv.substr(start, end - start);
    while (!token.empty() && token.front() == ' ') token.remove_prefix(1);
    while (!token.empty() && token.back() == ' ') token.remove_suffix(1);
    if (token == "ALL") {
      out.insert(out.end(), kAllMethods.begin(), kAllMethods.end());
    } else if (!token.empty()) {
      out.push_back(parse_method(token));
    }
    start = end + 1;
  }
  return out;
}

bool depends_on_model(Method method) { return !nn_kind(method).has_value(); }

double score_nn(NnKind kind, const Vector& test, const Vector& train) {
  check_same_length(test, train);
  switch (kind) {
    case NnKind::kEuclidean: return -(test - train).squaredNorm();
    case NnKind::kCosine: return cosine(test, train);
    case NnKind::kDot: return test.dot(train);
  }
  return 0.0;
}

double score_if(const Vector& test_grad, const Vector& train_grad, const HessianOperator& op,
                const IhvpConfig& cfg) {
  check_same_length(test_grad, train_grad);
  return test_grad.dot(ihvp(op, train_grad, cfg));
}

double score_rif(const Vector& test_grad, const Vector& train_grad,
                 const InvSqrtHessian& inv_sqrt) {
  check_same_length(test_grad, train_grad);
  const Vector a = inv_sqrt.apply(test_grad);
  const Vector b = inv_sqrt.apply(train_grad);
  return cosine_with_norms(a, b, a.norm(), b.norm());
}

double score_rif(const Vector& test_grad, const Vector& train_grad, const HessianOperator& op,
                 double eig_floor) {
  return score_rif(test_grad, train_grad, InvSqrtHessian(op, eig_floor));
}

double score_gd(const Vector& test_grad, const Vector& train_grad) {
  check_same_length(test_grad, train_grad);
  return test_grad.dot(train_grad);
}

double score_gc(const Vector& test_grad, const Vector& train_grad) {
  return cosine(test_grad, train_grad);
}

RepresenterWeights representer_alphas(const ModelParams& params, const Dataset& data,
                                      double lambda, double stationarity_tol) {
  if (!(lambda > 0.0)) throw ConfigError("lambda: representer weights require lambda > 0");
  if (data.empty()) throw ConfigError("representer: empty train set");
  RepresenterWeights out;
  const auto n = static_cast<Eigen::Index>(data.size());
  out.alpha.resize(n, params.classes());
  const double scale = -1.0 / (2.0 * lambda * static_cast<double>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& inst = data[static_cast<std::size_t>(i)];
    Vector residual = predict(params, inst.features).probs;
    residual(inst.label) -= 1.0;
    out.alpha.row(i) = scale * residual.transpose();
  }
  out.grad_norm = objective_gradient(params, data, lambda).norm();
  out.stationary = out.grad_norm <= stationarity_tol;
  return out;
}

double score_rep(const Vector& alpha_row, const Vector& train_aug, const Vector& test_aug,
                 int target_class) {
  if (target_class < 0 || target_class >= alpha_row.size())
    throw ConfigError("representer: target class out of range");
  check_same_length(train_aug, test_aug);
  return alpha_row(target_class) * train_aug.dot(test_aug);
}

std::vector<std::size_t> rank_order(std::span<const std::uint64_t> ids,
                                    std::span<const double> scores) {
  if (ids.size() != scores.size()) throw ConfigError("rank: ids/scores length mismatch");
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  return order;
}

Ranking rank_scores(std::span<const std::uint64_t> ids, std::span<const double> scores) {
  Ranking out;
  out.ids.reserve(ids.size());
  for (std::size_t pos : rank_order(ids, scores)) out.ids.push_back(ids[pos]);
  return out;
}

Ranking rank(const AttributionMatrix& matrix, std::uint64_t test_id) {
  auto it = std::find(matrix.test_ids.begin(), matrix.test_ids.end(), test_id);
  if (it == matrix.test_ids.end()) {
    std::ostringstream msg;
    msg << "rank: test id " << test_id << " not in attribution matrix";
    throw ConfigError(msg.str());
  }
  const auto row = static_cast<Eigen::Index>(it - matrix.test_ids.begin());
  std::vector<double> scores(matrix.train_ids.size());
  for (std::size_t j = 0; j < scores.size(); ++j)
    scores[j] = matrix.scores(row, static_cast<Eigen::Index>(j));
  return rank_scores(matrix.train_ids, scores);
}

struct Attributor::Cache {
  bool gradients = false;
  std::vector<Vector> train_grads;
  std::vector<double> train_grad_norms;

  std::unique_ptr<HessianOperator> hessian;

  bool if_ready = false;
  std::unique_ptr<DirectSolver> solver;
  std::vector<Vector> train_ihvp;  // kCacheTrain
  Matrix inverse;                   // kPerTest with direct

  std::unique_ptr<InvSqrtHessian> inv_sqrt;
  std::vector<Vector> train_whitened;
  std::vector<double> train_whitened_norms;

  std::optional<RepresenterWeights> representer;
  std::vector<Vector> train_aug;

  bool similarity_norms = false;
  std::vector<double> feature_norms;
  std::vector<double> untuned_norms;
};

Attributor::Attributor(const ModelParams& model, const Dataset& train, AttributionConfig cfg)
    : model_(model), train_(train), cfg_(std::move(cfg)), cache_(std::make_unique<Cache>()) {
  if (model_.dim() != train_.dim() || model_.classes() != train_.classes())
    throw ConfigError("attribute: model shape does not match train set");
  if (cfg_.if_sign != 1.0 && cfg_.if_sign != -1.0)
    throw ConfigError("if_sign: must be +1 or -1");
}

Attributor::~Attributor() = default;

const HessianOperator& Attributor::hessian() const {
  std::lock_guard lock(mutex_);
  if (!cache_->hessian) {
    if (cfg_.isotropic_hessian) {
      cache_->hessian = std::make_unique<HessianOperator>(
          HessianOperator::isotropic(model_.param_count(), *cfg_.isotropic_hessian));
    } else {
      const bool materialize = cfg_.ihvp.method == IhvpMethod::kDirect ||
                               model_.param_count() <= cfg_.hessian_cap;
      cache_->hessian = std::make_unique<HessianOperator>(
          model_, train_, cfg_.lambda, cfg_.damping,
          materialize ? HessianMode::kMaterialized : HessianMode::kImplicit,
          cfg_.hessian_cap);
    }
  }
  return *cache_->hessian;
}

Vector Attributor::test_gradient(const Instance& inst) const {
  return grad(model_, inst, cfg_.test_label_policy);
}

void Attributor::prepare(Method method) const {
  const bool needs_grads = method == Method::kIf || method == Method::kRif ||
                           method == Method::kGd || method == Method::kGc;
  const bool needs_hessian = method == Method::kIf || method == Method::kRif;
  if (needs_hessian) hessian();

  std::lock_guard lock(mutex_);
  Cache& c = *cache_;
  const std::size_t n = train_.size();

  if (nn_kind(method) && !c.similarity_norms) {
    c.feature_norms.resize(n);
    c.untuned_norms.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      c.feature_norms[i] = train_[i].features.norm();
      c.untuned_norms[i] = similarity_view(train_[i], true).norm();
    }
    c.similarity_norms = true;
  }

  if (needs_grads && !c.gradients) {
    c.train_grads.resize(n);
    c.train_grad_norms.resize(n);
    parallel_for(n, cfg_.threads, [&](std::size_t i) {
      c.train_grads[i] = grad(model_, train_[i], LabelPolicy::kGold);
      c.train_grad_norms[i] = c.train_grads[i].norm();
    });
    c.gradients = true;
  }

  if (method == Method::kIf && !c.if_ready) {
    const HessianOperator& op = *c.hessian;
    if (cfg_.ihvp.method == IhvpMethod::kDirect) c.solver = std::make_unique<DirectSolver>(op);
    if (cfg_.if_strategy == IfStrategy::kCacheTrain) {
      c.train_ihvp.resize(n);
      // LiSSA repeats already fan out over threads; keep the outer loop serial
      // there so the two levels don't multiply.
      const unsigned outer = cfg_.ihvp.method == IhvpMethod::kLissa ? 1U : cfg_.threads;
      parallel_for(n, outer, [&](std::size_t i) {
        c.train_ihvp[i] = c.solver ? c.solver->solve(c.train_grads[i])
                                   : ihvp(op, c.train_grads[i], cfg_.ihvp);
      });
    } else if (c.solver) {
      c.inverse = c.solver->inverse();
    }
    c.if_ready = true;
  }

  if (method == Method::kRif && !c.inv_sqrt) {
    auto inv = std::make_unique<InvSqrtHessian>(*c.hessian, cfg_.eig_floor);
    c.train_whitened.resize(n);
    c.train_whitened_norms.resize(n);
    parallel_for(n, cfg_.threads, [&](std::size_t i) {
      c.train_whitened[i] = inv->apply(c.train_grads[i]);
      c.train_whitened_norms[i] = c.train_whitened[i].norm();
    });
    c.inv_sqrt = std::move(inv);
  }

  if (method == Method::kRep && !c.representer) {
    c.representer = representer_alphas(model_, train_, cfg_.lambda, cfg_.stationarity_tol);
    c.train_aug.resize(n);
    for (std::size_t i = 0; i < n; ++i) c.train_aug[i] = augment(train_[i].features);
  }
}

AttributionMatrix Attributor::score(Method method, const Dataset& tests) const {
  std::vector<std::size_t> all(train_.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return score(method, tests, all);
}

AttributionMatrix Attributor::score(Method method, const Dataset& tests,
                                    std::span<const std::size_t> candidates) const {
  if (tests.dim() != train_.dim()) throw ConfigError("attribute: test/train dim mismatch");
  for (std::size_t j : candidates)
    if (j >= train_.size()) throw ConfigError("attribute: candidate index out of range");
  prepare(method);
  const Cache& c = *cache_;

  AttributionMatrix out;
  out.method = method;
  out.test_ids = tests.ids();
  out.train_ids.reserve(candidates.size());
  for (std::size_t j : candidates) out.train_ids.push_back(train_[j].id);
  out.scores.resize(static_cast<Eigen::Index>(tests.size()),
                    static_cast<Eigen::Index>(candidates.size()));
  if (method == Method::kRep) out.representer_stationary = c.representer->stationary;

  const auto kind = nn_kind(method);
  const bool untuned = is_untuned(method);

  parallel_for(tests.size(), cfg_.threads, [&](std::size_t t) {
    const Instance& test = tests[t];
    auto row = out.scores.row(static_cast<Eigen::Index>(t));
    auto put = [&](std::size_t k, double value) { row(static_cast<Eigen::Index>(k)) = value; };

    if (kind) {
      const Vector& tv = similarity_view(test, untuned);
      const double tnorm = kind == NnKind::kCosine ? tv.norm() : 0.0;
      for (std::size_t k = 0; k < candidates.size(); ++k) {
        const std::size_t j = candidates[k];
        const Vector& iv = similarity_view(train_[j], untuned);
        if (kind == NnKind::kCosine) {
          check_same_length(tv, iv);
          put(k, cosine_with_norms(tv, iv, tnorm,
                                   untuned ? c.untuned_norms[j] : c.feature_norms[j]));
        } else {
          put(k, score_nn(*kind, tv, iv));
        }
      }
      return;
    }

    if (method == Method::kRep) {
      const Vector taug = augment(test.features);
      const int target = predict(model_, test.features).predicted;
      for (std::size_t k = 0; k < candidates.size(); ++k) {
        const std::size_t j = candidates[k];
        put(k, score_rep(c.representer->alpha.row(static_cast<Eigen::Index>(j)).transpose(),
                         c.train_aug[j], taug, target));
      }
      return;
    }

    const Vector gt = test_gradient(test);
    switch (method) {
      case Method::kGd:
        for (std::size_t k = 0; k < candidates.size(); ++k)
          put(k, gt.dot(c.train_grads[candidates[k]]));
        break;
      case Method::kGc: {
        const double gnorm = gt.norm();
        for (std::size_t k = 0; k < candidates.size(); ++k) {
          const std::size_t j = candidates[k];
          put(k, cosine_with_norms(gt, c.train_grads[j], gnorm, c.train_grad_norms[j]));
        }
        break;
      }
      case Method::kRif: {
        const Vector wt = c.inv_sqrt->apply(gt);
        const double wnorm = wt.norm();
        for (std::size_t k = 0; k < candidates.size(); ++k) {
          const std::size_t j = candidates[k];
          put(k, cosine_with_norms(wt, c.train_whitened[j], wnorm, c.train_whitened_norms[j]));
        }
        break;
      }
      case Method::kIf: {
        if (cfg_.if_strategy == IfStrategy::kCacheTrain) {
          for (std::size_t k = 0; k < candidates.size(); ++k)
            put(k, cfg_.if_sign * gt.dot(c.train_ihvp[candidates[k]]));
        } else {
          IhvpConfig serial = cfg_.ihvp;
          serial.threads = 1;
          const Vector st = c.solver ? Vector(c.inverse * gt) : ihvp(*c.hessian, gt, serial);
          for (std::size_t k = 0; k < candidates.size(); ++k)
            put(k, cfg_.if_sign * st.dot(c.train_grads[candidates[k]]));
        }
        break;
      }
      default:
        throw ConfigError("attribute: unhandled method");
    }
  });
  return out;
}

AttributionMatrix attribute(Method method, const ModelParams& model, const Dataset& train,
                            const Dataset& tests, const AttributionConfig& cfg) {
  return Attributor(model, train, cfg).score(method, tests);
}

}  // namespace tda
