#include "tda/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "tda/error.hpp"
#include "tda/rng.hpp"

namespace tda {

bool Instance::has_tag(std::string_view tag) const {
  return std::binary_search(tags.begin(), tags.end(), tag);
}

void Instance::add_tag(std::string tag) {
  auto it = std::lower_bound(tags.begin(), tags.end(), tag);
  if (it == tags.end() || *it != tag) tags.insert(it, std::move(tag));
}

Dataset::Dataset(std::size_t dim, int classes) : dim_(dim), classes_(classes) {
  if (classes < 1) throw ConfigError("dataset: class count must be >= 1");
}

Dataset::Dataset(std::size_t dim, int classes, std::vector<Instance> instances)
    : Dataset(dim, classes) {
  instances_.reserve(instances.size());
  for (auto& inst : instances) add(std::move(inst));
}

void Dataset::validate(const Instance& inst) const {
  std::ostringstream msg;
  if (static_cast<std::size_t>(inst.features.size()) != dim_) {
    msg << "instance " << inst.id << ": feature length " << inst.features.size()
        << " != dataset dim " << dim_;
    throw ConfigError(msg.str());
  }
  if (!inst.features.allFinite()) {
    msg << "instance " << inst.id << ": non-finite feature";
    throw ConfigError(msg.str());
  }
  if (inst.untuned && untuned_dim_ &&
      static_cast<std::size_t>(inst.untuned->size()) != *untuned_dim_) {
    msg << "instance " << inst.id << ": untuned feature length " << inst.untuned->size()
        << " != " << *untuned_dim_;
    throw ConfigError(msg.str());
  }
  if (inst.untuned && !inst.untuned->allFinite()) {
    msg << "instance " << inst.id << ": non-finite untuned feature";
    throw ConfigError(msg.str());
  }
  if (inst.label < 0 || inst.label >= classes_) {
    msg << "instance " << inst.id << ": label " << inst.label << " outside [0, "
        << classes_ << ")";
    throw ConfigError(msg.str());
  }
  if (index_.contains(inst.id)) {
    msg << "instance " << inst.id << ": duplicate id";
    throw ConfigError(msg.str());
  }
}

void Dataset::add(Instance inst) {
  validate(inst);
  std::sort(inst.tags.begin(), inst.tags.end());
  inst.tags.erase(std::unique(inst.tags.begin(), inst.tags.end()), inst.tags.end());
  index_.emplace(inst.id, instances_.size());
  if (inst.untuned && !untuned_dim_) untuned_dim_ = static_cast<std::size_t>(inst.untuned->size());
  instances_.push_back(std::move(inst));
}

std::optional<std::size_t> Dataset::index_of(std::uint64_t id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::uint64_t> Dataset::ids() const {
  std::vector<std::uint64_t> out;
  out.reserve(instances_.size());
  for (const auto& inst : instances_) out.push_back(inst.id);
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out(dim_, classes_);
  out.instances_.reserve(indices.size());
  for (std::size_t i : indices) out.add(instances_.at(i));
  return out;
}

Dataset Dataset::without(std::span<const std::size_t> indices) const {
  std::vector<char> drop(instances_.size(), 0);
  for (std::size_t i : indices) drop.at(i) = 1;
  Dataset out(dim_, classes_);
  out.instances_.reserve(instances_.size());
  for (std::size_t i = 0; i < instances_.size(); ++i)
    if (!drop[i]) out.add(instances_[i]);
  return out;
}

Matrix Dataset::augmented_design() const {
  Matrix x(static_cast<Eigen::Index>(size()), static_cast<Eigen::Index>(dim_ + 1));
  for (std::size_t i = 0; i < size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    x.row(row).head(static_cast<Eigen::Index>(dim_)) = instances_[i].features.transpose();
    x(row, static_cast<Eigen::Index>(dim_)) = 1.0;
  }
  return x;
}

ModelParams ModelParams::zeros(int classes, std::size_t dim) {
  return {ParamMatrix::Zero(classes, static_cast<Eigen::Index>(dim + 1))};
}

ModelParams ModelParams::random_init(int classes, std::size_t dim, std::uint64_t seed) {
  ModelParams out = zeros(classes, dim);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < out.weights.size(); ++i)
    out.weights.data()[i] = rng.uniform(-0.01, 0.01);
  return out;
}

ModelParams ModelParams::from_flat(int classes, std::size_t dim, const Vector& flat) {
  ModelParams out = zeros(classes, dim);
  if (flat.size() != out.weights.size())
    throw ConfigError("model: flat parameter length mismatch");
  std::copy(flat.data(), flat.data() + flat.size(), out.weights.data());
  return out;
}

std::string_view to_string(LabelPolicy policy) {
  return policy == LabelPolicy::kGold ? "gold" : "predicted";
}

LabelPolicy parse_label_policy(std::string_view name) {
  if (name == "gold") return LabelPolicy::kGold;
  if (name == "predicted") return LabelPolicy::kPredicted;
  throw ConfigError("label_policy: expected gold|predicted, got '" + std::string(name) + "'");
}

Vector augment(const Vector& features) {
  Vector out(features.size() + 1);
  out.head(features.size()) = features;
  out(features.size()) = 1.0;
  return out;
}

namespace {

void check_dim(const ModelParams& params, const Vector& features) {
  if (static_cast<std::size_t>(features.size()) != params.dim()) {
    std::ostringstream msg;
    msg << "dimension mismatch: features " << features.size() << ", model " << params.dim();
    throw ConfigError(msg.str());
  }
}

Vector logits_of(const ModelParams& params, const Vector& features) {
  const auto d = static_cast<Eigen::Index>(params.dim());
  return params.weights.leftCols(d) * features + params.weights.col(d);
}

int argmax_lowest(const Vector& v) {
  int best = 0;
  for (Eigen::Index c = 1; c < v.size(); ++c)
    if (v(c) > v(best)) best = static_cast<int>(c);
  return best;
}

// -log softmax(z)_y via log-sum-exp.
double cross_entropy(const Vector& logits, int label) {
  const double m = logits.maxCoeff();
  const double lse = std::log((logits.array() - m).exp().sum());
  return lse - (logits(label) - m);
}

void check_label(const ModelParams& params, int label) {
  if (label < 0 || label >= params.classes()) {
    std::ostringstream msg;
    msg << "label " << label << " outside [0, " << params.classes() << ")";
    throw ConfigError(msg.str());
  }
}

}  // namespace

Prediction predict(const ModelParams& params, const Vector& features) {
  check_dim(params, features);
  if (!features.allFinite()) throw ConfigError("predict: non-finite features");
  Prediction out;
  out.logits = logits_of(params, features);
  const double m = out.logits.maxCoeff();
  out.probs = (out.logits.array() - m).exp();
  out.probs /= out.probs.sum();
  out.predicted = argmax_lowest(out.logits);
  return out;
}

double loss_for_label(const ModelParams& params, const Vector& features, int label) {
  check_dim(params, features);
  check_label(params, label);
  return cross_entropy(logits_of(params, features), label);
}

double loss(const ModelParams& params, const Instance& inst) {
  return loss_for_label(params, inst.features, inst.label);
}

Vector grad_for_label(const ModelParams& params, const Vector& features, int label) {
  check_label(params, label);
  const Prediction pred = predict(params, features);
  const auto width = static_cast<Eigen::Index>(params.dim() + 1);
  Vector residual = pred.probs;
  residual(label) -= 1.0;
  const Vector faug = augment(features);
  Vector g(params.weights.size());
  for (Eigen::Index c = 0; c < residual.size(); ++c)
    g.segment(c * width, width) = residual(c) * faug;
  return g;
}

Vector grad(const ModelParams& params, const Instance& inst, LabelPolicy policy) {
  const int label = policy == LabelPolicy::kGold
                        ? inst.label
                        : predict(params, inst.features).predicted;
  return grad_for_label(params, inst.features, label);
}

namespace {

struct Evaluation {
  double objective;
  ParamMatrix gradient;
};

// Single pass over the design matrix; fixed accumulation order.
Evaluation evaluate(const ParamMatrix& w, const Matrix& design,
                    const std::vector<int>& labels, double lambda) {
  const auto n = design.rows();
  Matrix logits = design * w.transpose();  // n x C
  double data_loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    auto row = logits.row(i);
    const int y = labels[static_cast<std::size_t>(i)];
    const double m = row.maxCoeff();
    const double shifted_y = row(y) - m;
    row.array() = (row.array() - m).exp();
    const double z = row.sum();
    data_loss += std::log(z) - shifted_y;
    row /= z;
    row(y) -= 1.0;
  }
  Evaluation out;
  const double inv_n = n > 0 ? 1.0 / static_cast<double>(n) : 0.0;
  out.objective = data_loss * inv_n + lambda * w.squaredNorm();
  out.gradient = (logits.transpose() * design) * inv_n + 2.0 * lambda * w;
  return out;
}

std::vector<int> labels_of(const Dataset& data) {
  std::vector<int> labels;
  labels.reserve(data.size());
  for (const auto& inst : data) labels.push_back(inst.label);
  return labels;
}

void check_model_matches(const ModelParams& params, const Dataset& data) {
  if (params.dim() != data.dim() || params.classes() != data.classes()) {
    std::ostringstream msg;
    msg << "model shape (C=" << params.classes() << ", d=" << params.dim()
        << ") does not match dataset (C=" << data.classes() << ", d=" << data.dim() << ")";
    throw ConfigError(msg.str());
  }
}

}  // namespace

double objective(const ModelParams& params, const Dataset& data, double lambda) {
  check_model_matches(params, data);
  return evaluate(params.weights, data.augmented_design(), labels_of(data), lambda).objective;
}

ParamMatrix objective_gradient(const ModelParams& params, const Dataset& data,
                               double lambda) {
  check_model_matches(params, data);
  return evaluate(params.weights, data.augmented_design(), labels_of(data), lambda).gradient;
}

double suggest_learning_rate(const Dataset& data, double lambda) {
  if (data.empty()) return 1.0 / (2.0 * lambda);
  const Matrix x = data.augmented_design();
  const Matrix second_moment = (x.transpose() * x) / static_cast<double>(data.size());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(second_moment, Eigen::EigenvaluesOnly);
  const double top = eig.eigenvalues().maxCoeff();
  return 1.0 / (0.5 * top + 2.0 * lambda);
}

TrainResult train(const Dataset& data, const TrainConfig& cfg,
                  const std::optional<ModelParams>& init) {
  if (data.empty()) throw ConfigError("train: dataset is empty");
  if (!(cfg.lambda > 0.0)) throw ConfigError("lambda: must be > 0");
  if (!(cfg.grad_tol > 0.0)) throw ConfigError("grad_tol: must be > 0");
  if (cfg.lr && !(*cfg.lr >= 0.0)) throw ConfigError("lr: must be >= 0");
  if (cfg.max_epochs < 0) throw ConfigError("max_epochs: must be >= 0");

  TrainResult out;
  out.params = init ? *init : ModelParams::random_init(data.classes(), data.dim(), cfg.seed);
  check_model_matches(out.params, data);
  out.lr = cfg.lr ? *cfg.lr : suggest_learning_rate(data, cfg.lambda);

  const Matrix design = data.augmented_design();
  const std::vector<int> labels = labels_of(data);
  ParamMatrix& w = out.params.weights;

  Evaluation eval = evaluate(w, design, labels, cfg.lambda);
  const int budget = out.lr == 0.0 ? 0 : cfg.max_epochs;
  for (int epoch = 0;; ++epoch) {
    if (!std::isfinite(eval.objective)) {
      std::ostringstream msg;
      msg << "training diverged at epoch " << epoch << " (non-finite objective)";
      throw NumericalError(msg.str());
    }
    out.objective_trace.push_back(eval.objective);
    out.grad_norm = eval.gradient.norm();
    out.objective = eval.objective;
    out.epochs = epoch;
    if (out.grad_norm <= cfg.grad_tol) {
      out.converged = true;
      break;
    }
    if (epoch >= budget) break;
    w -= out.lr * eval.gradient;
    eval = evaluate(w, design, labels, cfg.lambda);
  }
  if (out.lr == 0.0) out.converged = false;
  return out;
}

double accuracy(const ModelParams& params, const Dataset& data) {
  if (data.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& inst : data)
    if (predict(params, inst.features).predicted == inst.label) ++hits;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace tda
