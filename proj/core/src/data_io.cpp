#include "tda/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "tda/error.hpp"
#include "tda/rng.hpp"

namespace tda {

using nlohmann::json;

std::string_view to_string(GeneratorKind kind) {
  return kind == GeneratorKind::kGaussian ? "gaussian" : "artifact";
}

GeneratorKind parse_generator_kind(std::string_view name) {
  if (name == "gaussian") return GeneratorKind::kGaussian;
  if (name == "artifact") return GeneratorKind::kArtifact;
  throw ConfigError("gen_kind: expected gaussian|artifact, got '" + std::string(name) + "'");
}

namespace {

std::vector<std::size_t> resolved_artifact_dims(const GeneratorSpec& spec) {
  std::vector<std::size_t> dims = spec.artifact_dims;
  if (dims.empty() && spec.d > 0) dims.push_back(spec.d - 1);
  std::sort(dims.begin(), dims.end());
  if (std::adjacent_find(dims.begin(), dims.end()) != dims.end())
    throw ConfigError("artifact_dims: duplicate index");
  for (std::size_t k : dims)
    if (k >= spec.d) throw ConfigError("artifact_dims: index outside [0, d)");
  return dims;
}

// Coordinates carrying the class means.
std::vector<std::size_t> signal_dims(std::size_t d, const std::vector<std::size_t>& excluded) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < d; ++k)
    if (!std::binary_search(excluded.begin(), excluded.end(), k)) out.push_back(k);
  return out;
}

std::vector<int> balanced_labels(std::size_t n, int classes, Rng& rng) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(classes));
  rng.shuffle(labels);
  return labels;
}

Vector sample_features(int label, const GeneratorSpec& spec,
                       const std::vector<std::size_t>& signal, Rng& rng) {
  Vector f(static_cast<Eigen::Index>(spec.d));
  for (Eigen::Index k = 0; k < f.size(); ++k) f(k) = rng.normal();
  if (!signal.empty()) {
    const std::size_t k = signal[static_cast<std::size_t>(label) % signal.size()];
    f(static_cast<Eigen::Index>(k)) += spec.separation;
  }
  return f;
}

void validate_spec(const GeneratorSpec& spec) {
  if (spec.d == 0) throw ConfigError("dim: must be >= 1");
  if (spec.classes < 1) throw ConfigError("classes: must be >= 1");
  if (!std::isfinite(spec.separation)) throw ConfigError("separation: must be finite");
}

}  // namespace

Corpus gen_gaussian(const GeneratorSpec& spec) {
  validate_spec(spec);
  std::vector<std::size_t> excluded;
  if (spec.kind == GeneratorKind::kArtifact) excluded = resolved_artifact_dims(spec);
  const auto signal = signal_dims(spec.d, excluded);

  Rng rng(spec.seed);
  Corpus out{Dataset(spec.d, spec.classes), Dataset(spec.d, spec.classes)};
  std::uint64_t next_id = 0;
  for (Dataset* split : {&out.train, &out.test}) {
    const std::size_t count = split == &out.train ? spec.n : spec.n_test;
    const auto labels = balanced_labels(count, spec.classes, rng);
    for (std::size_t i = 0; i < count; ++i) {
      Instance inst;
      inst.id = next_id++;
      inst.label = labels[i];
      inst.features = sample_features(inst.label, spec, signal, rng);
      split->add(std::move(inst));
    }
  }
  return out;
}

Corpus gen_artifact(const GeneratorSpec& spec) {
  validate_spec(spec);
  if (spec.classes != 2) throw ConfigError("classes: the artifact generator requires C = 2");
  if (!(spec.artifact_rate >= 0.0 && spec.artifact_rate <= 1.0))
    throw ConfigError("artifact_rate: must be in [0, 1]");
  if (!(spec.counter_fraction >= 0.0 && spec.counter_fraction <= 1.0))
    throw ConfigError("counter_fraction: must be in [0, 1]");
  const auto dims = resolved_artifact_dims(spec);
  if (spec.d < dims.size() + 1) throw ConfigError("dim: must exceed the artifact dimension count");
  const auto signal = signal_dims(spec.d, dims);

  Rng rng(spec.seed);
  Corpus out{Dataset(spec.d, 2), Dataset(spec.d, 2)};

  auto plant = [&](Instance& inst) {
    for (std::size_t k : dims) inst.features(static_cast<Eigen::Index>(k)) = spec.artifact_strength;
    inst.add_tag(std::string(kArtifactTag));
  };
  auto untuned_view = [&](Instance& inst) {
    Vector u = inst.features;
    for (std::size_t k : dims) u(static_cast<Eigen::Index>(k)) = rng.normal();
    inst.untuned = std::move(u);
  };

  std::vector<Instance> train;
  train.reserve(spec.n);
  const auto train_labels = balanced_labels(spec.n, 2, rng);
  std::vector<std::size_t> class0;
  for (std::size_t i = 0; i < spec.n; ++i) {
    Instance inst;
    inst.id = i;
    inst.label = train_labels[i];
    inst.features = sample_features(inst.label, spec, signal, rng);
    if (inst.label == 0) class0.push_back(i);
    train.push_back(std::move(inst));
  }
  const auto planted =
      static_cast<std::size_t>(std::llround(spec.artifact_rate * static_cast<double>(spec.n)));
  if (planted > class0.size()) {
    std::ostringstream msg;
    msg << "artifact_rate: " << spec.artifact_rate << " needs " << planted
        << " class-0 instances but only " << class0.size() << " exist";
    throw ConfigError(msg.str());
  }
  for (std::size_t pick : rng.sample_indices(class0.size(), planted)) plant(train[class0[pick]]);
  const double conditional_rate =
      class0.empty() ? 0.0 : static_cast<double>(planted) / static_cast<double>(class0.size());
  for (auto& inst : train) {
    untuned_view(inst);
    out.train.add(std::move(inst));
  }

  const auto counter = static_cast<std::size_t>(
      std::llround(spec.counter_fraction * static_cast<double>(spec.n_test)));
  const std::size_t regular = spec.n_test - counter;
  std::uint64_t next_id = spec.n;
  const auto test_labels = balanced_labels(regular, 2, rng);
  for (std::size_t i = 0; i < regular; ++i) {
    Instance inst;
    inst.id = next_id++;
    inst.label = test_labels[i];
    inst.features = sample_features(inst.label, spec, signal, rng);
    if (inst.label == 0 && rng.uniform() < conditional_rate) plant(inst);
    untuned_view(inst);
    out.test.add(std::move(inst));
  }
  for (std::size_t i = 0; i < counter; ++i) {
    Instance inst;
    inst.id = next_id++;
    inst.label = 1;
    inst.features = sample_features(1, spec, signal, rng);
    plant(inst);
    inst.add_tag(std::string(kCounterexampleTag));
    untuned_view(inst);
    out.test.add(std::move(inst));
  }
  return out;
}

Corpus generate(const GeneratorSpec& spec) {
  return spec.kind == GeneratorKind::kGaussian ? gen_gaussian(spec) : gen_artifact(spec);
}

std::string_view to_string(PerturbKind kind) {
  switch (kind) {
    case PerturbKind::kIdentity: return "identity";
    case PerturbKind::kAdd: return "add";
    case PerturbKind::kRemove: return "remove";
    case PerturbKind::kReplace: return "replace";
  }
  return "identity";
}

PerturbKind parse_perturb_kind(std::string_view name) {
  if (name == "identity") return PerturbKind::kIdentity;
  if (name == "add") return PerturbKind::kAdd;
  if (name == "remove") return PerturbKind::kRemove;
  if (name == "replace") return PerturbKind::kReplace;
  throw ConfigError("perturb_kinds: expected identity|add|remove|replace, got '" +
                    std::string(name) + "'");
}

FeatureStats FeatureStats::of(const Dataset& data) {
  FeatureStats stats;
  const auto d = static_cast<Eigen::Index>(data.dim());
  stats.stddev = Vector::Zero(d);
  stats.columns.assign(data.dim(), {});
  if (data.empty()) return stats;
  Vector mean = Vector::Zero(d);
  for (const auto& inst : data) mean += inst.features;
  mean /= static_cast<double>(data.size());
  for (const auto& inst : data) {
    stats.stddev += (inst.features - mean).cwiseAbs2();
    for (Eigen::Index k = 0; k < d; ++k)
      stats.columns[static_cast<std::size_t>(k)].push_back(inst.features(k));
  }
  stats.stddev = (stats.stddev / static_cast<double>(data.size())).cwiseSqrt();
  return stats;
}

Instance perturb(const Instance& inst, PerturbKind kind, std::uint64_t seed,
                 const FeatureStats& stats, std::uint64_t new_id, double noise_scale) {
  const auto d = inst.features.size();
  if (d < 1) throw ConfigError("perturb: instance has no features");
  if (kind != PerturbKind::kIdentity && (stats.stddev.size() != d ||
                                         stats.columns.size() != static_cast<std::size_t>(d)))
    throw ConfigError("perturb: feature statistics do not match the instance dimension");
  Instance out = inst;
  out.id = new_id;
  Rng rng(seed);
  switch (kind) {
    case PerturbKind::kIdentity:
      break;
    case PerturbKind::kAdd: {
      const auto k = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(d)));
      out.features(k) += rng.normal(0.0, noise_scale * stats.stddev(k));
      break;
    }
    case PerturbKind::kRemove: {
      std::vector<Eigen::Index> nonzero;
      for (Eigen::Index k = 0; k < d; ++k)
        if (inst.features(k) != 0.0) nonzero.push_back(k);
      if (nonzero.empty()) {
        std::ostringstream msg;
        msg << "perturb remove: instance " << inst.id << " has an all-zero feature vector";
        throw ConfigError(msg.str());
      }
      out.features(nonzero[rng.below(nonzero.size())]) = 0.0;
      break;
    }
    case PerturbKind::kReplace: {
      // Draw until the value differs so exactly one coordinate changes.
      for (int attempt = 0; attempt < 1024; ++attempt) {
        const auto k = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(d)));
        const auto& column = stats.columns[static_cast<std::size_t>(k)];
        if (column.empty()) throw ConfigError("perturb replace: empty reference column");
        const double value = column[rng.below(column.size())];
        if (value != inst.features(k)) {
          out.features(k) = value;
          return out;
        }
      }
      std::ostringstream msg;
      msg << "perturb replace: no differing reference value for instance " << inst.id;
      throw ConfigError(msg.str());
    }
  }
  return out;
}

namespace {

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector from_json_array(const json& arr, const char* field) {
  if (!arr.is_array()) throw ConfigError(std::string(field) + " must be an array");
  Vector v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t k = 0; k < arr.size(); ++k) {
    if (!arr[k].is_number()) throw ConfigError(std::string(field) + " entries must be numbers");
    v(static_cast<Eigen::Index>(k)) = arr[k].get<double>();
  }
  return v;
}

struct Header {
  std::size_t dim;
  int classes;
};

std::optional<Header> parse_header(const json& j) {
  if (!j.is_object() || !j.contains("dim") || j.contains("id")) return std::nullopt;
  Header h{j.at("dim").get<std::size_t>(), j.value("classes", 0)};
  return h;
}

Instance parse_record(const json& j, std::optional<std::size_t> dim) {
  if (!j.is_object()) throw ConfigError("record must be a JSON object");
  Instance inst;
  if (!j.contains("id") || !j["id"].is_number_integer() || j["id"].get<std::int64_t>() < 0)
    throw ConfigError("record needs a non-negative integer \"id\"");
  inst.id = j["id"].get<std::uint64_t>();
  if (!j.contains("label") || !j["label"].is_number_integer())
    throw ConfigError("record needs an integer \"label\"");
  inst.label = j["label"].get<int>();
  if (j.contains("features")) {
    inst.features = from_json_array(j["features"], "features");
  } else if (j.contains("sparse")) {
    if (!dim) throw ConfigError("sparse record requires a header declaring \"dim\"");
    inst.features = Vector::Zero(static_cast<Eigen::Index>(*dim));
    for (const auto& pair : j["sparse"]) {
      if (!pair.is_array() || pair.size() != 2) throw ConfigError("sparse entries are [index, value]");
      const auto k = pair[0].get<std::size_t>();
      if (k >= *dim) throw ConfigError("sparse index outside declared dim");
      inst.features(static_cast<Eigen::Index>(k)) = pair[1].get<double>();
    }
  } else {
    throw ConfigError("record needs \"features\" or \"sparse\"");
  }
  if (j.contains("untuned_features"))
    inst.untuned = from_json_array(j["untuned_features"], "untuned_features");
  if (j.contains("tags"))
    for (const auto& t : j["tags"]) inst.add_tag(t.get<std::string>());
  if (j.contains("text")) inst.text = j["text"].get<std::string>();
  return inst;
}

}  // namespace

Dataset parse_dataset(std::string_view text, std::string_view source) {
  std::optional<Header> header;
  std::vector<std::pair<std::size_t, Instance>> records;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool first = true;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    std::ostringstream where;
    where << source << ":" << line_no << ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ConfigError(where.str() + "malformed line: " + e.what());
    }
    try {
      if (first) {
        first = false;
        if ((header = parse_header(j))) continue;
      }
      records.emplace_back(line_no, parse_record(j, header ? std::optional(header->dim) : std::nullopt));
    } catch (const json::exception& e) {
      throw ConfigError(where.str() + "malformed record: " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError(where.str() + e.what());
    }
  }

  std::size_t dim = header ? header->dim : 0;
  int classes = header ? header->classes : 0;
  if (!header && !records.empty()) dim = static_cast<std::size_t>(records.front().second.features.size());
  if (classes <= 0) {
    int max_label = 0;
    for (const auto& [line, inst] : records) max_label = std::max(max_label, inst.label);
    classes = max_label + 1;
  }
  Dataset out(dim, classes);
  for (auto& [line, inst] : records) {
    try {
      out.add(std::move(inst));
    } catch (const ConfigError& e) {
      std::ostringstream msg;
      msg << source << ":" << line << ": " << e.what();
      throw ConfigError(msg.str());
    }
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& path) {
  return parse_dataset(read_text_file(path), path.string());
}

std::string format_dataset(const Dataset& data) {
  std::string out;
  out += json{{"dim", data.dim()}, {"classes", data.classes()}}.dump();
  out += '\n';
  for (const auto& inst : data) {
    json j;
    j["id"] = inst.id;
    j["label"] = inst.label;
    j["features"] = to_std(inst.features);
    if (inst.untuned) j["untuned_features"] = to_std(*inst.untuned);
    if (!inst.tags.empty()) j["tags"] = inst.tags;
    if (!inst.text.empty()) j["text"] = inst.text;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  write_text_file(path, format_dataset(data));
}

namespace {

class Fnv1a {
 public:
  void bytes(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  template <typename T>
  void value(const T& v) {
    bytes(&v, sizeof(T));
  }
  void text(std::string_view s) {
    value(static_cast<std::uint64_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void vector(const Vector& v) {
    value(static_cast<std::uint64_t>(v.size()));
    bytes(v.data(), static_cast<std::size_t>(v.size()) * sizeof(double));
  }
  std::string hex() const {
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << hash_;
    return out.str();
  }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

}  // namespace

std::string fingerprint(const Dataset& data) {
  Fnv1a h;
  h.value(static_cast<std::uint64_t>(data.dim()));
  h.value(static_cast<std::int64_t>(data.classes()));
  for (const auto& inst : data) {
    h.value(inst.id);
    h.value(static_cast<std::int64_t>(inst.label));
    h.vector(inst.features);
    h.value(static_cast<std::uint8_t>(inst.untuned ? 1 : 0));
    if (inst.untuned) h.vector(*inst.untuned);
    h.value(static_cast<std::uint64_t>(inst.tags.size()));
    for (const auto& t : inst.tags) h.text(t);
    h.text(inst.text);
  }
  return h.hex();
}

std::string fingerprint(const ModelParams& params) {
  Fnv1a h;
  h.value(static_cast<std::int64_t>(params.weights.rows()));
  h.value(static_cast<std::int64_t>(params.weights.cols()));
  h.bytes(params.weights.data(), static_cast<std::size_t>(params.weights.size()) * sizeof(double));
  return h.hex();
}

void save_model(const ModelFile& model, const std::filesystem::path& path) {
  json weights = json::array();
  for (Eigen::Index c = 0; c < model.params.weights.rows(); ++c) {
    std::vector<double> row(model.params.weights.row(c).begin(), model.params.weights.row(c).end());
    weights.push_back(row);
  }
  json cfg{{"lambda", model.train_config.lambda},
           {"lr", model.train_config.lr ? json(*model.train_config.lr) : json(nullptr)},
           {"max_epochs", model.train_config.max_epochs},
           {"grad_tol", model.train_config.grad_tol},
           {"seed", model.train_config.seed}};
  json j{{"format", "tda-model-v1"},
         {"classes", model.params.classes()},
         {"dim", model.params.dim()},
         {"weights", weights},
         {"train_config", cfg},
         {"dataset_hash", model.dataset_hash},
         {"params_hash", fingerprint(model.params)},
         {"converged", model.converged},
         {"epochs", model.epochs},
         {"grad_norm", model.grad_norm},
         {"objective", model.objective},
         {"lr_used", model.lr}};
  write_text_file(path, j.dump(1) + "\n");
}

ModelFile load_model(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    const json j = json::parse(text);
    if (j.value("format", "") != "tda-model-v1")
      throw ConfigError(path.string() + ": not a tda model file");
    ModelFile out;
    const int classes = j.at("classes").get<int>();
    const auto dim = j.at("dim").get<std::size_t>();
    out.params = ModelParams::zeros(classes, dim);
    const auto& weights = j.at("weights");
    if (weights.size() != static_cast<std::size_t>(classes))
      throw ConfigError(path.string() + ": weights row count mismatch");
    for (int c = 0; c < classes; ++c) {
      const auto& row = weights[static_cast<std::size_t>(c)];
      if (row.size() != dim + 1) throw ConfigError(path.string() + ": weights column count mismatch");
      for (std::size_t k = 0; k <= dim; ++k)
        out.params.weights(c, static_cast<Eigen::Index>(k)) = row[k].get<double>();
    }
    const auto& cfg = j.at("train_config");
    out.train_config.lambda = cfg.at("lambda").get<double>();
    if (!cfg.at("lr").is_null()) out.train_config.lr = cfg.at("lr").get<double>();
    out.train_config.max_epochs = cfg.at("max_epochs").get<int>();
    out.train_config.grad_tol = cfg.at("grad_tol").get<double>();
    out.train_config.seed = cfg.at("seed").get<std::uint64_t>();
    out.dataset_hash = j.at("dataset_hash").get<std::string>();
    out.converged = j.at("converged").get<bool>();
    out.epochs = j.at("epochs").get<int>();
    out.grad_norm = j.at("grad_norm").get<double>();
    out.objective = j.at("objective").get<double>();
    out.lr = j.at("lr_used").get<double>();
    if (j.at("params_hash").get<std::string>() != fingerprint(out.params))
      throw ConfigError(path.string() + ": params_hash does not match the stored weights");
    return out;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": malformed model file: " + e.what());
  }
}

void save_attribution(const AttributionMatrix& matrix, const std::filesystem::path& path) {
  json scores = json::array();
  for (Eigen::Index t = 0; t < matrix.scores.rows(); ++t) {
    std::vector<double> row(matrix.scores.row(t).begin(), matrix.scores.row(t).end());
    scores.push_back(row);
  }
  json j{{"method", std::string(to_string(matrix.method))},
         {"test_ids", matrix.test_ids},
         {"train_ids", matrix.train_ids},
         {"representer_stationary", matrix.representer_stationary},
         {"scores", scores}};
  write_text_file(path, j.dump() + "\n");
}

AttributionMatrix load_attribution(const std::filesystem::path& path) {
  try {
    const json j = json::parse(read_text_file(path));
    AttributionMatrix out;
    out.method = parse_method(j.at("method").get<std::string>());
    out.test_ids = j.at("test_ids").get<std::vector<std::uint64_t>>();
    out.train_ids = j.at("train_ids").get<std::vector<std::uint64_t>>();
    out.representer_stationary = j.value("representer_stationary", true);
    const auto& scores = j.at("scores");
    out.scores.resize(static_cast<Eigen::Index>(out.test_ids.size()),
                      static_cast<Eigen::Index>(out.train_ids.size()));
    if (scores.size() != out.test_ids.size()) throw ConfigError(path.string() + ": score rows mismatch");
    for (std::size_t t = 0; t < scores.size(); ++t) {
      if (scores[t].size() != out.train_ids.size())
        throw ConfigError(path.string() + ": score columns mismatch");
      for (std::size_t k = 0; k < out.train_ids.size(); ++k)
        out.scores(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = scores[t][k].get<double>();
    }
    return out;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": malformed attribution file: " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError(path.string() + ": cannot create directory: " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError(path.string() + ": write failed");
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace tda
