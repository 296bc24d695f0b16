#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "tda/attributors.hpp"
#include "tda/data_io.hpp"
#include "tda/error.hpp"
#include "tda/eval.hpp"
#include "tda/model.hpp"
#include "tda/report.hpp"

namespace tda::cli {

namespace fs = std::filesystem;

namespace {

enum Group : unsigned {
  kAlways = 0,
  kGen = 1u << 0,
  kTrainData = 1u << 1,
  kTestData = 1u << 2,
  kModel = 1u << 3,
  kTrain = 1u << 4,
  kAttr = 1u << 5,
  kExp = 1u << 6,
  kTiming = 1u << 7,
  kRun = 1u << 8,
};

struct Key {
  std::string name;
  std::string def;
  std::string help;
  unsigned groups;
};

const std::vector<Key>& registry() {
  static const std::vector<Key> keys = {
      {"seed", "0", "global seed; derived seeds default to it", kAlways},
      {"threads", "1", "worker threads for attribute/eval (results do not depend on it)", kAlways},
      {"out", "", "output directory (required)", kAlways},
      {"report_format", "both", "json|csv|both", kAlways},

      {"gen_kind", "gaussian", "gaussian|artifact", kGen},
      {"gen_seed", "auto", "generator seed (auto = seed)", kGen},
      {"gen_n", "1000", "train instances", kGen},
      {"gen_n_test", "200", "test instances", kGen},
      {"gen_dim", "16", "feature dimension d", kGen},
      {"gen_classes", "2", "class count C", kGen},
      {"gen_separation", "2", "class mean separation mu", kGen},
      {"gen_artifact_rate", "0.4", "share of train instances carrying the artifact (artifact kind)", kGen},
      {"gen_artifact_strength", "4", "value written to the artifact coordinates", kGen},
      {"gen_artifact_dims", "auto", "comma-separated artifact coordinates (auto = last)", kGen},
      {"gen_counter_fraction", "0.5", "share of the test split that are counter-examples", kGen},

      {"train", "", "train dataset (JSONL)", kTrainData},
      {"test", "", "test dataset (JSONL)", kTestData},
      {"model", "", "model file written by `tda train`", kModel},

      {"lambda", "0.05", "L2 coefficient", kTrain},
      {"lr", "auto", "gradient-descent step (auto = 1/L)", kTrain},
      {"max_epochs", "20000", "epoch budget", kTrain},
      {"grad_tol", "1e-8", "stop when ||grad J|| <= grad_tol", kTrain},
      {"train_seed", "auto", "init seed (auto = seed)", kTrain},

      {"methods", "ALL", "comma-separated method ids or ALL", kAttr},
      {"damping", "0.01", "Hessian damping delta", kAttr},
      {"ihvp_method", "direct", "direct|lissa|cg", kAttr},
      {"ihvp_scale", "auto", "LiSSA scale sigma (auto = 10 x power-iteration norm)", kAttr},
      {"ihvp_iterations", "1000", "LiSSA recursion depth J", kAttr},
      {"ihvp_repeats", "4", "LiSSA repeats R", kAttr},
      {"ihvp_batch_size", "auto", "LiSSA batch size B (auto = min(32, n))", kAttr},
      {"ihvp_seed", "auto", "LiSSA seed (auto = seed)", kAttr},
      {"ihvp_tol", "1e-8", "cg relative residual", kAttr},
      {"if_sign", "1", "global sign of IF scores: 1 or -1", kAttr},
      {"if_strategy", "cache_train", "cache_train|per_test", kAttr},
      {"label_policy", "gold", "test-gradient label: gold|predicted", kAttr},
      {"eig_floor", "1e-8", "eigenvalue floor for H^{-1/2}", kAttr},
      {"hessian_cap", "4096", "largest parameter count with a materialized Hessian", kAttr},

      {"eval_seed", "auto", "sampling seed (auto = seed)", kExp},
      {"n_test_sample", "100", "tests sampled for correlate/overlap/randtest; targets for recover", kExp},
      {"n_train_sample", "500", "train instances sampled for correlate/overlap/randtest", kExp},
      {"k_remove", "20,100", "removal sizes", kExp},
      {"n_removal_tests", "50", "tests per removal run", kExp},
      {"n_random_runs", "50", "random-removal baseline runs", kExp},
      {"k_top", "1,10,50", "top-k cut-offs for overlap/artifact/recover", kExp},
      {"abs_scores", "false", "rank |score| in correlate/overlap", kExp},
      {"random_model_seed", "auto", "randomized-test model seed (auto = seed + 1)", kExp},
      {"artifact_tag", "artifact", "tag counted by the artifact experiment", kExp},
      {"perturb_kinds", "identity,add,remove,replace", "perturbations for recover", kExp},
      {"noise_scale", "0.1", "add-perturbation noise, in per-coordinate stddevs", kExp},

      {"timing_dims", "64,128,256", "feature dimensions timed", kTiming},
      {"timing_n_train", "100", "train instances per timing dataset", kTiming},
      {"timing_n_test", "200", "test instances per timing dataset", kTiming},
      {"timing_runs", "5", "timed repetitions (median reported)", kTiming},

      {"experiments", "correlate,overlap,removal,randtest,artifact,recover,timing",
       "experiments run by `tda run`", kRun},
  };
  return keys;
}

const Key* find_key(const std::string& name) {
  for (const auto& k : registry())
    if (k.name == name) return &k;
  return nullptr;
}

std::string dashed(std::string name) {
  std::replace(name.begin(), name.end(), '_', '-');
  return name;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

class Settings {
 public:
  Settings(std::map<std::string, std::string> values, unsigned groups)
      : values_(std::move(values)), groups_(groups) {}

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(key + ": not available for this command");
    return it->second;
  }
  bool has(const std::string& key) const {
    auto it = values_.find(key);
    return it != values_.end() && !it->second.empty();
  }
  const std::string& required(const std::string& key) const {
    if (!has(key)) throw ConfigError(key + ": required (--" + dashed(key) + " or config file)");
    return str(key);
  }
  double real(const std::string& key) const {
    const std::string& v = str(key);
    try {
      std::size_t used = 0;
      const double x = std::stod(v, &used);
      if (used != v.size() || !std::isfinite(x)) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError(key + ": expected a finite number, got '" + v + "'");
    }
  }
  std::optional<double> real_or_auto(const std::string& key) const {
    if (str(key) == "auto") return std::nullopt;
    return real(key);
  }
  std::uint64_t u64(const std::string& key) const {
    const std::string& v = str(key);
    try {
      std::size_t used = 0;
      if (v.empty() || v[0] == '-') throw std::invalid_argument(v);
      const auto x = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    }
  }
  std::uint64_t u64_or(const std::string& key, std::uint64_t fallback) const {
    return str(key) == "auto" ? fallback : u64(key);
  }
  int integer(const std::string& key) const {
    const std::uint64_t x = u64(key);
    if (x > static_cast<std::uint64_t>(std::numeric_limits<int>::max()))
      throw ConfigError(key + ": value too large");
    return static_cast<int>(x);
  }
  std::size_t count(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }
  std::vector<std::size_t> count_list(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& item : split_csv(str(key))) {
      Settings one({{key, item}}, 0);
      out.push_back(one.count(key));
    }
    return out;
  }
  bool flag(const std::string& key) const {
    const std::string& v = str(key);
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected true|false, got '" + v + "'");
  }

  const std::map<std::string, std::string>& values() const { return values_; }
  unsigned groups() const { return groups_; }

 private:
  std::map<std::string, std::string> values_;
  unsigned groups_;
};

bool in_groups(const Key& k, unsigned groups) { return k.groups == kAlways || (k.groups & groups); }

// Keys excluded from the snapshot: where to write and how many workers, neither
// of which affects results.
bool snapshot_key(const std::string& key) { return key != "out" && key != "threads"; }

void write_snapshot(const fs::path& dir, const std::string& command, const Settings& s,
                    std::ostream& out) {
  std::string text = "# tda resolved configuration for `tda " + command + "`\n";
  text += "# rerun: tda " + command + " --config resolved.cfg --out DIR\n";
  for (const auto& k : registry()) {
    if (!in_groups(k, s.groups()) || !snapshot_key(k.name)) continue;
    text += k.name + " = " + s.str(k.name) + "\n";
  }
  const fs::path path = dir / "resolved.cfg";
  write_text_file(path, text);
  out << "wrote " << path.string() << "\n";
}

// Replaces derived "auto" seeds with concrete values so the snapshot is explicit.
void resolve_seeds(std::map<std::string, std::string>& v) {
  Settings s(v, 0);
  const std::uint64_t seed = s.u64("seed");
  for (const char* key : {"gen_seed", "train_seed", "ihvp_seed", "eval_seed"})
    if (v.count(key) && v[key] == "auto") v[key] = std::to_string(seed);
  if (v.count("random_model_seed") && v["random_model_seed"] == "auto")
    v["random_model_seed"] = std::to_string(seed + 1);
}

GeneratorSpec gen_spec(const Settings& s) {
  GeneratorSpec g;
  g.kind = parse_generator_kind(s.str("gen_kind"));
  g.seed = s.u64("gen_seed");
  g.n = s.count("gen_n");
  g.n_test = s.count("gen_n_test");
  g.d = s.count("gen_dim");
  g.classes = s.integer("gen_classes");
  g.separation = s.real("gen_separation");
  g.artifact_rate = s.real("gen_artifact_rate");
  g.artifact_strength = s.real("gen_artifact_strength");
  if (s.str("gen_artifact_dims") != "auto") g.artifact_dims = s.count_list("gen_artifact_dims");
  g.counter_fraction = s.real("gen_counter_fraction");
  return g;
}

TrainConfig train_config(const Settings& s) {
  TrainConfig t;
  t.lambda = s.real("lambda");
  if (!(t.lambda > 0.0)) throw ConfigError("lambda: must be > 0");
  t.lr = s.real_or_auto("lr");
  t.max_epochs = s.integer("max_epochs");
  t.grad_tol = s.real("grad_tol");
  if (!(t.grad_tol > 0.0)) throw ConfigError("grad_tol: must be > 0");
  t.seed = s.u64("train_seed");
  return t;
}

AttributionConfig attribution_config(const Settings& s, double lambda) {
  AttributionConfig a;
  a.lambda = lambda;
  a.damping = s.real("damping");
  if (a.damping < 0.0) throw ConfigError("damping: must be >= 0");
  a.ihvp.method = parse_ihvp_method(s.str("ihvp_method"));
  a.ihvp.scale = s.real_or_auto("ihvp_scale");
  if (a.ihvp.scale && !(*a.ihvp.scale > 0.0)) throw ConfigError("ihvp_scale: must be > 0");
  a.ihvp.iterations = s.integer("ihvp_iterations");
  a.ihvp.repeats = s.integer("ihvp_repeats");
  if (a.ihvp.repeats < 1) throw ConfigError("ihvp_repeats: must be >= 1");
  if (s.str("ihvp_batch_size") != "auto") {
    a.ihvp.batch_size = s.count("ihvp_batch_size");
    if (*a.ihvp.batch_size == 0) throw ConfigError("ihvp_batch_size: must be >= 1");
  }
  a.ihvp.seed = s.u64("ihvp_seed");
  a.ihvp.tol = s.real("ihvp_tol");
  a.if_sign = s.real("if_sign");
  if (a.if_sign != 1.0 && a.if_sign != -1.0) throw ConfigError("if_sign: must be 1 or -1");
  const std::string& strategy = s.str("if_strategy");
  if (strategy == "cache_train") a.if_strategy = IfStrategy::kCacheTrain;
  else if (strategy == "per_test") a.if_strategy = IfStrategy::kPerTest;
  else throw ConfigError("if_strategy: expected cache_train|per_test, got '" + strategy + "'");
  a.test_label_policy = parse_label_policy(s.str("label_policy"));
  a.eig_floor = s.real("eig_floor");
  a.hessian_cap = s.count("hessian_cap");
  a.threads = static_cast<unsigned>(std::max(1, s.integer("threads")));
  a.ihvp.threads = a.threads;
  return a;
}

ExperimentConfig experiment_config(const Settings& s) {
  ExperimentConfig e;
  e.seed = s.u64("eval_seed");
  e.n_test_sample = s.count("n_test_sample");
  e.n_train_sample = s.count("n_train_sample");
  e.k_remove = s.count_list("k_remove");
  e.n_removal_tests = s.count("n_removal_tests");
  e.n_random_runs = s.count("n_random_runs");
  e.k_top = s.count_list("k_top");
  e.abs_scores = s.flag("abs_scores");
  e.threads = static_cast<unsigned>(std::max(1, s.integer("threads")));
  return e;
}

TimingConfig timing_config(const Settings& s) {
  TimingConfig t;
  t.dims = s.count_list("timing_dims");
  t.n_train = s.count("timing_n_train");
  t.n_test = s.count("timing_n_test");
  t.runs = s.integer("timing_runs");
  t.seed = s.u64("seed");
  return t;
}

std::vector<PerturbKind> perturb_kinds(const Settings& s) {
  std::vector<PerturbKind> out;
  for (const auto& item : split_csv(s.str("perturb_kinds"))) out.push_back(parse_perturb_kind(item));
  return out;
}

std::vector<Method> methods_of(const Settings& s) {
  try {
    return parse_method_list(s.str("methods"));
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    throw ConfigError(what.rfind("methods", 0) == 0 ? what : "methods: " + what);
  }
}

void write_reports(const EvalReport& report, const fs::path& dir, const Settings& s,
                   std::ostream& out) {
  const std::string& fmt = s.str("report_format");
  if (fmt != "json" && fmt != "csv" && fmt != "both")
    throw ConfigError("report_format: expected json|csv|both, got '" + fmt + "'");
  if (fmt != "csv") {
    const fs::path p = dir / (report.experiment + ".json");
    write_report(report, p, ReportFormat::kJson);
    out << "wrote " << p.string() << "\n";
  }
  if (fmt != "json") {
    const fs::path p = dir / (report.experiment + ".csv");
    write_report(report, p, ReportFormat::kCsv);
    out << "wrote " << p.string() << "\n";
  }
}

Dataset load_input(const Settings& s, const std::string& key) {
  const fs::path path = s.required(key);
  if (!fs::exists(path)) throw ConfigError(key + ": file not found: " + path.string());
  return load_dataset(path);
}

void check_pairing(const ModelFile& model, const Dataset& train, const std::string& train_path) {
  const std::string actual = fingerprint(train);
  if (model.dataset_hash != actual)
    throw ConfigError("model: trained on dataset " + model.dataset_hash + " but train (" +
                      train_path + ") hashes to " + actual);
  if (model.params.dim() != train.dim() || model.params.classes() != train.classes())
    throw ConfigError("model: shape does not match train");
}

ModelFile fit(const Dataset& data, const TrainConfig& tcfg, std::ostream& err) {
  const auto result = train(data, tcfg);
  if (!result.converged)
    err << "warning: training stopped at max_epochs=" << tcfg.max_epochs
        << " with ||grad J|| = " << result.grad_norm << " > grad_tol\n";
  ModelFile m;
  m.params = result.params;
  m.train_config = tcfg;
  m.dataset_hash = fingerprint(data);
  m.converged = result.converged;
  m.epochs = result.epochs;
  m.grad_norm = result.grad_norm;
  m.objective = result.objective;
  m.lr = result.lr;
  return m;
}

void attribute_all(const ModelFile& model, const Dataset& train, const Dataset& test,
                   const std::vector<Method>& methods, const AttributionConfig& acfg,
                   const fs::path& dir, std::ostream& out) {
  Attributor att(model.params, train, acfg);
  for (Method m : methods) {
    const auto matrix = att.score(m, test);
    const fs::path p = dir / (std::string(to_string(m)) + ".json");
    save_attribution(matrix, p);
    out << "wrote " << p.string() << "\n";
  }
}

struct EvalInputs {
  const ModelFile* model = nullptr;
  const Dataset* train = nullptr;
  const Dataset* test = nullptr;
};

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {"correlate", "overlap", "removal", "randtest",
                                                 "artifact", "recover", "timing"};
  return names;
}

EvalReport run_experiment(const std::string& name, const Settings& s, const EvalInputs& in) {
  const auto methods = methods_of(s);
  if (name == "timing") {
    const AttributionConfig acfg = attribution_config(s, s.has("lambda") ? s.real("lambda") : 0.05);
    return timing(methods, acfg, timing_config(s));
  }
  const ModelFile& model = *in.model;
  const AttributionConfig acfg = attribution_config(s, model.train_config.lambda);
  const ExperimentConfig ecfg = experiment_config(s);
  if (name == "correlate")
    return correlation_matrix(methods, model.params, *in.train, *in.test, acfg, ecfg);
  if (name == "overlap") return topk_overlap(methods, model.params, *in.train, *in.test, acfg, ecfg);
  if (name == "removal") {
    TrainConfig tcfg = model.train_config;
    tcfg.lr = model.lr;
    return remove_and_retrain(methods, model.params, *in.train, *in.test, tcfg, acfg, ecfg);
  }
  if (name == "randtest")
    return randomized_test(methods, model.params, *in.train, *in.test, acfg, ecfg,
                           s.u64("random_model_seed"));
  if (name == "artifact")
    return artifact_rate(methods, model.params, *in.train, *in.test, s.str("artifact_tag"), acfg, ecfg);
  if (name == "recover")
    return perturb_recover(methods, perturb_kinds(s), model.params, *in.train, acfg, ecfg,
                           s.real("noise_scale"));
  throw ConfigError("experiments: unknown experiment '" + name + "'");
}

struct Command {
  std::string name;  // "gen", "eval removal", ...
  unsigned groups;
  CLI::App* app = nullptr;
  std::map<std::string, std::optional<std::string>> flags;
  std::optional<std::string> config;
};

unsigned eval_groups(const std::string& exp) {
  if (exp == "timing") return kAttr | kTiming;
  if (exp == "recover") return kTrainData | kModel | kAttr | kExp;
  return kTrainData | kTestData | kModel | kAttr | kExp;
}

Settings resolve(const Command& cmd) {
  std::map<std::string, std::string> v;
  for (const auto& k : registry())
    if (in_groups(k, cmd.groups)) v[k.name] = k.def;
  if (cmd.config) {
    const auto file = parse_config_text(read_text_file(*cmd.config), *cmd.config);
    for (const auto& [key, value] : file)
      if (v.count(key)) v[key] = value;
  }
  for (const auto& [key, value] : cmd.flags)
    if (value) v[key] = *value;
  resolve_seeds(v);
  return Settings(std::move(v), cmd.groups);
}

int execute(const Command& cmd, const Settings& s, std::ostream& out, std::ostream& err) {
  const fs::path dir = s.required("out");
  if (cmd.name == "gen") {
    const Corpus corpus = generate(gen_spec(s));
    save_dataset(corpus.train, dir / "train.jsonl");
    save_dataset(corpus.test, dir / "test.jsonl");
    out << "wrote " << (dir / "train.jsonl").string() << "\n";
    out << "wrote " << (dir / "test.jsonl").string() << "\n";
  } else if (cmd.name == "train") {
    const Dataset data = load_input(s, "train");
    const ModelFile model = fit(data, train_config(s), err);
    save_model(model, dir / "model.json");
    out << "wrote " << (dir / "model.json").string() << "\n";
  } else if (cmd.name == "attribute") {
    const Dataset train = load_input(s, "train");
    const Dataset test = load_input(s, "test");
    const ModelFile model = load_model(s.required("model"));
    check_pairing(model, train, s.str("train"));
    attribute_all(model, train, test, methods_of(s),
                  attribution_config(s, model.train_config.lambda), dir, out);
  } else if (cmd.name.rfind("eval ", 0) == 0) {
    const std::string exp = cmd.name.substr(5);
    std::optional<Dataset> train, test;
    std::optional<ModelFile> model;
    EvalInputs in;
    if (cmd.groups & kTrainData) in.train = &train.emplace(load_input(s, "train"));
    if (cmd.groups & kTestData) in.test = &test.emplace(load_input(s, "test"));
    if (cmd.groups & kModel) {
      in.model = &model.emplace(load_model(s.required("model")));
      check_pairing(*model, *train, s.str("train"));
    }
    write_reports(run_experiment(exp, s, in), dir, s, out);
  } else if (cmd.name == "run") {
    Dataset train, test;
    if (s.has("train") || s.has("test")) {
      train = load_input(s, "train");
      test = load_input(s, "test");
    } else {
      Corpus corpus = generate(gen_spec(s));
      save_dataset(corpus.train, dir / "data" / "train.jsonl");
      save_dataset(corpus.test, dir / "data" / "test.jsonl");
      out << "wrote " << (dir / "data").string() << "/{train,test}.jsonl\n";
      train = std::move(corpus.train);
      test = std::move(corpus.test);
    }
    const auto experiments = split_csv(s.str("experiments"));
    for (const auto& e : experiments)
      if (std::find(experiment_names().begin(), experiment_names().end(), e) == experiment_names().end())
        throw ConfigError("experiments: unknown experiment '" + e + "'");
    const auto methods = methods_of(s);
    const ModelFile model = fit(train, train_config(s), err);
    save_model(model, dir / "model.json");
    out << "wrote " << (dir / "model.json").string() << "\n";
    attribute_all(model, train, test, methods, attribution_config(s, model.train_config.lambda),
                  dir / "attributions", out);
    EvalInputs in{&model, &train, &test};
    for (const auto& e : experiments) write_reports(run_experiment(e, s, in), dir / "reports", s, out);
  }
  write_snapshot(dir, cmd.name, s, out);
  return kExitOk;
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& source) {
  std::map<std::string, std::string> out;
  std::stringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    if (!find_key(key))
      throw ConfigError(key + ": unknown configuration key (" + source + ":" + std::to_string(line_no) + ")");
    out[key] = trim(t.substr(eq + 1));
  }
  return out;
}

const std::vector<std::pair<std::string, std::string>>& config_defaults() {
  static const auto defaults = [] {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& k : registry()) out.emplace_back(k.name, k.def);
    return out;
  }();
  return defaults;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"tda: training-data attribution for softmax linear classifiers"};
  app.require_subcommand(1);
  std::vector<std::unique_ptr<Command>> commands;

  auto add = [&](CLI::App* parent, const std::string& name, const std::string& full,
                 const std::string& desc, unsigned groups) {
    auto cmd = std::make_unique<Command>();
    cmd->name = full;
    cmd->groups = groups;
    cmd->app = parent->add_subcommand(name, desc);
    cmd->app->add_option("--config", cmd->config, "flat key = value file; flags override it");
    for (const auto& k : registry()) {
      if (!in_groups(k, groups)) continue;
      std::string help = k.help;
      if (!k.def.empty()) help += " [default: " + k.def + "]";
      cmd->app->add_option("--" + dashed(k.name), cmd->flags[k.name], help);
    }
    commands.push_back(std::move(cmd));
  };

  add(&app, "gen", "gen", "generate synthetic train/test datasets", kGen);
  add(&app, "train", "train", "fit the softmax classifier", kTrainData | kTrain);
  add(&app, "attribute", "attribute", "score every (test, train) pair per method",
      kTrainData | kTestData | kModel | kAttr);
  CLI::App* eval = app.add_subcommand("eval", "run one evaluation experiment");
  eval->require_subcommand(1);
  const std::map<std::string, std::string> eval_desc = {
      {"correlate", "mean Spearman correlation between method pairs"},
      {"overlap", "share of common top-k train instances between method pairs"},
      {"removal", "remove top-k instances, retrain, measure the prediction change"},
      {"randtest", "correlation of scores under the trained and a random model"},
      {"artifact", "share of artifact-tagged instances among the top-k"},
      {"recover", "HIT@k of the original instance for perturbed train targets"},
      {"timing", "per-test scoring cost as the feature dimension doubles"}};
  for (const auto& name : experiment_names())
    add(eval, name, "eval " + name, eval_desc.at(name), eval_groups(name));
  add(&app, "run", "run", "generate (or load), train, attribute and evaluate",
      kGen | kTrainData | kTestData | kTrain | kAttr | kExp | kTiming | kRun);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  const Command* chosen = nullptr;
  for (const auto& c : commands)
    if (c->app->parsed()) chosen = c.get();
  if (!chosen) {
    err << "error: no command given\n";
    return kExitConfig;
  }
  try {
    const Settings s = resolve(*chosen);
    return execute(*chosen, s, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  }
}

}  // namespace tda::cli
