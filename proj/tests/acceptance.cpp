// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "support.hpp"
#include "tda/attributors.hpp"
#include "tda/data_io.hpp"
#include "tda/eval.hpp"
#include "tda/hessian.hpp"
#include "tda/model.hpp"
#include "tda/parallel.hpp"

using namespace tda;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

struct Summary {
  int failed = 0;
};

template <class Fn>
void criterion(Summary& summary, int id, const char* title, Fn&& body) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail << " [exception: " << e.what() << "]";
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++summary.failed;
  std::printf("%s criterion %d (%s):%s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, title,
              o.detail.str().c_str(), secs);
  std::fflush(stdout);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

Corpus gaussian(std::size_t n, std::size_t n_test, std::size_t d, int classes, std::uint64_t seed) {
  GeneratorSpec spec;
  spec.n = n;
  spec.n_test = n_test;
  spec.d = d;
  spec.classes = classes;
  spec.seed = seed;
  return gen_gaussian(spec);
}

// Model shared by criteria 2-4: gen_gaussian(n=500, d=16, C=2), lambda 0.05.
struct Stationary {
  Corpus corpus;
  TrainConfig tcfg;
  TrainResult fit;
};

const Stationary& stationary() {
  static const Stationary s = [] {
    Stationary out;
    out.corpus = gaussian(500, 100, 16, 2, 0);
    out.tcfg.lambda = 0.05;
    out.tcfg.grad_tol = 1e-10;
    out.tcfg.max_epochs = 500000;
    out.fit = train(out.corpus.train, out.tcfg);
    return out;
  }();
  return s;
}

void exactness(Outcome& o) {
  Rng rng(11);
  double worst_grad = 0.0;
  for (int draw = 0; draw < 100; ++draw) {
    const int classes = 2 + draw % 3;
    const std::size_t d = 1 + static_cast<std::size_t>(draw % 6);
    const auto params = tda::testing::random_params(classes, d, 1000 + draw, 1.0);
    Instance inst = tda::testing::make_instance(0, {}, 0);
    inst.features = tda::testing::random_vector(d, rng);
    inst.label = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
    const Vector g = grad(params, inst, LabelPolicy::kGold);
    worst_grad = std::max(worst_grad, (g - tda::testing::fd_loss_grad(params, inst)).cwiseAbs().maxCoeff());
  }
  double worst_h = 0.0;
  for (int draw = 0; draw < 5; ++draw) {
    const int classes = 2 + draw % 2;
    const auto data = tda::testing::random_dataset(40, 4, classes, 50 + draw);
    const auto params = tda::testing::random_params(classes, 4, 60 + draw, 0.5);
    const Matrix h = exact_hessian(params, data, 0.05, 0.01);
    const auto p = static_cast<Eigen::Index>(params.param_count());
    const double step = 1e-5;
    for (Eigen::Index k = 0; k < p; ++k) {
      ModelParams plus = params, minus = params;
      plus.weights.data()[k] += step;
      minus.weights.data()[k] -= step;
      const ParamMatrix gp = objective_gradient(plus, data, 0.05);
      const ParamMatrix gm = objective_gradient(minus, data, 0.05);
      for (Eigen::Index j = 0; j < p; ++j) {
        const double fd = (gp.data()[j] - gm.data()[j]) / (2 * step) + (j == k ? 0.01 : 0.0);
        worst_h = std::max(worst_h, std::abs(fd - h(j, k)));
      }
    }
  }
  o.detail << " max|grad - fd| = " << fmt(worst_grad) << ", max|H - fd| = " << fmt(worst_h);
  o.check(worst_grad <= 1e-6, "grad tolerance 1e-6");
  o.check(worst_h <= 1e-5, "hessian tolerance 1e-5");
}

void representer(Outcome& o) {
  const auto& s = stationary();
  const auto rw = representer_alphas(s.fit.params, s.corpus.train, s.tcfg.lambda, 1e-10);
  double worst = 0.0;
  for (std::size_t t = 0; t < 50; ++t) {
    const Instance& test = s.corpus.test[t];
    const Vector taug = augment(test.features);
    Vector recon = Vector::Zero(2);
    for (std::size_t i = 0; i < s.corpus.train.size(); ++i)
      for (int c = 0; c < 2; ++c)
        recon(c) += score_rep(rw.alpha.row(static_cast<Eigen::Index>(i)).transpose(),
                              augment(s.corpus.train[i].features), taug, c);
    const Vector logits = predict(s.fit.params, test.features).logits;
    worst = std::max(worst, (recon - logits).norm() / logits.norm());
  }
  o.detail << " grad norm = " << fmt(s.fit.grad_norm) << " after " << s.fit.epochs
           << " epochs, max relative logit error = " << fmt(worst);
  o.check(s.fit.grad_norm <= 1e-10, "stationarity 1e-10");
  o.check(worst <= 1e-4, "reconstruction 1e-4");
}

void lissa_fidelity(Outcome& o) {
  const auto& s = stationary();
  HessianOperator op(s.fit.params, s.corpus.train, s.tcfg.lambda, 0.01);
  const DirectSolver direct(op);
  IhvpConfig cfg;
  cfg.method = IhvpMethod::kLissa;
  cfg.iterations = 1000;
  cfg.repeats = 4;
  cfg.batch_size = 32;
  cfg.scale = 10 * spectral_norm_estimate(op);
  Rng rng(21);
  std::vector<double> errs;
  double worst_cg = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Vector v = tda::testing::random_vector(op.size(), rng);
    const Vector exact = direct.solve(v);
    cfg.seed = static_cast<std::uint64_t>(1000 * t);
    errs.push_back((lissa(op, v, cfg) - exact).norm() / exact.norm());
    const auto cg = conjugate_gradient(op, v, 1e-8, 10000);
    worst_cg = std::max(worst_cg, (op.apply(cg.x) - v).norm() / v.norm());
  }
  const double worst = *std::max_element(errs.begin(), errs.end());
  o.detail << " sigma = " << fmt(*cfg.scale) << ", lissa relative error max = " << fmt(worst)
           << " median = " << fmt(median(errs)) << ", cg round-trip max = " << fmt(worst_cg);
  o.check(worst <= 1e-2, "lissa 1e-2 on all 20 right-hand sides");
  o.check(worst_cg <= 1e-8, "cg tol 1e-8");
}

void if_vs_loo(Outcome& o) {
  const auto& s = stationary();
  const Dataset& train = s.corpus.train;
  TrainConfig tcfg = s.tcfg;
  tcfg.lr = s.fit.lr;
  const auto candidates = sample_sorted(train.size(), 100, 41);
  std::vector<ModelParams> loo(candidates.size());
  parallel_for(candidates.size(), 4, [&](std::size_t c) {
    const std::vector<std::size_t> drop{candidates[c]};
    loo[c] = tda::train(train.without(drop), tcfg).params;
  });
  AttributionConfig acfg;
  acfg.lambda = s.tcfg.lambda;
  const auto test_idx = sample_sorted(s.corpus.test.size(), 10, 42);
  const Dataset tests = s.corpus.test.subset(test_idx);
  Attributor att(s.fit.params, train, acfg);
  const auto scores = att.score(Method::kIf, tests, candidates);
  AttributionConfig undamped = acfg;
  undamped.damping = 0.0;
  const auto scores0 = Attributor(s.fit.params, train, undamped).score(Method::kIf, tests, candidates);
  std::vector<double> rhos, rhos0;
  for (std::size_t t = 0; t < tests.size(); ++t) {
    const double base = loss(s.fit.params, tests[t]);
    std::vector<double> actual(candidates.size()), predicted(candidates.size()), predicted0(candidates.size());
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      actual[c] = loss(loo[c], tests[t]) - base;
      predicted[c] = scores.scores(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c));
      predicted0[c] = scores0.scores(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c));
    }
    rhos.push_back(spearman(predicted, actual).value_or(0.0));
    rhos0.push_back(spearman(predicted0, actual).value_or(0.0));
  }
  const double med = median(rhos);
  o.detail << " median Spearman(IF, loo loss change) = " << fmt(med)
           << ", min = " << fmt(*std::min_element(rhos.begin(), rhos.end()))
           << "; with damping 0: median = " << fmt(median(rhos0));
  o.check(med >= 0.9, "median Spearman 0.9");
}

void degeneracies(Outcome& o) {
  const Corpus c = gaussian(200, 40, 6, 3, 3);
  const auto model = train(c.train, TrainConfig{}).params;
  AttributionConfig ident;
  ident.isotropic_hessian = 1.0;
  const bool if_gd = attribute(Method::kIf, model, c.train, c.test, ident).scores ==
                     attribute(Method::kGd, model, c.train, c.test, ident).scores;
  AttributionConfig iso;
  iso.isotropic_hessian = 2.5;
  const double rif_gc = (attribute(Method::kRif, model, c.train, c.test, iso).scores -
                         attribute(Method::kGc, model, c.train, c.test, iso).scores)
                            .cwiseAbs()
                            .maxCoeff();
  Dataset utrain(6, 3), utests(6, 3);
  for (const auto& inst : c.train) {
    Instance u = inst;
    u.features.normalize();
    utrain.add(std::move(u));
  }
  for (const auto& inst : c.test) {
    Instance u = inst;
    u.features.normalize();
    utests.add(std::move(u));
  }
  const auto euc = attribute(Method::kNnEuc, model, utrain, utests, {});
  const auto cos = attribute(Method::kNnCos, model, utrain, utests, {});
  std::size_t same = 0;
  for (auto id : euc.test_ids) same += rank(euc, id).ids == rank(cos, id).ids;
  o.detail << " IF == GD exactly: " << (if_gd ? "yes" : "no") << ", max|RIF - GC| = " << fmt(rif_gc)
           << ", identical EUC/COS rankings: " << same << "/" << euc.test_ids.size();
  o.check(if_gd, "IF = GD under identity Hessian");
  o.check(rif_gc <= 1e-12, "RIF = GC under isotropic Hessian");
  o.check(same == euc.test_ids.size(), "NN rankings on unit features");
}

void removal(Outcome& o) {
  const Corpus c = gaussian(1000, 200, 16, 2, 0);
  TrainConfig tcfg;
  const auto fit = train(c.train, tcfg);
  tcfg.lr = fit.lr;
  ExperimentConfig cfg;
  cfg.k_remove = {0, 100};
  cfg.threads = 4;
  AttributionConfig acfg;
  acfg.threads = 4;
  const std::vector<Method> methods(kAllMethods.begin(), kAllMethods.end());
  const EvalReport r = remove_and_retrain(methods, fit.params, c.train, c.test, tcfg, acfg, cfg);
  const double mean = *r.get("random_mean/100"), se = *r.get("random_se/100");
  const double threshold = mean - 2 * se;
  o.detail << " random k=100 mean = " << fmt(mean) << " sd = " << fmt(*r.get("random_std/100"))
           << " se = " << fmt(se) << ";";
  for (Method m : methods) {
    const std::string name(to_string(m));
    const auto d100 = r.get("delta/" + name + "/100");
    o.detail << " " << name << " " << (d100 ? fmt(*d100) : "null");
    o.check(d100 && *d100 < threshold, name + " below random mean - 2 se");
    const auto* zero = r.raw_values("delta/" + name + "/0");
    bool all_zero = zero && !zero->empty();
    if (zero)
      for (const auto& v : *zero) all_zero = all_zero && v && *v == 0.0;
    o.check(all_zero, name + " k=0 delta exactly 0");
  }
}

void randomized(Outcome& o) {
  std::vector<double> gc_abs, gc_gold;
  std::map<std::string, std::vector<double>> per_method;
  const std::vector<Method> methods(kAllMethods.begin(), kAllMethods.end());
  bool untuned_one = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Corpus c = gaussian(1000, 200, 64, 2, seed);
    TrainConfig tcfg;
    tcfg.seed = seed;
    tcfg.grad_tol = 1e-6;
    const auto model = train(c.train, tcfg).params;
    ExperimentConfig cfg;
    cfg.seed = seed;
    cfg.threads = 4;
    AttributionConfig acfg;
    acfg.threads = 4;
    acfg.test_label_policy = LabelPolicy::kPredicted;
    const EvalReport r = randomized_test(methods, model, c.train, c.test, acfg, cfg, 1000 + seed);
    for (Method m : methods) {
      const std::string name(to_string(m));
      const auto rho = r.get("rho/" + name);
      per_method[name].push_back(rho ? *rho : std::nan(""));
    }
    for (const char* u : {"rho/NN_EUC_UNTUNED", "rho/NN_COS_UNTUNED", "rho/NN_DOT_UNTUNED"})
      untuned_one = untuned_one && r.get(u) && *r.get(u) == 1.0;
    const auto gc = r.get("rho/GC");
    gc_abs.push_back(gc ? std::abs(*gc) : 1.0);
    acfg.test_label_policy = LabelPolicy::kGold;
    const std::vector<Method> gc_only{Method::kGc};
    const auto g = randomized_test(gc_only, model, c.train, c.test, acfg, cfg, 1000 + seed).get("rho/GC");
    gc_gold.push_back(g ? std::abs(*g) : std::nan(""));
  }
  o.detail << " label policy predicted; median rho:";
  for (Method m : methods) {
    const std::string name(to_string(m));
    o.detail << " " << name << " " << fmt(median(per_method[name]));
  }
  o.detail << "; median |rho_GC| = " << fmt(median(gc_abs))
           << " (gold policy, report only: " << fmt(median(gc_gold)) << ")";
  o.check(untuned_one, "UNTUNED rho exactly 1.0");
  o.check(median(gc_abs) <= 0.2, "median |rho_GC| <= 0.2");
}

void artifact(Outcome& o) {
  GeneratorSpec spec;
  spec.kind = GeneratorKind::kArtifact;
  spec.n = 1000;
  spec.n_test = 400;
  spec.artifact_rate = 0.4;
  spec.artifact_strength = 4.0;
  const Corpus c = gen_artifact(spec);
  const auto model = train(c.train, TrainConfig{}).params;
  const std::vector<Method> methods(kAllMethods.begin(), kAllMethods.end());
  AttributionConfig acfg;
  acfg.threads = 4;
  acfg.test_label_policy = LabelPolicy::kPredicted;
  ExperimentConfig cfg;
  cfg.threads = 4;
  const EvalReport r = artifact_rate(methods, model, c.train, c.test, "artifact", acfg, cfg);
  acfg.test_label_policy = LabelPolicy::kGold;
  const EvalReport gold = artifact_rate(methods, model, c.train, c.test, "artifact", acfg, cfg);
  const double mis = *r.get("mispredicted"), random = *r.get("rate/RANDOM/1");
  o.detail << " mispredicted = " << mis << ", base = " << fmt(*r.get("base_rate"))
           << ", random top-1 = " << fmt(random) << "; top-1 (predicted policy):";
  for (Method m : methods) {
    const std::string name(to_string(m));
    o.detail << " " << name << " " << fmt(*r.get("rate/" + name + "/1"));
  }
  o.detail << "; gold policy (report only):";
  for (Method m : {Method::kIf, Method::kRif, Method::kGd, Method::kGc})
    o.detail << " " << to_string(m) << " " << fmt(*gold.get("rate/" + std::string(to_string(m)) + "/1"));
  o.check(mis >= 100, ">= 100 mispredicted tests");
  for (Method m : {Method::kNnEuc, Method::kNnCos, Method::kRif, Method::kGc}) {
    const double v = *r.get("rate/" + std::string(to_string(m)) + "/1");
    o.check(v >= 0.45 && v >= random, std::string(to_string(m)) + " >= 0.45 and >= random");
  }
}

void recovery(Outcome& o) {
  const Corpus c = gaussian(1000, 0, 16, 2, 0);
  const auto fit = train(c.train, TrainConfig{});
  const std::vector<Method> methods{Method::kNnEuc, Method::kNnCos, Method::kRif, Method::kGc,
                                    Method::kIf, Method::kGd, Method::kRep};
  const std::vector<PerturbKind> kinds{PerturbKind::kIdentity, PerturbKind::kAdd,
                                       PerturbKind::kRemove, PerturbKind::kReplace};
  AttributionConfig acfg;
  acfg.threads = 4;
  ExperimentConfig cfg;
  cfg.threads = 4;
  const EvalReport r = perturb_recover(methods, kinds, fit.params, c.train, acfg, cfg);
  o.detail << " stationary: " << (fit.converged ? "yes" : "no") << " (grad norm " << fmt(fit.grad_norm)
           << "); HIT@1 identity/add/remove/replace:";
  for (Method m : methods) {
    const std::string name(to_string(m));
    o.detail << " " << name;
    for (const char* k : {"identity", "add", "remove", "replace"})
      o.detail << (std::string(k) == "identity" ? " " : "/") << fmt(*r.get("hit/" + name + "/" + k + "/1"));
  }
  o.check(fit.converged, "stationary model");
  o.check(*r.get("hit/NN_EUC/identity/1") == 1.0, "NN_EUC HIT@1 = 1");
  o.check(*r.get("hit/NN_COS/identity/1") == 1.0, "NN_COS HIT@1 = 1");
  o.check(*r.get("hit/RIF/identity/1") >= 0.9, "RIF HIT@1 >= 0.9");
  o.check(*r.get("hit/GC/identity/1") >= 0.9, "GC HIT@1 >= 0.9");
}

void complexity(Outcome& o) {
  TimingConfig tc;
  tc.dims = {64, 128, 256};
  tc.n_train = 100;
  tc.n_test = 200;
  tc.runs = 5;
  const std::vector<Method> methods{Method::kNnEuc, Method::kNnCos, Method::kNnDot, Method::kIf};
  const EvalReport r = timing(methods, {}, tc);
  o.detail << " ratios (128/64, 256/128):";
  for (Method m : methods) {
    const std::string name(to_string(m));
    const bool is_if = m == Method::kIf;
    o.detail << " " << name;
    for (const char* d : {"128", "256"}) {
      const double ratio = *r.get("ratio/" + name + "/" + d);
      o.detail << " " << fmt(ratio);
      if (is_if)
        o.check(ratio >= 2.5 && ratio <= 8.0, name + " ratio at d=" + d + " in [2.5, 8]");
      else
        o.check(ratio >= 1.2 && ratio <= 3.5, name + " ratio at d=" + d + " in [1.2, 3.5]");
    }
  }
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_text_file(e.path());
  return files;
}

void determinism(Outcome& o) {
  tda::testing::TempDir dir("acceptance_determinism");
  std::ostringstream out, err;
  const std::string first = (dir.path() / "first").string();
  int code = tda::cli::run({"run", "--seed", "3", "--out", first}, out, err);
  o.check(code == 0, "initial run: " + err.str());
  if (code != 0) return;
  const std::string snapshot = (dir.path() / "first" / "resolved.cfg").string();
  std::size_t compared = 0, differing = 0;
  const auto reference = tree(first);
  for (const char* threads : {"1", "4"}) {
    const std::string again = (dir.path() / (std::string("threads") + threads)).string();
    code = tda::cli::run({"run", "--config", snapshot, "--threads", threads, "--out", again}, out, err);
    o.check(code == 0, std::string("rerun at threads ") + threads + ": " + err.str());
    if (code != 0) return;
    const auto files = tree(again);
    o.check(files.size() == reference.size(), "same file set");
    for (const auto& [name, content] : reference) {
      if (name.find("timing") != std::string::npos) continue;
      ++compared;
      const auto it = files.find(name);
      if (it == files.end() || it->second != content) {
        ++differing;
        o.check(false, name + " differs at threads " + threads);
      }
    }
  }
  o.detail << " compared " << compared << " files across reruns at threads 1 and 4, "
           << differing << " differ";
}

}  // namespace

int main() {
  Summary summary;
  criterion(summary, 1, "gradient/Hessian exactness", exactness);
  criterion(summary, 2, "representer identity", representer);
  criterion(summary, 3, "LiSSA fidelity", lissa_fidelity);
  criterion(summary, 4, "IF vs leave-one-out", if_vs_loo);
  criterion(summary, 5, "degeneracies", degeneracies);
  criterion(summary, 6, "removal directionality", removal);
  criterion(summary, 7, "randomized test", randomized);
  criterion(summary, 8, "artifact surfacing", artifact);
  criterion(summary, 9, "recovery", recovery);
  criterion(summary, 10, "complexity scaling", complexity);
  criterion(summary, 11, "determinism", determinism);
  std::printf("%d of 11 criteria failed\n", summary.failed);
  return summary.failed == 0 ? 0 : 1;
}
