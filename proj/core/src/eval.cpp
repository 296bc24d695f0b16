#include "tda/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "tda/error.hpp"
#include "tda/parallel.hpp"
#include "tda/rng.hpp"

namespace tda {

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j + 1);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

MaybeValue spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("spearman: score vectors differ in length");
  if (a.size() < 2) throw ConfigError("spearman: needs at least two values");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!std::isfinite(a[i]) || !std::isfinite(b[i]))
      throw NumericalError("spearman: non-finite score");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  // Both rank vectors have mean (n + 1) / 2 exactly.
  const double mean = 0.5 * (n + 1.0);
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    const double x = ra[i] - mean;
    const double y = rb[i] - mean;
    cov += x * y;
    va += x * x;
    vb += y * y;
  }
  if (va == 0.0 || vb == 0.0) return std::nullopt;
  return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

double overlap_fraction(const Ranking& a, const Ranking& b, std::size_t k) {
  if (k == 0) throw ConfigError("k_top: k must be >= 1");
  if (k > a.ids.size() || k > b.ids.size()) throw ConfigError("k_top: k exceeds the ranking length");
  std::vector<std::uint64_t> ta(a.ids.begin(), a.ids.begin() + static_cast<std::ptrdiff_t>(k));
  std::vector<std::uint64_t> tb(b.ids.begin(), b.ids.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(ta.begin(), ta.end());
  std::sort(tb.begin(), tb.end());
  std::vector<std::uint64_t> common;
  std::set_intersection(ta.begin(), ta.end(), tb.begin(), tb.end(), std::back_inserter(common));
  return static_cast<double>(common.size()) / static_cast<double>(k);
}

std::vector<std::size_t> sample_sorted(std::size_t n, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  auto idx = rng.sample_indices(n, std::min(count, n));
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace {

// splitmix64 finalizer; derives independent stream seeds from (seed, tags).
std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (a + 1) + 0xbf58476d1ce4e5b9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(std::span<const std::size_t> values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(values[i]);
  }
  return out;
}

std::string join_methods(std::span<const Method> methods) {
  std::string out;
  for (std::size_t i = 0; i < methods.size(); ++i) {
    if (i) out += ",";
    out += to_string(methods[i]);
  }
  return out;
}

void echo_attribution(EvalReport& r, const AttributionConfig& a) {
  r.echo("lambda", num(a.lambda));
  r.echo("damping", num(a.damping));
  r.echo("ihvp_method", std::string(to_string(a.ihvp.method)));
  r.echo("if_sign", num(a.if_sign));
  r.echo("test_label_policy", std::string(to_string(a.test_label_policy)));
  r.echo("eig_floor", num(a.eig_floor));
}

void echo_experiment(EvalReport& r, const ExperimentConfig& c) {
  r.echo("seed", std::to_string(c.seed));
  r.echo("n_test_sample", std::to_string(c.n_test_sample));
  r.echo("n_train_sample", std::to_string(c.n_train_sample));
}

void stamp(EvalReport& r, const ModelParams& model, const Dataset& train, const Dataset* tests) {
  r.fingerprints.emplace_back("model", fingerprint(model));
  r.fingerprints.emplace_back("train", fingerprint(train));
  if (tests) r.fingerprints.emplace_back("tests", fingerprint(*tests));
}

std::vector<double> row_of(const AttributionMatrix& m, std::size_t t, bool abs_scores) {
  std::vector<double> out(static_cast<std::size_t>(m.scores.cols()));
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double v = m.scores(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k));
    out[k] = abs_scores ? std::abs(v) : v;
  }
  return out;
}

void require_methods(std::span<const Method> methods, std::size_t minimum, const char* what) {
  if (methods.size() < minimum) {
    std::ostringstream msg;
    msg << "methods: " << what << " needs at least " << minimum << " method"
        << (minimum == 1 ? "" : "s");
    throw ConfigError(msg.str());
  }
}

void require_tests(const Dataset& tests) {
  if (tests.empty()) throw ConfigError("tests: the test set is empty");
}

std::string pair_key(const char* prefix, Method a, Method b) {
  return std::string(prefix) + "/" + std::string(to_string(a)) + "/" + std::string(to_string(b));
}

double sample_stddev(const std::vector<MaybeValue>& values, double mean) {
  double ss = 0.0;
  std::size_t count = 0;
  for (const auto& v : values)
    if (v) {
      ss += (*v - mean) * (*v - mean);
      ++count;
    }
  return count > 1 ? std::sqrt(ss / static_cast<double>(count - 1)) : 0.0;
}

}  // namespace

EvalReport correlation_matrix(std::span<const Method> methods, const ModelParams& model,
                              const Dataset& train, const Dataset& tests,
                              const AttributionConfig& acfg, const ExperimentConfig& cfg) {
  require_methods(methods, 2, "correlate");
  require_tests(tests);
  const auto test_idx = sample_sorted(tests.size(), cfg.n_test_sample, cfg.seed);
  const auto train_idx = sample_sorted(train.size(), cfg.n_train_sample, mix(cfg.seed, 1));
  if (train_idx.size() < 2) throw ConfigError("n_train_sample: correlate needs >= 2 train instances");
  const Dataset sub = tests.subset(test_idx);

  Attributor att(model, train, acfg);
  std::vector<AttributionMatrix> mats;
  for (Method m : methods) mats.push_back(att.score(m, sub, train_idx));

  EvalReport r;
  r.experiment = "correlate";
  echo_experiment(r, cfg);
  echo_attribution(r, acfg);
  r.echo("methods", join_methods(methods));
  r.echo("abs_scores", cfg.abs_scores ? "1" : "0");
  r.echo("effective_test_sample", std::to_string(test_idx.size()));
  r.echo("effective_train_sample", std::to_string(train_idx.size()));
  stamp(r, model, train, &tests);

  const std::size_t nm = methods.size();
  std::vector<std::vector<std::vector<MaybeValue>>> rho(nm, std::vector<std::vector<MaybeValue>>(nm));
  for (std::size_t a = 0; a < nm; ++a)
    for (std::size_t b = a; b < nm; ++b) {
      std::vector<MaybeValue> per(sub.size());
      parallel_for(sub.size(), cfg.threads, [&](std::size_t t) {
        const auto ra = row_of(mats[a], t, cfg.abs_scores);
        const auto rb = row_of(mats[b], t, cfg.abs_scores);
        per[t] = spearman(ra, rb);
      });
      rho[a][b] = per;
      rho[b][a] = std::move(per);
    }
  for (std::size_t a = 0; a < nm; ++a)
    for (std::size_t b = 0; b < nm; ++b) {
      const auto& per = rho[a][b];
      const auto count = static_cast<double>(
          std::count_if(per.begin(), per.end(), [](const MaybeValue& v) { return v.has_value(); }));
      r.set(pair_key("rho", methods[a], methods[b]), mean_of(per));
      r.set(pair_key("count", methods[a], methods[b]), count);
      r.add_raw(pair_key("rho", methods[a], methods[b]), per);
    }
  return r;
}

EvalReport topk_overlap(std::span<const Method> methods, const ModelParams& model,
                        const Dataset& train, const Dataset& tests,
                        const AttributionConfig& acfg, const ExperimentConfig& cfg) {
  require_methods(methods, 2, "overlap");
  require_tests(tests);
  const auto test_idx = sample_sorted(tests.size(), cfg.n_test_sample, cfg.seed);
  const auto train_idx = sample_sorted(train.size(), cfg.n_train_sample, mix(cfg.seed, 1));
  for (std::size_t k : cfg.k_top)
    if (k == 0 || k > train_idx.size())
      throw ConfigError("k_top: " + std::to_string(k) + " outside [1, " +
                        std::to_string(train_idx.size()) + "]");
  const Dataset sub = tests.subset(test_idx);

  Attributor att(model, train, acfg);
  std::vector<std::vector<Ranking>> rankings;
  for (Method m : methods) {
    const auto mat = att.score(m, sub, train_idx);
    std::vector<Ranking> per(sub.size());
    for (std::size_t t = 0; t < sub.size(); ++t) {
      const auto row = row_of(mat, t, cfg.abs_scores);
      per[t] = rank_scores(mat.train_ids, row);
    }
    rankings.push_back(std::move(per));
  }

  EvalReport r;
  r.experiment = "overlap";
  echo_experiment(r, cfg);
  echo_attribution(r, acfg);
  r.echo("methods", join_methods(methods));
  r.echo("k_top", join(cfg.k_top));
  r.echo("abs_scores", cfg.abs_scores ? "1" : "0");
  stamp(r, model, train, &tests);

  for (std::size_t a = 0; a < methods.size(); ++a)
    for (std::size_t b = 0; b < methods.size(); ++b)
      for (std::size_t k : cfg.k_top) {
        std::vector<MaybeValue> per(sub.size());
        for (std::size_t t = 0; t < sub.size(); ++t)
          per[t] = overlap_fraction(rankings[a][t], rankings[b][t], k);
        const std::string key = pair_key("overlap", methods[a], methods[b]) + "/" + std::to_string(k);
        r.set(key, mean_of(per));
        r.add_raw(key, std::move(per));
      }
  return r;
}

EvalReport remove_and_retrain(std::span<const Method> methods, const ModelParams& model,
                              const Dataset& train, const Dataset& tests,
                              const TrainConfig& tcfg, const AttributionConfig& acfg,
                              const ExperimentConfig& cfg) {
  require_methods(methods, 1, "removal");
  require_tests(tests);
  for (std::size_t k : cfg.k_remove)
    if (k >= train.size())
      throw ConfigError("k_remove: " + std::to_string(k) + " must be < n = " +
                        std::to_string(train.size()));
  TrainConfig rcfg = tcfg;
  if (!rcfg.lr) rcfg.lr = suggest_learning_rate(train, rcfg.lambda);

  const auto test_idx = sample_sorted(tests.size(), cfg.n_removal_tests, cfg.seed);
  const Dataset sub = tests.subset(test_idx);
  const std::size_t nt = sub.size();
  std::vector<int> yhat(nt);
  std::vector<double> before(nt);
  for (std::size_t t = 0; t < nt; ++t) {
    const auto pred = predict(model, sub[t].features);
    yhat[t] = pred.predicted;
    before[t] = pred.probs(pred.predicted);
  }

  // Returns the retrained probabilities of y^ for the listed tests, or
  // nullopt when retraining diverges.
  auto retrain_probs = [&](std::span<const std::size_t> removed,
                           std::span<const std::size_t> which) -> std::optional<std::vector<double>> {
    try {
      const auto fit = tda::train(train.without(removed), rcfg);
      std::vector<double> out;
      for (std::size_t t : which) out.push_back(predict(fit.params, sub[t].features).probs(yhat[t]));
      return out;
    } catch (const NumericalError&) {
      return std::nullopt;
    }
  };

  Attributor att(model, train, acfg);
  struct Unit {
    std::size_t method;
    std::size_t k;
    std::size_t test;
  };
  std::vector<Unit> units;
  std::vector<std::vector<std::size_t>> orders;  // per (method, test): train positions by rank
  for (std::size_t m = 0; m < methods.size(); ++m) {
    const auto mat = att.score(methods[m], sub);
    for (std::size_t t = 0; t < nt; ++t) orders.push_back(rank_order(mat.train_ids, row_of(mat, t, false)));
    for (std::size_t ki = 0; ki < cfg.k_remove.size(); ++ki)
      for (std::size_t t = 0; t < nt; ++t) units.push_back({m, ki, t});
  }

  std::vector<MaybeValue> deltas(units.size());
  parallel_for(units.size(), cfg.threads, [&](std::size_t u) {
    const Unit& unit = units[u];
    const auto& order = orders[unit.method * nt + unit.test];
    const std::size_t k = cfg.k_remove[unit.k];
    const std::vector<std::size_t> removed(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    const std::size_t which[] = {unit.test};
    const auto probs = retrain_probs(removed, which);
    if (probs) deltas[u] = probs->front() - before[unit.test];
  });

  std::vector<std::size_t> all_tests(nt);
  std::iota(all_tests.begin(), all_tests.end(), std::size_t{0});
  const std::size_t runs = cfg.n_random_runs;
  std::vector<MaybeValue> random(cfg.k_remove.size() * runs);
  parallel_for(random.size(), cfg.threads, [&](std::size_t u) {
    const std::size_t ki = u / runs;
    const std::size_t run = u % runs;
    Rng rng(mix(cfg.seed, 2 + ki, run));
    const auto removed = rng.sample_indices(train.size(), cfg.k_remove[ki]);
    const auto probs = retrain_probs(removed, all_tests);
    if (!probs) return;
    double sum = 0.0;
    for (std::size_t t = 0; t < nt; ++t) sum += (*probs)[t] - before[t];
    random[u] = sum / static_cast<double>(nt);
  });

  EvalReport r;
  r.experiment = "removal";
  echo_experiment(r, cfg);
  echo_attribution(r, acfg);
  r.echo("methods", join_methods(methods));
  r.echo("k_remove", join(cfg.k_remove));
  r.echo("n_removal_tests", std::to_string(cfg.n_removal_tests));
  r.echo("n_random_runs", std::to_string(cfg.n_random_runs));
  r.echo("train_lr", num(*rcfg.lr));
  r.echo("train_lambda", num(rcfg.lambda));
  r.echo("train_grad_tol", num(rcfg.grad_tol));
  r.echo("train_max_epochs", std::to_string(rcfg.max_epochs));
  r.echo("train_seed", std::to_string(rcfg.seed));
  stamp(r, model, train, &tests);

  for (std::size_t m = 0; m < methods.size(); ++m)
    for (std::size_t ki = 0; ki < cfg.k_remove.size(); ++ki) {
      std::vector<MaybeValue> per;
      for (std::size_t u = 0; u < units.size(); ++u)
        if (units[u].method == m && units[u].k == ki) per.push_back(deltas[u]);
      const auto failed = std::count_if(per.begin(), per.end(), [](const MaybeValue& v) { return !v; });
      const std::string suffix =
          std::string(to_string(methods[m])) + "/" + std::to_string(cfg.k_remove[ki]);
      r.set("delta/" + suffix, mean_of(per));
      r.set("failed/" + suffix, static_cast<double>(failed));
      r.add_raw("delta/" + suffix, std::move(per));
    }
  for (std::size_t ki = 0; ki < cfg.k_remove.size(); ++ki) {
    std::vector<MaybeValue> per(random.begin() + static_cast<std::ptrdiff_t>(ki * runs),
                                random.begin() + static_cast<std::ptrdiff_t>((ki + 1) * runs));
    const std::string k = std::to_string(cfg.k_remove[ki]);
    const auto mean = mean_of(per);
    const auto present = std::count_if(per.begin(), per.end(), [](const MaybeValue& v) { return v.has_value(); });
    r.set("random_mean/" + k, mean);
    if (mean) {
      const double sd = sample_stddev(per, *mean);
      r.set("random_std/" + k, sd);
      r.set("random_se/" + k, sd / std::sqrt(static_cast<double>(present)));
    } else {
      r.set("random_std/" + k, std::nullopt);
      r.set("random_se/" + k, std::nullopt);
    }
    r.set("random_failed/" + k, static_cast<double>(per.size()) - static_cast<double>(present));
    r.add_raw("random/" + k, std::move(per));
  }
  return r;
}

EvalReport randomized_test(std::span<const Method> methods, const ModelParams& model,
                           const Dataset& train, const Dataset& tests,
                           const AttributionConfig& acfg, const ExperimentConfig& cfg,
                           std::uint64_t random_seed) {
  require_methods(methods, 1, "randtest");
  require_tests(tests);
  const auto test_idx = sample_sorted(tests.size(), cfg.n_test_sample, cfg.seed);
  const auto train_idx = sample_sorted(train.size(), cfg.n_train_sample, mix(cfg.seed, 1));
  if (train_idx.size() < 2) throw ConfigError("n_train_sample: randtest needs >= 2 train instances");
  const Dataset sub = tests.subset(test_idx);
  const ModelParams random_model = ModelParams::random_init(model.classes(), model.dim(), random_seed);

  Attributor trained(model, train, acfg);
  Attributor untrained(random_model, train, acfg);

  EvalReport r;
  r.experiment = "randtest";
  echo_experiment(r, cfg);
  echo_attribution(r, acfg);
  r.echo("methods", join_methods(methods));
  r.echo("random_model_seed", std::to_string(random_seed));
  stamp(r, model, train, &tests);
  r.fingerprints.emplace_back("random_model", fingerprint(random_model));

  for (Method m : methods) {
    const auto a = trained.score(m, sub, train_idx);
    const auto b = untrained.score(m, sub, train_idx);
    std::vector<MaybeValue> per(sub.size());
    parallel_for(sub.size(), cfg.threads, [&](std::size_t t) {
      per[t] = spearman(row_of(a, t, false), row_of(b, t, false));
    });
    const auto count = std::count_if(per.begin(), per.end(), [](const MaybeValue& v) { return v.has_value(); });
    const std::string name(to_string(m));
    r.set("rho/" + name, mean_of(per));
    r.set("count/" + name, static_cast<double>(count));
    r.add_raw("rho/" + name, std::move(per));
  }
  return r;
}

EvalReport artifact_rate(std::span<const Method> methods, const ModelParams& model,
                         const Dataset& train, const Dataset& tests, const std::string& tag,
                         const AttributionConfig& acfg, const ExperimentConfig& cfg) {
  require_methods(methods, 1, "artifact");
  if (train.empty()) throw ConfigError("train: the train set is empty");
  for (std::size_t k : cfg.k_top)
    if (k == 0 || k > train.size())
      throw ConfigError("k_top: " + std::to_string(k) + " outside [1, " + std::to_string(train.size()) + "]");

  const int classes = train.classes();
  std::vector<double> tagged(static_cast<std::size_t>(classes), 0.0);
  std::vector<double> sizes(static_cast<std::size_t>(classes), 0.0);
  std::size_t tagged_total = 0;
  std::vector<char> is_tagged(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto c = static_cast<std::size_t>(train[i].label);
    sizes[c] += 1.0;
    if (train[i].has_tag(tag)) {
      tagged[c] += 1.0;
      is_tagged[i] = 1;
      ++tagged_total;
    }
  }
  int aligned = 0;
  double best = -1.0;
  for (int c = 0; c < classes; ++c) {
    const auto uc = static_cast<std::size_t>(c);
    const double share = sizes[uc] > 0 ? tagged[uc] / sizes[uc] : 0.0;
    if (share > best) {
      best = share;
      aligned = c;
    }
  }
  const double base_rate = static_cast<double>(tagged_total) / static_cast<double>(train.size());

  std::vector<std::size_t> wrong;
  for (std::size_t t = 0; t < tests.size(); ++t)
    if (tests[t].label != aligned && predict(model, tests[t].features).predicted == aligned)
      wrong.push_back(t);

  EvalReport r;
  r.experiment = "artifact";
  r.echo("seed", std::to_string(cfg.seed));
  echo_attribution(r, acfg);
  r.echo("methods", join_methods(methods));
  r.echo("k_top", join(cfg.k_top));
  r.echo("tag", tag);
  stamp(r, model, train, &tests);
  r.set("base_rate", base_rate);
  r.set("aligned_class", static_cast<double>(aligned));
  r.set("mispredicted", static_cast<double>(wrong.size()));
  if (wrong.empty()) {
    r.status = "empty";
    return r;
  }
  const Dataset sub = tests.subset(wrong);

  auto share_of = [&](const std::vector<std::size_t>& order, std::size_t k) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < k; ++i) hits += is_tagged[order[i]];
    return static_cast<double>(hits) / static_cast<double>(k);
  };

  Attributor att(model, train, acfg);
  const auto train_ids = train.ids();
  for (Method m : methods) {
    const auto mat = att.score(m, sub);
    std::vector<std::vector<std::size_t>> orders(sub.size());
    parallel_for(sub.size(), cfg.threads,
                 [&](std::size_t t) { orders[t] = rank_order(mat.train_ids, row_of(mat, t, false)); });
    for (std::size_t k : cfg.k_top) {
      std::vector<MaybeValue> per(sub.size());
      for (std::size_t t = 0; t < sub.size(); ++t) per[t] = share_of(orders[t], k);
      const std::string key = "rate/" + std::string(to_string(m)) + "/" + std::to_string(k);
      r.set(key, mean_of(per));
      r.add_raw(key, std::move(per));
    }
  }
  std::vector<std::vector<std::size_t>> random_orders(sub.size());
  for (std::size_t t = 0; t < sub.size(); ++t) {
    Rng rng(mix(cfg.seed, 3, t));
    random_orders[t] = rng.sample_indices(train.size(), train.size());
  }
  for (std::size_t k : cfg.k_top) {
    std::vector<MaybeValue> per(sub.size());
    for (std::size_t t = 0; t < sub.size(); ++t) per[t] = share_of(random_orders[t], k);
    const std::string key = "rate/RANDOM/" + std::to_string(k);
    r.set(key, mean_of(per));
    r.add_raw(key, std::move(per));
  }
  return r;
}

EvalReport perturb_recover(std::span<const Method> methods, std::span<const PerturbKind> kinds,
                           const ModelParams& model, const Dataset& train,
                           const AttributionConfig& acfg, const ExperimentConfig& cfg,
                           double noise_scale) {
  require_methods(methods, 1, "recover");
  if (kinds.empty()) throw ConfigError("perturb_kinds: at least one kind is required");
  if (train.empty()) throw ConfigError("train: the train set is empty");
  for (std::size_t k : cfg.k_top)
    if (k == 0 || k > train.size())
      throw ConfigError("k_top: " + std::to_string(k) + " outside [1, " + std::to_string(train.size()) + "]");

  const auto targets = sample_sorted(train.size(), cfg.n_test_sample, cfg.seed);
  const FeatureStats stats = FeatureStats::of(train);
  std::uint64_t max_id = 0;
  for (const auto& inst : train) max_id = std::max(max_id, inst.id);

  EvalReport r;
  r.experiment = "recover";
  echo_experiment(r, cfg);
  echo_attribution(r, acfg);
  r.echo("methods", join_methods(methods));
  r.echo("k_top", join(cfg.k_top));
  r.echo("noise_scale", num(noise_scale));
  std::string kind_list;
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    if (i) kind_list += ",";
    kind_list += to_string(kinds[i]);
  }
  r.echo("perturb_kinds", kind_list);
  stamp(r, model, train, nullptr);

  Attributor att(model, train, acfg);
  for (std::size_t ki = 0; ki < kinds.size(); ++ki) {
    Dataset probes(train.dim(), train.classes());
    for (std::size_t i = 0; i < targets.size(); ++i)
      probes.add(perturb(train[targets[i]], kinds[ki], mix(cfg.seed, 4 + ki, i), stats,
                         max_id + 1 + i, noise_scale));
    const std::string kind(to_string(kinds[ki]));
    for (Method m : methods) {
      const auto mat = att.score(m, probes);
      std::vector<MaybeValue> position(targets.size());
      parallel_for(targets.size(), cfg.threads, [&](std::size_t t) {
        const auto order = rank_order(mat.train_ids, row_of(mat, t, false));
        const auto it = std::find(order.begin(), order.end(), targets[t]);
        position[t] = static_cast<double>(it - order.begin()) + 1.0;
      });
      const std::string name(to_string(m));
      for (std::size_t k : cfg.k_top) {
        std::vector<MaybeValue> hit(targets.size());
        for (std::size_t t = 0; t < targets.size(); ++t)
          hit[t] = *position[t] <= static_cast<double>(k) ? 1.0 : 0.0;
        const std::string key = "hit/" + name + "/" + kind + "/" + std::to_string(k);
        r.set(key, mean_of(hit));
        r.add_raw(key, std::move(hit));
      }
      r.add_raw("rank/" + name + "/" + kind, std::move(position));
    }
  }
  return r;
}

}  // namespace tda
