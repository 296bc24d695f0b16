#include <algorithm>
#include <chrono>

#include "tda/eval.hpp"
#include "tda/error.hpp"

namespace tda {

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

EvalReport timing(std::span<const Method> methods, const AttributionConfig& acfg,
                  const TimingConfig& cfg) {
  EvalReport r;
  r.experiment = "timing";
  std::string dims;
  for (std::size_t i = 0; i < cfg.dims.size(); ++i) {
    if (i) dims += ",";
    dims += std::to_string(cfg.dims[i]);
  }
  r.echo("dims", dims);
  r.echo("n_train", std::to_string(cfg.n_train));
  r.echo("n_test", std::to_string(cfg.n_test));
  r.echo("classes", std::to_string(cfg.classes));
  r.echo("runs", std::to_string(cfg.runs));
  r.echo("seed", std::to_string(cfg.seed));
  if (cfg.n_test == 0 || methods.empty() || cfg.dims.empty()) {
    r.status = "empty";
    return r;
  }
  if (cfg.runs < 1) throw ConfigError("timing_runs: must be >= 1");
  if (cfg.n_train < 1) throw ConfigError("timing_n_train: must be >= 1");

  AttributionConfig a = acfg;
  a.if_strategy = IfStrategy::kPerTest;
  a.ihvp.method = IhvpMethod::kDirect;
  a.threads = 1;

  std::vector<std::vector<double>> per_dim(methods.size());
  for (std::size_t di = 0; di < cfg.dims.size(); ++di) {
    const std::size_t d = cfg.dims[di];
    GeneratorSpec spec;
    spec.seed = cfg.seed;
    spec.n = cfg.n_train;
    spec.n_test = cfg.n_test;
    spec.d = d;
    spec.classes = cfg.classes;
    spec.separation = 2.0;
    const Corpus corpus = gen_gaussian(spec);
    // Scoring cost does not depend on convergence, so an untrained model is used.
    const ModelParams model = ModelParams::random_init(cfg.classes, d, cfg.seed);
    Attributor att(model, corpus.train, a);
    for (std::size_t m = 0; m < methods.size(); ++m) {
      att.prepare(methods[m]);
      (void)att.score(methods[m], corpus.test);
      std::vector<MaybeValue> raw;
      std::vector<double> times;
      for (int run = 0; run < cfg.runs; ++run) {
        const auto start = std::chrono::steady_clock::now();
        const auto mat = att.score(methods[m], corpus.test);
        const auto stop = std::chrono::steady_clock::now();
        const double per_test =
            std::chrono::duration<double>(stop - start).count() / static_cast<double>(cfg.n_test);
        times.push_back(per_test);
        raw.emplace_back(per_test);
      }
      const std::string key = std::string(to_string(methods[m])) + "/" + std::to_string(d);
      const double med = median(times);
      r.set("seconds/" + key, med);
      r.add_raw("seconds/" + key, std::move(raw));
      r.set("p/" + key, static_cast<double>(model.param_count()));
      if (di > 0) r.set("ratio/" + key, med / per_dim[m].back());
      per_dim[m].push_back(med);
    }
  }
  return r;
}

}  // namespace tda
