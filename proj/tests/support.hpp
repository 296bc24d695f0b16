#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "tda/data_io.hpp"
#include "tda/model.hpp"
#include "tda/rng.hpp"

namespace tda::testing {

inline Instance make_instance(std::uint64_t id, std::vector<double> features, int label) {
  Instance inst;
  inst.id = id;
  inst.features = Eigen::Map<const Vector>(features.data(), static_cast<Eigen::Index>(features.size()));
  inst.label = label;
  return inst;
}

inline Vector random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
  Vector v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = scale * rng.normal();
  return v;
}

inline Dataset random_dataset(std::size_t n, std::size_t d, int classes, std::uint64_t seed,
                              double scale = 1.0) {
  Rng rng(seed);
  Dataset data(d, classes);
  for (std::size_t i = 0; i < n; ++i) {
    Instance inst;
    inst.id = i;
    inst.features = random_vector(d, rng, scale);
    inst.label = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
    data.add(std::move(inst));
  }
  return data;
}

inline ModelParams random_params(int classes, std::size_t d, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  ModelParams p = ModelParams::zeros(classes, d);
  for (Eigen::Index i = 0; i < p.weights.size(); ++i) p.weights.data()[i] = scale * rng.normal();
  return p;
}

// Central finite differences of loss() over the flattened weights.
inline Vector fd_loss_grad(const ModelParams& params, const Instance& inst, double h = 1e-5) {
  Vector out(static_cast<Eigen::Index>(params.param_count()));
  for (Eigen::Index k = 0; k < out.size(); ++k) {
    ModelParams plus = params, minus = params;
    plus.weights.data()[k] += h;
    minus.weights.data()[k] -= h;
    out(k) = (loss(plus, inst) - loss(minus, inst)) / (2 * h);
  }
  return out;
}

inline Dataset gaussian_train(std::size_t n, std::size_t d, int classes, double mu, std::uint64_t seed) {
  GeneratorSpec spec;
  spec.n = n;
  spec.n_test = 0;
  spec.d = d;
  spec.classes = classes;
  spec.separation = mu;
  spec.seed = seed;
  return gen_gaussian(spec).train;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("tda_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace tda::testing
