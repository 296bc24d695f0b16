#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tda/attributors.hpp"
#include "tda/model.hpp"

namespace tda {

inline constexpr std::string_view kArtifactTag = "artifact";
inline constexpr std::string_view kCounterexampleTag = "counterexample";

enum class GeneratorKind { kGaussian, kArtifact };

std::string_view to_string(GeneratorKind kind);
GeneratorKind parse_generator_kind(std::string_view name);

struct GeneratorSpec {
  GeneratorKind kind = GeneratorKind::kGaussian;
  std::uint64_t seed = 0;
  std::size_t n = 1000;      // train instances
  std::size_t n_test = 200;  // test instances
  std::size_t d = 16;
  int classes = 2;
  double separation = 2.0;  // mu
  // artifact kind only
  double artifact_rate = 0.4;
  double artifact_strength = 4.0;
  std::vector<std::size_t> artifact_dims;  // empty = {d - 1}
  double counter_fraction = 0.5;           // share of the test split
};

struct Corpus {
  Dataset train;
  Dataset test;
};

// Class c (balanced, seeded order) ~ Normal(mu * e_{c mod m}, I) where the
// unit vectors range over the first m = d - |artifact_dims| coordinates
// (m = d for the gaussian kind). Train ids are 0..n-1, test ids n..n+n_test-1.
Corpus gen_gaussian(const GeneratorSpec& spec);

// Two-class corpus with a planted spurious feature. round(rate * n) class-0
// train instances get artifact_dims set to +strength and the "artifact" tag;
// the train tag frequency is therefore rate. A counter_fraction share of the
// test split are class-1 instances carrying the artifact (tags "artifact",
// "counterexample"); the remaining tests follow the train distribution.
// Every instance also gets an untuned view: the features with the artifact
// coordinates replaced by fresh N(0, 1) noise.
Corpus gen_artifact(const GeneratorSpec& spec);

Corpus generate(const GeneratorSpec& spec);

enum class PerturbKind { kIdentity, kAdd, kRemove, kReplace };

std::string_view to_string(PerturbKind kind);
PerturbKind parse_perturb_kind(std::string_view name);

// Per-coordinate statistics of a reference (train) set used by perturb().
struct FeatureStats {
  Vector stddev;
  std::vector<std::vector<double>> columns;  // empirical values per coordinate

  static FeatureStats of(const Dataset& data);
};

// Copy of `inst` with id `new_id` and exactly one coordinate changed:
//   add:     += Normal(0, noise_scale * stddev_k)
//   remove:  a nonzero coordinate set to 0
//   replace: set to a value drawn from that coordinate's empirical column
// identity changes nothing. Label, tags and untuned view are kept.
Instance perturb(const Instance& inst, PerturbKind kind, std::uint64_t seed,
                 const FeatureStats& stats, std::uint64_t new_id, double noise_scale = 0.1);

// JSON Lines dataset files. First line is a header {"dim": d, "classes": C};
// each further line is one record:
//   {"id": 3, "label": 1, "features": [..], "tags": [..], "text": "..",
//    "untuned_features": [..]}
// with "sparse": [[index, value], ...] accepted in place of "features".
Dataset load_dataset(const std::filesystem::path& path);
Dataset parse_dataset(std::string_view text, std::string_view source = "<memory>");
void save_dataset(const Dataset& data, const std::filesystem::path& path);
std::string format_dataset(const Dataset& data);

// FNV-1a 64 over canonical binary content, as 16 hex digits.
std::string fingerprint(const Dataset& data);
std::string fingerprint(const ModelParams& params);

struct ModelFile {
  ModelParams params;
  TrainConfig train_config;
  std::string dataset_hash;
  bool converged = false;
  int epochs = 0;
  double grad_norm = 0.0;
  double objective = 0.0;
  double lr = 0.0;
};

void save_model(const ModelFile& model, const std::filesystem::path& path);
ModelFile load_model(const std::filesystem::path& path);

void save_attribution(const AttributionMatrix& matrix, const std::filesystem::path& path);
AttributionMatrix load_attribution(const std::filesystem::path& path);

void write_text_file(const std::filesystem::path& path, std::string_view content);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace tda
