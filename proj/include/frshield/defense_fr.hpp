#pragma once

// Feature randomization: SVM ensembles trained on random subsets of the
// source network's flatten features, scored under the match (attacker knows
// the indices) and mismatch (attacker draws its own indices) protocols.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "frshield/sample.hpp"
#include "frshield/svm.hpp"

namespace frshield::fr {

inline constexpr std::size_t kEnsembleSize = 50;
inline constexpr double kSecurityThreshold = 0.60;

struct FeatureSubset {
  std::size_t size = 0;
  std::vector<std::size_t> indices;  // strictly increasing, < N
  std::uint64_t seed = 0;
  std::string source_model;

  // Throws InvalidArgument unless the invariants hold for width n.
  void validate(std::size_t n) const;
  bool operator==(const FeatureSubset&) const = default;
};

// `count` uniform draws without replacement of f indices out of n. Draw i uses
// derive_seed(seed, i), so a prefix of a larger draw is stable.
std::vector<FeatureSubset> draw_subsets(std::size_t n, std::size_t f,
                                        std::size_t count = kEnsembleSize,
                                        std::uint64_t seed = 0, const std::string& source = {});

// {5, 10, 30, 50, 200, 400} restricted to sizes below n, then n itself.
std::vector<std::size_t> default_feature_sizes(std::size_t n);

// Per-column min-max scaling to [0, 1] fitted on SVM training features;
// constant columns map to 0. Values outside the fitted range are not clipped.
struct FeatureScaling {
  std::vector<float> lo;
  std::vector<float> hi;

  void apply(FeatureMatrix& features) const;
};

FeatureScaling fit_feature_scaling(const FeatureMatrix& features);

struct FrTrainOptions {
  svm::Grid grid = svm::Grid::standard();
  std::size_t folds = 5;
  // false: grid search on the first subset only and reuse its winner.
  bool grid_per_model = true;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  svm::SmoOptions smo;
};

struct FrEnsemble {
  std::size_t f = 0;
  std::size_t n = 0;
  std::vector<FeatureSubset> subsets;
  std::vector<svm::SvmModel> models;  // model i was trained on subset i
  std::vector<svm::RbfParams> params;
};

FrEnsemble train_fr_ensemble(const FeatureMatrix& features, std::span<const Label> labels,
                             const std::vector<FeatureSubset>& subsets,
                             const FrTrainOptions& options = {});

// Fraction of rows whose prediction equals the label.
double detection_accuracy(const svm::SvmModel& model, const FeatureMatrix& sliced,
                          std::span<const Label> labels);

// Mean over the models of each model's accuracy on its own slice of `features`.
double eval_clean_accuracy(const FrEnsemble& ensemble, const FeatureMatrix& features,
                           std::span<const Label> labels, unsigned jobs = 1);

// Slices `features` (full width) once per subset.
std::vector<FeatureMatrix> slice_files(const FeatureMatrix& features,
                                       const std::vector<FeatureSubset>& subsets);

// Mean of row means of accuracy[model][file].
double mismatch_score(const std::vector<std::vector<double>>& accuracy);
// Mean of the paired accuracies.
double match_score(std::span<const double> paired);

// accuracy[i][j]: model i on file j.
std::vector<std::vector<double>> mismatch_grid(const FrEnsemble& ensemble,
                                               const std::vector<FeatureMatrix>& files,
                                               std::span<const Label> labels, unsigned jobs = 1);

// Attacker files drawn independently of the defender's subsets; one file per model.
double mismatch_index_test(const FrEnsemble& ensemble, const std::vector<FeatureMatrix>& files,
                           std::span<const Label> labels, unsigned jobs = 1);
// File i sliced with subset i.
double match_index_test(const FrEnsemble& ensemble, const std::vector<FeatureMatrix>& files,
                        std::span<const Label> labels, unsigned jobs = 1);

enum class Verdict { Secure, Insecure };
const char* verdict_name(Verdict v) noexcept;
// Secure iff score > 0.60.
Verdict security_verdict(double score);

enum class Protocol { Clean, Mismatch, Match };
const char* protocol_name(Protocol p) noexcept;
Protocol parse_protocol(const std::string& name);

struct ScoreTable {
  Protocol protocol = Protocol::Clean;
  std::vector<std::string> rows;      // attack names (or "clean")
  std::vector<std::size_t> columns;   // feature sizes
  std::vector<double> cells;          // row-major, in [0, 1]

  ScoreTable() = default;
  ScoreTable(Protocol p, std::vector<std::string> row_labels, std::vector<std::size_t> sizes);

  double& at(std::size_t row, std::size_t col);
  double at(std::size_t row, std::size_t col) const;
  void set(const std::string& row, std::size_t f, double score);
  double get(const std::string& row, std::size_t f) const;
  void validate() const;
  bool operator==(const ScoreTable&) const = default;
};

// "Attack Type,5,10,...": one row per attack, scores as percentages with two decimals.
std::string score_table_csv(const ScoreTable& table);
ScoreTable parse_score_table_csv(const std::string& text, Protocol protocol);

// Feature-matrix container "FRSHIELD-FM". `indices` is empty for full-width matrices.
struct FeatureFile {
  FeatureMatrix features;
  std::vector<Label> labels;
  std::vector<std::size_t> indices;
  std::size_t source_width = 0;

  bool operator==(const FeatureFile&) const = default;
};

void save_feature_file(const FeatureFile& file, const std::filesystem::path& path);
FeatureFile load_feature_file(const std::filesystem::path& path);

// Ensemble container "FRSHIELD-FRE": subsets plus embedded SVM models.
void save_ensemble(const FrEnsemble& ensemble, const std::filesystem::path& path);
FrEnsemble load_ensemble(const std::filesystem::path& path);

}  // namespace frshield::fr
