#pragma once

// RBF support vector classifier trained by SMO, plus k-fold grid search.
// Labels map pristine -> +1, manipulated -> -1; a decision value of exactly 0
// is classified pristine.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "frshield/binio.hpp"
#include "frshield/sample.hpp"

namespace frshield::svm {

struct RbfParams {
  double C = 1.0;
  double gamma = 1.0;

  void validate() const;
  bool operator==(const RbfParams&) const = default;
};

double rbf_kernel(std::span<const float> x, std::span<const float> y, double gamma);

inline int label_sign(Label l) noexcept { return l == Label::Pristine ? 1 : -1; }

struct SmoOptions {
  double tol = 1e-3;             // maximal KKT violation at convergence
  std::size_t max_iter = 0;      // 0: max(10^6, 100 n)
  std::uint64_t seed = 0;        // scan order used to break working-pair ties
  std::size_t cache_mb = 256;    // kernel row cache
};

struct SvmModel {
  RbfParams params;
  std::size_t dim = 0;
  FeatureMatrix support;          // one support vector per row
  std::vector<double> coef;       // alpha_i * y_i
  double bias = 0.0;
  double objective = 0.0;         // dual objective 1/2 a'Qa - sum a (minimized)
  std::size_t iterations = 0;
  double kkt_gap = 0.0;

  double decision(std::span<const float> x) const;
};

// Throws Data on single-class input, Convergence (with the remaining KKT gap)
// when max_iter is exhausted.
SvmModel train_smo(const FeatureMatrix& features, std::span<const Label> labels,
                   const RbfParams& params, const SmoOptions& options = {});

std::vector<double> decision_values(const SvmModel& model, const FeatureMatrix& features);
std::vector<Label> svm_predict(const SvmModel& model, const FeatureMatrix& features);
Label predict_one(const SvmModel& model, std::span<const float> x);

struct Grid {
  std::vector<double> C;
  std::vector<double> gamma;

  // C in 2^{-3,-1,1,3,5,7}, gamma in 2^{-7,-5,-3,-1,1}.
  static Grid standard();
};

struct GridSearchResult {
  RbfParams best;
  std::vector<double> accuracy;  // mean fold accuracy, row-major [C][gamma]
};

// Fold id per sample: classes are shuffled separately and dealt round-robin.
std::vector<std::size_t> stratified_folds(std::span<const Label> labels, std::size_t k,
                                          std::uint64_t seed);

// Picks the grid point with the best mean k-fold accuracy; ties go to the
// smaller C, then the smaller gamma. Cells run in parallel on `jobs` threads.
GridSearchResult grid_search_cv(const FeatureMatrix& features, std::span<const Label> labels,
                                const Grid& grid, std::size_t k, std::uint64_t seed,
                                unsigned jobs = 1, const SmoOptions& options = {});

// SVM container "FRSHIELD-SVM". write_svm/read_svm embed a model in another container.
void write_svm(binio::Writer& w, const SvmModel& model);
SvmModel read_svm(binio::Reader& r);
std::vector<std::uint8_t> serialize_svm(const SvmModel& model);
SvmModel deserialize_svm(std::vector<std::uint8_t> bytes);
void save_svm(const SvmModel& model, const std::filesystem::path& path);
SvmModel load_svm(const std::filesystem::path& path);

}  // namespace frshield::svm
