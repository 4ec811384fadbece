#pragma once

// Evasion attacks against a trained source network, perturbation metrics and
// the attack batch archive.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "frshield/nn.hpp"

namespace frshield::attacks {

enum class AttackKind : std::uint8_t { FGSM, IFGSM, BIM, PGD, JSMA, LBFGS, DEEPFOOL, CW };
enum class CwNorm : std::uint8_t { L2, L0, Linf };

const char* attack_kind_name(AttackKind kind) noexcept;
AttackKind parse_attack_kind(std::string_view name);
const char* cw_norm_name(CwNorm norm) noexcept;

struct AttackSpec {
  AttackKind kind = AttackKind::FGSM;
  std::string name;            // registry name, e.g. "PGD005"
  double alpha = 0.1;          // per-step size (FGSM family)
  double epsilon = 0.1;        // ball radius; L-BFGS inner tolerance
  double theta = 0.01;         // JSMA per-step change
  double confidence = 0.0;     // C&W margin T
  int iterations = 10;         // steps per run (inner steps for optimizing attacks)
  double step_size = 0.3;      // PGD step, relative to epsilon
  CwNorm norm = CwNorm::L2;
  bool random_start = true;    // PGD
  double overshoot = 0.02;     // DeepFool
  int search_steps = 9;        // C&W binary search / L-BFGS probes / L0 and Linf rounds
  double learning_rate = 1e-2; // C&W Adam
  double initial_const = 1.0;  // C&W and L-BFGS starting c
  std::uint64_t seed = 0;

  void validate() const;
};

// Names used in tables: FGSM010, IFGSM010, BIM100, PGD005, LBFGS, JSMA001,
// DEEPFOOL, CW0, CW100. Case and a hyphen/ampersand in "I-FGSM"/"C&W" are
// ignored; "FGSM10" and "IFGSM10" are accepted as aliases.
AttackSpec spec_from_name(std::string_view name);
std::vector<std::string> registered_attack_names();

struct PixelNorms {
  double l1_mean = 0.0;  // mean |delta| on the [0,1] scale
  double l2 = 0.0;
  double linf = 0.0;
};

PixelNorms pixel_norms(std::span<const float> original, std::span<const float> adversarial);

struct AttackResult {
  ImageSample adversarial;
  bool success = false;  // predicted label != true label
  int iterations_used = 0;
  PixelNorms norms;
  std::optional<double> constant_c;
};

// PSNR sentinel for identical images.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

struct PerturbationMetrics {
  double psnr = kPsnrIdentical;  // dB, peak 255
  double l1 = 0.0;               // mean absolute difference, 0-255 scale
  double max_dist = 0.0;         // L-infinity, 0-255 scale
};

PerturbationMetrics perturbation_metrics(const Tensor& original, const Tensor& adversarial);

// Fraction of results whose adversarial sample the model misclassifies,
// recomputed from the pixels.
double attack_success_rate(const nn::TrainedModel& model, std::span<const AttackResult> results);

AttackResult fgsm(const nn::TrainedModel& model, const ImageSample& sample, const AttackSpec& spec);
// clip_ball off is I-FGSM, on is BIM.
AttackResult iterative_fgsm(const nn::TrainedModel& model, const ImageSample& sample,
                            const AttackSpec& spec, bool clip_ball);
AttackResult pgd(const nn::TrainedModel& model, const ImageSample& sample, const AttackSpec& spec);
AttackResult jsma(const nn::TrainedModel& model, const ImageSample& sample, const AttackSpec& spec);
AttackResult lbfgs_attack(const nn::TrainedModel& model, const ImageSample& sample,
                          const AttackSpec& spec);
AttackResult deepfool(const nn::TrainedModel& model, const ImageSample& sample,
                      const AttackSpec& spec);
AttackResult carlini_wagner(const nn::TrainedModel& model, const ImageSample& sample,
                            const AttackSpec& spec);

// Dispatches on spec.kind.
AttackResult run_attack(const nn::TrainedModel& model, const ImageSample& sample,
                        const AttackSpec& spec);

struct BatchAttackReport {
  AttackSpec spec;
  std::vector<std::uint64_t> original_ids;
  std::vector<Label> true_labels;
  std::vector<AttackResult> results;
  // Aggregates over the batch. PSNR averages the samples that were changed;
  // l1 and max_dist average the per-sample values.
  double psnr = kPsnrIdentical;
  double l1 = 0.0;
  double max_dist = 0.0;
  double asr = 0.0;
  double seconds = 0.0;  // wall time, not part of canonical reports
};

// Attacks every sample; sample i is attacked with seed spec.seed + i.
BatchAttackReport attack_batch(const nn::TrainedModel& model, std::span<const ImageSample> samples,
                               const AttackSpec& spec, unsigned jobs = 1);

// Seeded draw of `count` manipulated samples the model classifies correctly.
std::vector<ImageSample> select_attack_samples(const nn::TrainedModel& model,
                                               std::span<const ImageSample> pool,
                                               std::size_t count, std::uint64_t seed);

std::vector<ImageSample> adversarial_samples(const BatchAttackReport& report);

// Attack batch archive "FRSHIELD-ADV".
std::vector<std::uint8_t> serialize_report(const BatchAttackReport& report);
BatchAttackReport deserialize_report(std::vector<std::uint8_t> bytes);
void save_report(const BatchAttackReport& report, const std::filesystem::path& path);
BatchAttackReport load_report(const std::filesystem::path& path);

}  // namespace frshield::attacks
