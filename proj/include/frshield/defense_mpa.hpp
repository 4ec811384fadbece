#pragma once

// Most-powerful-attacks defense: fine-tune the source network on one attack's
// adversarial samples, then score every tuned model against every attack set.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "frshield/attacks.hpp"
#include "frshield/nn.hpp"

namespace frshield::mpa {

struct FineTuneConfig {
  std::size_t epochs = 3;
  double learning_rate = 1e-4;  // base rate x 0.1
  std::size_t batch = 64;
  std::uint64_t seed = 0;
};

struct TunedModel {
  std::string base_id;
  std::string attack;
  FineTuneConfig config;
  std::size_t attack_samples = 0;
  std::size_t clean_samples = 0;
  nn::TrainedModel model;  // provenance records the fields above
};

// Continues Adam training on the adversarial samples (relabelled manipulated)
// mixed 1:1 with a seeded, class-balanced draw from `clean_pool`.
TunedModel fine_tune_with_attack(const nn::TrainedModel& base, const std::string& attack,
                                 std::span<const ImageSample> attack_samples,
                                 std::span<const ImageSample> clean_pool,
                                 std::span<const ImageSample> validation,
                                 const FineTuneConfig& config);

// Fraction of samples the model labels manipulated.
double detection_score(const nn::TrainedModel& model, std::span<const ImageSample> samples);

struct CrossAttackMatrix {
  std::vector<std::string> tuned;   // rows
  std::vector<std::string> tested;  // columns
  std::vector<double> cells;        // row-major

  double at(std::size_t row, std::size_t col) const { return cells.at(row * tested.size() + col); }
  bool operator==(const CrossAttackMatrix&) const = default;
};

struct NamedSamples {
  std::string attack;
  std::vector<ImageSample> samples;
};

// cell (i, j): fraction of attack set j that tuned model i labels manipulated.
CrossAttackMatrix cross_attack_score_matrix(const std::vector<TunedModel>& models,
                                            const std::vector<NamedSamples>& attack_sets,
                                            unsigned jobs = 1);

// Attacks the tuned model itself with `spec` on the fresh samples it classifies
// correctly and returns the resulting ASR. Throws Data if none qualify.
double reattack_asr(const TunedModel& tuned, const attacks::AttackSpec& spec,
                    std::span<const ImageSample> fresh_samples, unsigned jobs = 1);

// Paper layout: one row per tested attack, one column per tuning attack.
std::string cross_attack_csv(const CrossAttackMatrix& matrix);

}  // namespace frshield::mpa
