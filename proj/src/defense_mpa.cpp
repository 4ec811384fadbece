#include "frshield/defense_mpa.hpp"

#include <algorithm>

#include <cstdio>

#include "frshield/parallel.hpp"
#include "frshield/rng.hpp"

namespace frshield::mpa {

TunedModel fine_tune_with_attack(const nn::TrainedModel& base, const std::string& attack,
                                 std::span<const ImageSample> attack_samples,
                                 std::span<const ImageSample> clean_pool,
                                 std::span<const ImageSample> validation,
                                 const FineTuneConfig& config) {
  require(!attack_samples.empty(), ErrorKind::Data,
          "fine-tuning with " + attack + " needs at least one attack sample");
  require(!clean_pool.empty(), ErrorKind::Data, "fine-tuning needs a clean sample pool");

  TunedModel t;
  t.base_id = base.id;
  t.attack = attack;
  t.config = config;
  t.model = base;
  t.model.id = base.id + "+" + attack;

  std::vector<ImageSample> mix(attack_samples.begin(), attack_samples.end());
  for (auto& s : mix) s.label = Label::Manipulated;
  t.attack_samples = mix.size();

  // Class-balanced clean draw; pristine takes the odd slot so the mix never
  // collapses to the manipulated class alone.
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < clean_pool.size(); ++i)
    by_class[clean_pool[i].label == Label::Manipulated].push_back(i);
  Rng rng(derive_seed(config.seed, "clean-draw"));
  rng.shuffle(by_class[0]);
  rng.shuffle(by_class[1]);
  const std::size_t take = std::min(clean_pool.size(), mix.size());
  if (take < mix.size())
    warn("fine-tuning with " + attack + ": only " + std::to_string(take) + " clean samples for " +
         std::to_string(mix.size()) + " attack samples");
  std::size_t pristine = std::min(by_class[0].size(), (take + 1) / 2);
  const std::size_t manipulated = std::min(by_class[1].size(), take - pristine);
  pristine = take - manipulated;
  std::vector<std::size_t> chosen(by_class[0].begin(), by_class[0].begin() + pristine);
  chosen.insert(chosen.end(), by_class[1].begin(), by_class[1].begin() + manipulated);
  std::sort(chosen.begin(), chosen.end());
  for (auto i : chosen) mix.push_back(clean_pool[i]);
  t.clean_samples = take;

  nn::TrainConfig tc;
  tc.epochs = config.epochs;
  tc.batch = config.batch;
  tc.learning_rate = config.learning_rate;
  tc.seed = config.seed;
  nn::continue_training(t.model, mix, validation, tc);

  t.model.provenance.emplace_back("tuned_from", base.id);
  t.model.provenance.emplace_back("tuning_attack", attack);
  t.model.provenance.emplace_back("tuning_epochs", std::to_string(config.epochs));
  char lr[32];
  std::snprintf(lr, sizeof lr, "%.17g", config.learning_rate);
  t.model.provenance.emplace_back("tuning_learning_rate", lr);
  t.model.provenance.emplace_back("tuning_attack_samples", std::to_string(t.attack_samples));
  t.model.provenance.emplace_back("tuning_clean_samples", std::to_string(t.clean_samples));
  return t;
}

double detection_score(const nn::TrainedModel& model, std::span<const ImageSample> samples) {
  require(!samples.empty(), ErrorKind::Data, "detection score of an empty sample set");
  std::size_t hit = 0;
  for (auto l : nn::predict_labels(model, samples)) hit += l == Label::Manipulated;
  return static_cast<double>(hit) / static_cast<double>(samples.size());
}

CrossAttackMatrix cross_attack_score_matrix(const std::vector<TunedModel>& models,
                                            const std::vector<NamedSamples>& attack_sets,
                                            unsigned jobs) {
  CrossAttackMatrix m;
  for (const auto& t : models) m.tuned.push_back(t.attack);
  for (const auto& s : attack_sets) {
    require(!s.samples.empty(), ErrorKind::Data, "attack set " + s.attack + " is empty");
    m.tested.push_back(s.attack);
  }
  for (const auto& name : m.tuned) {
    bool found = false;
    for (const auto& s : m.tested) found |= s == name;
    require(found, ErrorKind::Data, "no attack set for tuning attack " + name);
  }
  const std::size_t cols = attack_sets.size();
  m.cells.assign(models.size() * cols, 0.0);
  parallel_for(m.cells.size(), jobs, [&](std::size_t k) {
    m.cells[k] = detection_score(models[k / cols].model, attack_sets[k % cols].samples);
  });
  return m;
}

double reattack_asr(const TunedModel& tuned, const attacks::AttackSpec& spec,
                    std::span<const ImageSample> fresh_samples, unsigned jobs) {
  std::vector<ImageSample> eligible;
  const auto predicted = nn::predict_labels(tuned.model, fresh_samples);
  for (std::size_t i = 0; i < fresh_samples.size(); ++i)
    if (predicted[i] == fresh_samples[i].label) eligible.push_back(fresh_samples[i]);
  require(!eligible.empty(), ErrorKind::Data,
          "re-attack of " + tuned.model.id + ": no fresh sample is classified correctly");
  if (eligible.size() < fresh_samples.size())
    warn("re-attack of " + tuned.model.id + ": " +
         std::to_string(fresh_samples.size() - eligible.size()) +
         " fresh samples misclassified and skipped");
  return attacks::attack_batch(tuned.model, eligible, spec, jobs).asr;
}

std::string cross_attack_csv(const CrossAttackMatrix& matrix) {
  std::string out = "Tested \\ Tuned";
  for (const auto& t : matrix.tuned) out += "," + t;
  out += "\n";
  char buf[32];
  for (std::size_t j = 0; j < matrix.tested.size(); ++j) {
    out += matrix.tested[j];
    for (std::size_t i = 0; i < matrix.tuned.size(); ++i) {
      std::snprintf(buf, sizeof buf, ",%.2f", matrix.at(i, j));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace frshield::mpa
