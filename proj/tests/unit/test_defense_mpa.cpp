#include <doctest.h>

#include "frshield/defense_mpa.hpp"
#include "support/fixtures.hpp"

using namespace frshield;
using namespace frshield::mpa;
using frshield::testing::logistic_model;
using frshield::testing::random_small_net;

namespace {

ImageSample image(Rng& rng, Label label, double lo, double hi, std::uint64_t id) {
  ImageSample s;
  s.pixels = Tensor({1, 8, 8});
  for (auto& v : s.pixels.data) v = static_cast<float>(rng.uniform(lo, hi));
  s.label = label;
  s.source_id = id;
  return s;
}

// Dark images are pristine, bright ones manipulated.
std::vector<ImageSample> brightness_set(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ImageSample> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(i % 2 ? image(rng, Label::Manipulated, 0.55, 1.0, i)
                        : image(rng, Label::Pristine, 0.0, 0.45, i));
  return out;
}

// Mid-grey images, just on the pristine side of the base model, labelled manipulated.
std::vector<ImageSample> grey_set(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ImageSample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(image(rng, Label::Manipulated, 0.38, 0.46, 1000 + i));
  return out;
}

nn::TrainedModel trained_small_net() {
  DatasetSplit split;
  split.train = brightness_set(80, 1);
  split.validation = brightness_set(20, 2);
  nn::TrainConfig c;
  c.epochs = 15;
  c.batch = 8;
  c.learning_rate = 1e-2;
  c.seed = 3;
  return nn::train(frshield::testing::small_conv_spec(), split, c, "small");
}

}  // namespace

TEST_SUITE("defense_mpa") {

TEST_CASE("zero epochs leave the weights untouched") {
  const auto base = random_small_net(4);
  const auto clean = brightness_set(10, 5);
  FineTuneConfig c;
  c.epochs = 0;
  const auto t = fine_tune_with_attack(base, "FGSM010", grey_set(4, 6), clean, clean, c);
  CHECK(t.model.weights == base.weights);
  CHECK(t.attack == "FGSM010");
  CHECK(t.attack_samples == 4);
  CHECK(t.clean_samples == 4);
  CHECK_THROWS_AS(fine_tune_with_attack(base, "FGSM010", {}, clean, clean, c), Error);
  CHECK_THROWS_AS(fine_tune_with_attack(base, "FGSM010", grey_set(2, 1), {}, clean, c), Error);
}

TEST_CASE("fine-tuning learns the attack samples deterministically") {
  const auto base = trained_small_net();
  const auto clean = brightness_set(60, 7);
  const auto adv = grey_set(12, 8);
  const double before = detection_score(base, adv);
  FineTuneConfig c;
  c.epochs = 40;
  c.batch = 8;
  c.learning_rate = 1e-3;
  c.seed = 11;
  const auto t = fine_tune_with_attack(base, "CW0", adv, clean, brightness_set(20, 9), c);
  CHECK(t.model.weights != base.weights);
  CHECK(t.model.spec == base.spec);
  CHECK(t.model.history.size() == base.history.size() + 40);
  CHECK(detection_score(t.model, adv) >= 0.95);
  CHECK(detection_score(t.model, adv) > before);
  CHECK(nn::accuracy(t.model, brightness_set(40, 10)) >= 0.9);

  const auto again = fine_tune_with_attack(base, "CW0", adv, clean, brightness_set(20, 9), c);
  CHECK(again.model == t.model);

  bool has_attack = false;
  for (const auto& [k, v] : t.model.provenance) has_attack |= k == "tuning_attack" && v == "CW0";
  CHECK(has_attack);
  const auto back = nn::deserialize_model(nn::serialize_model(t.model));
  CHECK(back.provenance == t.model.provenance);
}

TEST_CASE("cross-attack matrix") {
  std::vector<TunedModel> models(2);
  models[0].attack = "A";
  models[0].model = logistic_model({1.0f, 1.0f}, -1.0f);  // manipulated iff x0 + x1 > 1
  models[1].attack = "B";
  models[1].model = logistic_model({1.0f, -1.0f}, 0.0f);  // manipulated iff x0 > x1
  auto sample = [](float a, float b) {
    ImageSample s;
    s.pixels = Tensor({1, 1, 2}, {a, b});
    s.label = Label::Manipulated;
    return s;
  };
  std::vector<NamedSamples> sets{{"A", {sample(0.9f, 0.8f), sample(0.1f, 0.2f)}},
                                 {"B", {sample(0.7f, 0.1f), sample(0.6f, 0.5f), sample(0.1f, 0.9f),
                                        sample(0.2f, 0.1f)}},
                                 {"C", {sample(0.0f, 0.0f)}}};
  const auto m = cross_attack_score_matrix(models, sets, 2);
  CHECK(m.tuned == std::vector<std::string>{"A", "B"});
  CHECK(m.tested == std::vector<std::string>{"A", "B", "C"});
  REQUIRE(m.cells.size() == 6);
  // direct per-sample oracle
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double hit = 0.0;
      for (const auto& s : sets[j].samples) {
        const auto z = nn::logits(models[i].model, s.pixels.data);
        hit += z[1] > z[0];
      }
      CHECK(m.at(i, j) == hit / static_cast<double>(sets[j].samples.size()));
    }
  CHECK(m.at(0, 0) == 0.5);
  CHECK(m.at(1, 1) == 0.75);
  CHECK(m == cross_attack_score_matrix(models, sets, 1));

  const auto csv = cross_attack_csv(m);
  CHECK(csv.rfind("Tested \\ Tuned,A,B\nA,0.50,", 0) == 0);

  auto missing = sets;
  missing.erase(missing.begin());
  CHECK_THROWS_AS(cross_attack_score_matrix(models, missing), Error);
  auto empty = sets;
  empty[2].samples.clear();
  CHECK_THROWS_AS(cross_attack_score_matrix(models, empty), Error);
}

TEST_CASE("re-attacking a tuned model") {
  TunedModel t;
  t.model = logistic_model({2.0f, 2.0f}, -2.0f);
  t.model.id = "tuned";
  Rng rng(12);
  std::vector<ImageSample> fresh;
  for (int i = 0; i < 10; ++i) {
    ImageSample s;
    s.pixels = Tensor({1, 1, 2}, {static_cast<float>(rng.uniform(0.6, 1.0)),
                                  static_cast<float>(rng.uniform(0.6, 1.0))});
    s.label = Label::Manipulated;
    fresh.push_back(s);
  }
  auto spec = attacks::spec_from_name("FGSM010");
  spec.alpha = 0.0;
  CHECK(reattack_asr(t, spec, fresh) == 0.0);
  spec.alpha = 1.0;
  CHECK(reattack_asr(t, spec, fresh) == 1.0);

  std::vector<ImageSample> wrong(fresh.begin(), fresh.begin() + 2);
  for (auto& s : wrong) s.label = Label::Pristine;
  CHECK_THROWS_AS(reattack_asr(t, spec, wrong), Error);
}

}  // TEST_SUITE
