#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "frshield/defense_fr.hpp"
#include "frshield/rng.hpp"

using namespace frshield;
using namespace frshield::fr;

namespace {

// Two classes separated along every column: pristine near 0, manipulated near 1.
struct Data {
  FeatureMatrix x;
  std::vector<Label> y;
};

Data separated(std::size_t rows, std::size_t cols, double noise, std::uint64_t seed) {
  Rng rng(seed);
  Data d{FeatureMatrix(rows, cols), {}};
  for (std::size_t r = 0; r < rows; ++r) {
    const Label l = r % 2 ? Label::Manipulated : Label::Pristine;
    d.y.push_back(l);
    for (std::size_t c = 0; c < cols; ++c)
      d.x.row(r)[c] = static_cast<float>((l == Label::Manipulated ? 1.0 : 0.0) + noise * rng.normal());
  }
  return d;
}

// Pristine iff |x| < sqrt(ln 2): one support vector at the origin.
svm::SvmModel bump_model() {
  svm::SvmModel m;
  m.params = {1.0, 1.0};
  m.dim = 1;
  m.support = FeatureMatrix(1, 1);
  m.coef = {1.0};
  m.bias = -0.5;
  return m;
}

FrEnsemble two_column_ensemble() {
  FrEnsemble e;
  e.f = 1;
  e.n = 2;
  for (std::size_t c = 0; c < 2; ++c) {
    FeatureSubset s;
    s.size = 1;
    s.indices = {c};
    e.subsets.push_back(s);
    e.models.push_back(bump_model());
    e.params.push_back(e.models.back().params);
  }
  return e;
}

double brute_mismatch(const FrEnsemble& e, const std::vector<FeatureMatrix>& files,
                      const std::vector<Label>& labels) {
  double total = 0.0;
  for (const auto& m : e.models) {
    double row = 0.0;
    for (const auto& f : files) {
      double hit = 0.0;
      for (std::size_t r = 0; r < f.rows; ++r) hit += svm::predict_one(m, f.row(r)) == labels[r];
      row += hit / static_cast<double>(f.rows);
    }
    total += row / static_cast<double>(files.size());
  }
  return total / static_cast<double>(e.models.size());
}

}  // namespace

TEST_SUITE("defense_fr") {

TEST_CASE("subset draws") {
  const auto full = draw_subsets(40, 40, 50, 3);
  REQUIRE(full.size() == 50);
  for (const auto& s : full) {
    CHECK(s.indices.size() == 40);
    for (std::size_t i = 0; i < 40; ++i) CHECK(s.indices[i] == i);
  }

  const auto a = draw_subsets(1728, 5, 50, 7, "N1");
  REQUIRE(a.size() == 50);
  for (const auto& s : a) {
    CHECK_NOTHROW(s.validate(1728));
    CHECK(s.size == 5);
    CHECK(s.source_model == "N1");
    for (std::size_t i = 1; i < 5; ++i) CHECK(s.indices[i - 1] < s.indices[i]);
    CHECK(s.indices.back() < 1728);
  }
  CHECK(a == draw_subsets(1728, 5, 50, 7, "N1"));
  const auto b = draw_subsets(1728, 5, 50, 8, "N1");
  bool differs = false;
  for (std::size_t i = 0; i < 50; ++i) differs |= a[i].indices != b[i].indices;
  CHECK(differs);
  // prefixes are stable
  const auto c = draw_subsets(1728, 5, 10, 7, "N1");
  for (std::size_t i = 0; i < 10; ++i) CHECK(c[i] == a[i]);

  CHECK_THROWS_AS(draw_subsets(10, 11, 50, 1), Error);
  CHECK_THROWS_AS(draw_subsets(10, 0, 50, 1), Error);

  FeatureSubset bad;
  bad.size = 2;
  bad.indices = {3, 3};
  CHECK_THROWS_AS(bad.validate(10), Error);
  bad.indices = {3, 10};
  CHECK_THROWS_AS(bad.validate(10), Error);
  bad.indices = {3};
  CHECK_THROWS_AS(bad.validate(10), Error);
}

TEST_CASE("subset draws are uniform") {
  // chi-square over index frequencies, 8 bins, 4000 draws of 2 indices
  const auto s = draw_subsets(8, 2, 4000, 11);
  std::vector<double> count(8, 0.0);
  for (const auto& x : s)
    for (auto i : x.indices) count[i] += 1.0;
  const double expected = 4000.0 * 2.0 / 8.0;
  double chi2 = 0.0;
  for (double c : count) chi2 += (c - expected) * (c - expected) / expected;
  CHECK(chi2 < 24.3);  // p = 0.001 at 7 degrees of freedom
}

TEST_CASE("default feature sizes") {
  CHECK(default_feature_sizes(1728) == std::vector<std::size_t>{5, 10, 30, 50, 200, 400, 1728});
  CHECK(default_feature_sizes(3200) == std::vector<std::size_t>{5, 10, 30, 50, 200, 400, 3200});
  CHECK(default_feature_sizes(40) == std::vector<std::size_t>{5, 10, 30, 40});
  CHECK(default_feature_sizes(5) == std::vector<std::size_t>{5});
}

TEST_CASE("feature scaling") {
  FeatureMatrix x(3, 3);
  x.data = {0, 5, 1, 2, 5, 3, 4, 5, 2};
  const auto s = fit_feature_scaling(x);
  auto y = x;
  s.apply(y);
  CHECK(y.data == std::vector<float>{0.0f, 0.0f, 0.0f, 0.5f, 0.0f, 1.0f, 1.0f, 0.0f, 0.5f});
  FeatureMatrix z(1, 3);
  z.data = {8, 1, -1};
  s.apply(z);
  CHECK(z.data == std::vector<float>{2.0f, 0.0f, -1.0f});
  FeatureMatrix w(1, 2);
  CHECK_THROWS_AS(s.apply(w), Error);
}

TEST_CASE("full-width ensembles collapse to one SVM") {
  const auto d = separated(40, 6, 0.6, 1);
  const auto subsets = draw_subsets(6, 6, 50, 2);
  FrTrainOptions opt;
  opt.grid = svm::Grid{{1.0, 4.0}, {0.25, 1.0}};
  opt.seed = 9;
  const auto e = train_fr_ensemble(d.x, d.y, subsets, opt);
  REQUIRE(e.models.size() == 50);
  for (const auto& m : e.models) {
    CHECK(m.coef == e.models[0].coef);
    CHECK(m.bias == e.models[0].bias);
  }
  const auto test = separated(30, 6, 0.6, 3);
  double single = 0.0;
  for (std::size_t r = 0; r < test.x.rows; ++r)
    single += svm::predict_one(e.models[0], test.x.row(r)) == test.y[r];
  CHECK(eval_clean_accuracy(e, test.x, test.y) == single / 30.0);

  // per-model and shared grid searches agree on identical subsets
  opt.grid_per_model = false;
  opt.jobs = 3;
  const auto shared = train_fr_ensemble(d.x, d.y, subsets, opt);
  CHECK(shared.params == e.params);
  CHECK(shared.models[7].coef == e.models[7].coef);
}

TEST_CASE("ensemble training is reproducible and checks its inputs") {
  const auto d = separated(40, 12, 0.8, 4);
  const auto subsets = draw_subsets(12, 3, 6, 5);
  FrTrainOptions opt;
  opt.grid = svm::Grid{{1.0, 8.0}, {0.5}};
  opt.seed = 1;
  const auto a = train_fr_ensemble(d.x, d.y, subsets, opt);
  opt.jobs = 4;
  const auto b = train_fr_ensemble(d.x, d.y, subsets, opt);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(a.models[i].coef == b.models[i].coef);
    CHECK(a.models[i].dim == 3);
  }
  CHECK(a.f == 3);
  CHECK(a.n == 12);

  CHECK_THROWS_AS(train_fr_ensemble(d.x, d.y, {}, opt), Error);
  auto mixed = subsets;
  mixed.push_back(draw_subsets(12, 4, 1, 1)[0]);
  CHECK_THROWS_AS(train_fr_ensemble(d.x, d.y, mixed, opt), Error);
  CHECK_THROWS_AS(train_fr_ensemble(d.x, d.y, draw_subsets(20, 3, 2, 1), opt), Error);

  const std::vector<Label> one_class(40, Label::Pristine);
  try {
    train_fr_ensemble(d.x, one_class, subsets, opt);
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Data);
    CHECK(std::string(e.what()).find("FR model") != std::string::npos);
  }
}

TEST_CASE("clean accuracy") {
  SUBCASE("one model on separated data") {
    const auto d = separated(20, 4, 0.05, 6);
    const auto e = train_fr_ensemble(d.x, d.y, draw_subsets(4, 2, 1, 1),
                                     FrTrainOptions{svm::Grid{{1.0}, {1.0}}});
    CHECK(eval_clean_accuracy(e, d.x, d.y) == 1.0);
  }
  SUBCASE("mean of per-model accuracies") {
    // column 0 is right on 9 of 10 rows, column 1 on 8 of 10
    FeatureMatrix x(10, 2);
    std::vector<Label> y;
    for (std::size_t r = 0; r < 10; ++r) {
      const bool pristine = r < 5;
      y.push_back(pristine ? Label::Pristine : Label::Manipulated);
      x.row(r)[0] = (pristine == (r != 0)) ? 0.0f : 5.0f;
      x.row(r)[1] = (pristine == (r != 0 && r != 9)) ? 0.0f : 5.0f;
    }
    const auto e = two_column_ensemble();
    CHECK(detection_accuracy(e.models[0], x.select_columns(std::vector<std::size_t>{0}), y) == 0.9);
    CHECK(detection_accuracy(e.models[1], x.select_columns(std::vector<std::size_t>{1}), y) == 0.8);
    CHECK(eval_clean_accuracy(e, x, y) == doctest::Approx(0.85).epsilon(1e-15));
    FeatureMatrix narrow(10, 1);
    CHECK_THROWS_AS(eval_clean_accuracy(e, narrow, y), Error);
  }
}

TEST_CASE("score arithmetic") {
  CHECK(mismatch_score({{0.37}}) == 0.37);
  CHECK(mismatch_score({{1.0, 0.0}, {0.0, 1.0}}) == 0.5);
  CHECK(match_score(std::vector<double>{0.37}) == 0.37);
  CHECK(match_score(std::vector<double>{0.2, 0.4, 0.6}) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK_THROWS_AS(mismatch_score({}), Error);
  CHECK_THROWS_AS(mismatch_score({{1.0, 0.0}, {1.0}}), Error);
  CHECK_THROWS_AS(match_score(std::vector<double>{}), Error);

  Rng rng(12);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t m = 1 + rng.below(50), k = 1 + rng.below(50);
    std::vector<std::vector<double>> g(m, std::vector<double>(k));
    for (auto& row : g)
      for (auto& v : row) v = rng.uniform();
    // brute force: every cell weighted 1/(m k) (rows have equal length)
    double brute = 0.0;
    for (const auto& row : g)
      for (double v : row) brute += v;
    brute /= static_cast<double>(m * k);
    CHECK(std::abs(mismatch_score(g) - brute) <= 1e-12);
    std::vector<double> p(m);
    for (auto& v : p) v = rng.uniform();
    double ps = 0.0;
    for (double v : p) ps += v;
    CHECK(std::abs(match_score(p) - ps / static_cast<double>(m)) <= 1e-12);
  }
}

TEST_CASE("match and mismatch protocols") {
  const auto d = separated(60, 20, 1.0, 7);
  FrTrainOptions opt;
  opt.grid = svm::Grid{{2.0}, {0.25}};
  const auto e = train_fr_ensemble(d.x, d.y, draw_subsets(20, 4, 5, 1), opt);
  const auto attack = separated(24, 20, 1.5, 8);
  const auto attacker = draw_subsets(20, 4, 5, 1001);
  const auto files = slice_files(attack.x, attacker);

  const double mis = mismatch_index_test(e, files, attack.y, 3);
  CHECK(std::abs(mis - brute_mismatch(e, files, attack.y)) <= 1e-12);
  const auto grid = mismatch_grid(e, files, attack.y);
  CHECK(mismatch_score(grid) == mis);

  const auto paired = slice_files(attack.x, e.subsets);
  std::vector<double> acc;
  for (std::size_t i = 0; i < 5; ++i) acc.push_back(detection_accuracy(e.models[i], paired[i], attack.y));
  CHECK(std::abs(match_index_test(e, paired, attack.y) - match_score(acc)) <= 1e-12);

  auto short_files = files;
  short_files.pop_back();
  CHECK_THROWS_AS(mismatch_index_test(e, short_files, attack.y), Error);
  CHECK_THROWS_AS(match_index_test(e, short_files, attack.y), Error);
  const auto wide = slice_files(attack.x, draw_subsets(20, 5, 5, 3));
  CHECK_THROWS_AS(mismatch_index_test(e, wide, attack.y), Error);
  CHECK_THROWS_AS(match_index_test(e, wide, attack.y), Error);

  SUBCASE("full width: both protocols coincide") {
    const auto full = train_fr_ensemble(d.x, d.y, draw_subsets(20, 20, 4, 1), opt);
    const auto ff = slice_files(attack.x, draw_subsets(20, 20, 4, 99));
    CHECK(mismatch_index_test(full, ff, attack.y) == match_index_test(full, ff, attack.y));
  }
}

TEST_CASE("security verdict") {
  CHECK(security_verdict(0.6001) == Verdict::Secure);
  CHECK(security_verdict(0.60) == Verdict::Insecure);
  CHECK(security_verdict(0.0) == Verdict::Insecure);
  CHECK(security_verdict(1.0) == Verdict::Secure);
  CHECK_THROWS_AS(security_verdict(1.01), Error);
  CHECK_THROWS_AS(security_verdict(-0.1), Error);
  CHECK(std::string(verdict_name(Verdict::Secure)) == "secure");
}

TEST_CASE("score tables") {
  ScoreTable t(Protocol::Mismatch, {"FGSM010", "IFGSM010"}, {5, 1728});
  t.set("FGSM010", 5, 0.7623);
  t.set("IFGSM010", 1728, 0.0);
  CHECK(t.get("FGSM010", 5) == 0.7623);
  CHECK_THROWS_AS(t.set("FGSM010", 5, 1.2), Error);
  CHECK_THROWS_AS(t.set("PGD005", 5, 0.5), Error);
  CHECK_THROWS_AS(t.get("FGSM010", 30), Error);
  const auto csv = score_table_csv(t);
  CHECK(csv == "Attack Type,5,1728\nFGSM010,76.23,0.00\nIFGSM010,0.00,0.00\n");
  const auto back = parse_score_table_csv(csv, Protocol::Mismatch);
  CHECK(back.rows == t.rows);
  CHECK(back.columns == t.columns);
  for (std::size_t i = 0; i < t.cells.size(); ++i) CHECK(std::abs(back.cells[i] - t.cells[i]) <= 5e-5);
  CHECK(score_table_csv(ScoreTable(Protocol::Clean, {}, {5, 10})) == "Attack Type,5,10\n");
  CHECK_THROWS_AS(parse_score_table_csv("Attack,5\n", Protocol::Match), Error);
  CHECK_THROWS_AS(parse_score_table_csv("Attack Type,5\nA,1,2\n", Protocol::Match), Error);
  CHECK_THROWS_AS(parse_score_table_csv("Attack Type,5\nA,140\n", Protocol::Match), Error);
  CHECK(parse_protocol("match") == Protocol::Match);
  CHECK_THROWS_AS(parse_protocol("exact"), Error);
}

TEST_CASE("containers round-trip") {
  const auto dir = std::filesystem::temp_directory_path();
  FeatureFile f;
  f.features = separated(5, 3, 0.3, 9).x;
  f.labels = {Label::Pristine, Label::Manipulated, Label::Pristine, Label::Manipulated,
              Label::Manipulated};
  f.indices = {2, 7, 9};
  f.source_width = 12;
  save_feature_file(f, dir / "frshield_fm.bin");
  CHECK(load_feature_file(dir / "frshield_fm.bin") == f);
  f.indices = {1};
  CHECK_THROWS_AS(save_feature_file(f, dir / "frshield_fm.bin"), Error);

  const auto d = separated(30, 8, 0.7, 10);
  FrTrainOptions opt;
  opt.grid = svm::Grid{{2.0}, {0.5}};
  const auto e = train_fr_ensemble(d.x, d.y, draw_subsets(8, 3, 4, 2, "N1"), opt);
  save_ensemble(e, dir / "frshield_fre.bin");
  const auto back = load_ensemble(dir / "frshield_fre.bin");
  CHECK(back.subsets == e.subsets);
  CHECK(back.params == e.params);
  CHECK(eval_clean_accuracy(back, d.x, d.y) == eval_clean_accuracy(e, d.x, d.y));
  for (std::size_t i = 0; i < 4; ++i) CHECK(back.models[i].coef == e.models[i].coef);
  CHECK_THROWS_AS(load_feature_file(dir / "frshield_fre.bin"), Error);
  std::filesystem::remove(dir / "frshield_fm.bin");
  std::filesystem::remove(dir / "frshield_fre.bin");
}

}  // TEST_SUITE
