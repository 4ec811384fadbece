#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

#include "frshield/dataio.hpp"
#include "frshield/rng.hpp"

using namespace frshield;
using namespace frshield::data;

namespace {

// 42 numeric features plus the six UNSW identifier columns and a label.
std::string unsw_like_schema() {
  std::ostringstream s;
  s << "name,kind,drop\n";
  s << "srcip,categorical,0\nsport,numeric,0\ndstip,categorical,0\ndsport,numeric,0\n";
  s << "proto,categorical,0\nstate,categorical,0\n";
  for (int k = 0; k < 41; ++k) s << "f" << k << ",numeric,0\n";
  s << "service,categorical,0\n";
  s << "label,label,0\n";
  return s.str();
}

std::string csv_header() {
  std::ostringstream s;
  s << "srcip,sport,dstip,dsport,proto,state";
  for (int k = 0; k < 41; ++k) s << ",f" << k;
  s << ",service,label\n";
  return s.str();
}

std::string csv_row(double base, const std::string& service, int label) {
  std::ostringstream s;
  s << "10.0.0.1,1234,10.0.0.2,80,tcp,FIN";
  for (int k = 0; k < 41; ++k) s << "," << base + k;
  s << "," << service << "," << label << "\n";
  return s.str();
}

}  // namespace

TEST_SUITE("dataio") {

TEST_CASE("schema parsing") {
  const auto schema = parse_schema(unsw_like_schema());
  CHECK(schema.fields.size() == 49);
  CHECK(schema.fields[schema.label_index()].name == "label");
  CHECK_THROWS_AS(parse_schema(""), Error);
  CHECK_THROWS_AS(parse_schema("name,kind,drop\n"), Error);
  CHECK_THROWS_AS(parse_schema("name,kind,drop\na,numeric,0\n"), Error);  // no label
  CHECK_THROWS_AS(parse_schema("name,kind,drop\na,weird,0\nl,label,0\n"), Error);
}

TEST_CASE("header-only CSV yields no records") {
  const auto schema = parse_schema(unsw_like_schema());
  CHECK(parse_csv_records(csv_header(), schema).empty());
}

TEST_CASE("three-row fixture parses exactly") {
  const auto schema = parse_schema("name,kind,drop\nbytes,numeric,0\nsvc,categorical,0\nLabel,label,0\n");
  const auto recs = parse_csv_records("bytes,svc,Label\n1.5,http,0\n-2e3,dns,1\n+7,\"a,b\",attack\n", schema);
  REQUIRE(recs.size() == 3);
  CHECK(std::get<double>(recs[0].values[0]) == 1.5);
  CHECK(std::get<double>(recs[1].values[0]) == -2000.0);
  CHECK(std::get<double>(recs[2].values[0]) == 7.0);
  CHECK(std::get<std::string>(recs[2].values[1]) == "a,b");
  CHECK(recs[0].label == Label::Pristine);
  CHECK(recs[1].label == Label::Manipulated);
  CHECK(recs[2].label == Label::Manipulated);
  CHECK(recs[2].row == 3);
}

TEST_CASE("CSV errors name the problem") {
  const auto schema = parse_schema("name,kind,drop\nbytes,numeric,0\nLabel,label,0\n");
  try {
    parse_csv_records("bytes,Label\n1,0\n2,1,9\n", schema);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }
  try {
    parse_csv_records("bytes,Label\n1,0\n2,1\nabc,0\n", schema);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("row 3") != std::string::npos);
    CHECK(e.kind() == ErrorKind::Data);
  }
  CHECK_THROWS_AS(parse_csv_records("Label\n0\n", schema), Error);        // missing column
  CHECK_THROWS_AS(parse_csv_records("bytes,Label\n1x,0\n", schema), Error);
  CHECK_THROWS_AS(parse_csv_records("bytes,Label\n1,maybe\n", schema), Error);
  CHECK_THROWS_AS(parse_csv_records("bytes,Label\n,0\n", schema), Error);
  CHECK_THROWS_AS(parse_csv_records("bytes,Label\n1,0\n", Schema{}), Error);
}

TEST_CASE("dropping the six identifier columns leaves 42 features") {
  const auto schema = parse_schema(unsw_like_schema());
  const auto text = csv_header() + csv_row(0, "http", 0) + csv_row(10, "dns", 1) + csv_row(5, "http", 0);
  const auto recs = parse_csv_records(text, schema);
  const auto table = extract_features(recs, schema, kUnswDropColumns);
  CHECK(table.names.size() == 42);
  CHECK(table.rows.size() == 3);
  CHECK(table.rows[1][41] == 0.0);  // categorical codes by sorted value: dns, http
  CHECK(table.rows[0][41] == 1.0);
  // keeping the identifiers leaves 48 columns
  CHECK_THROWS_AS(extract_features(recs, schema, {}), Error);
  const std::vector<std::string> unknown = {"nonexistent"};
  CHECK_THROWS_AS(extract_features(recs, schema, unknown), Error);

  const auto images = preprocess_to_images(recs, schema, kUnswDropColumns);
  REQUIRE(images.size() == 3);
  // feature 0 spans 0..10 over the corpus, so record 3 sits at 0.5
  CHECK(images[2].pixels[0] == doctest::Approx(0.5));
  CHECK(images[1].label == Label::Manipulated);
}

TEST_CASE("constant record encodes to a constant image") {
  MinMaxScaling s;
  s.min.fill(0.0);
  s.max.fill(8.0);
  std::array<double, kFeatureCount> v{};
  v.fill(2.0);
  const auto img = encode_image(v, s, Label::Pristine, 0);
  CHECK(img.pixels.shape == Shape{1, 64, 64});
  for (float p : img.pixels.data) CHECK(p == 0.25f);
}

TEST_CASE("grid fill is row-major and upsampling keeps only the 42 values") {
  std::set<std::pair<std::size_t, std::size_t>> cells;
  for (std::size_t k = 0; k < kFeatureCount; ++k) cells.insert({k / 7, k % 7});
  CHECK(cells.size() == 42);

  MinMaxScaling s;
  s.min.fill(0.0);
  s.max.fill(100.0);
  std::array<double, kFeatureCount> v{};
  for (std::size_t k = 0; k < kFeatureCount; ++k) v[k] = static_cast<double>(k) + 1.0;
  const auto img = encode_image(v, s, Label::Manipulated, 9);

  std::set<float> distinct(img.pixels.data.begin(), img.pixels.data.end());
  CHECK(distinct.size() == 42);
  std::set<std::pair<std::size_t, std::size_t>> hit;
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x) {
      // nearest-neighbour oracle: the pixel takes its covering grid cell's value
      const std::size_t r = (y * 6) / 64, c = (x * 7) / 64;
      hit.insert({r, c});
      CHECK(img.pixels[y * 64 + x] == static_cast<float>(v[r * 7 + c] / 100.0));
    }
  CHECK(hit == cells);
  CHECK(img.pixels[0] == static_cast<float>(v[0] / 100.0));
  CHECK(img.pixels[63] == static_cast<float>(v[6] / 100.0));
  CHECK(img.pixels[64 * 64 - 1] == static_cast<float>(v[41] / 100.0));
}

TEST_CASE("constant features map to zero") {
  std::vector<std::array<double, kFeatureCount>> rows(3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < kFeatureCount; ++k) rows[i][k] = k == 5 ? 3.0 : static_cast<double>(i);
  const auto s = fit_min_max(rows);
  const auto img = encode_image(rows[1], s, Label::Pristine, 0);
  CHECK(img.pixels[5 * 64 / 7 + 1] == 0.0f);  // pixel inside grid cell (0, 5)
  CHECK(img.pixels[0] == doctest::Approx(0.5));
}

TEST_CASE("split sizes, disjointness and determinism") {
  auto samples = synth_generate(10, 4.0, 1);
  SUBCASE("all train") {
    const auto s = split_dataset(samples, {1.0, 0.0, 0.0}, 3);
    CHECK(s.train.size() == 10);
    CHECK(s.validation.empty());
    CHECK(s.test.empty());
  }
  SUBCASE("70/20/10 of ten") {
    const auto s = split_dataset(samples, {0.7, 0.2, 0.1}, 3);
    CHECK(s.train.size() == 7);
    CHECK(s.validation.size() == 2);
    CHECK(s.test.size() == 1);
    std::set<std::uint64_t> ids;
    for (const auto* part : {&s.train, &s.validation, &s.test})
      for (const auto& x : *part) CHECK(ids.insert(x.source_id).second);
    CHECK(ids.size() == 10);
  }
  SUBCASE("same seed, same split") {
    const auto a = split_dataset(samples, {0.6, 0.2, 0.2}, 42);
    const auto b = split_dataset(samples, {0.6, 0.2, 0.2}, 42);
    auto ids = [](const std::vector<ImageSample>& v) {
      std::vector<std::uint64_t> out;
      for (const auto& x : v) out.push_back(x.source_id);
      return out;
    };
    CHECK(ids(a.train) == ids(b.train));
    CHECK(ids(a.validation) == ids(b.validation));
    CHECK(ids(a.test) == ids(b.test));
  }
  CHECK_THROWS_AS(split_dataset(samples, {0.5, 0.2, 0.2}, 1), Error);
  CHECK_THROWS_AS(split_dataset(samples, {1.2, -0.2, 0.0}, 1), Error);
  CHECK_THROWS_AS(split_dataset({}, {1.0, 0.0, 0.0}, 1), Error);
}

TEST_CASE("splits are stratified within one sample per class") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 5 + rng.below(200);
    std::vector<Label> labels(n);
    std::size_t manip = 0;
    for (auto& l : labels) {
      l = rng.uniform() < 0.3 ? Label::Manipulated : Label::Pristine;
      manip += l == Label::Manipulated;
    }
    const SplitRatios ratios{0.6, 0.25, 0.15};
    const auto idx = split_indices(labels, ratios, trial);
    CHECK(idx.train.size() + idx.validation.size() + idx.test.size() == n);
    const double share = static_cast<double>(manip) / static_cast<double>(n);
    for (const auto* part : {&idx.train, &idx.validation, &idx.test}) {
      std::size_t m = 0;
      for (auto i : *part) m += labels[i] == Label::Manipulated;
      CHECK(std::abs(static_cast<double>(m) - share * static_cast<double>(part->size())) <= 1.0 + 1e-9);
    }
  }
}

TEST_CASE("synthetic corpus") {
  CHECK(synth_generate(0, 4.0, 1).empty());
  CHECK_THROWS_AS(synth_generate(10, 0.0, 1), Error);

  // Phi(4 * sqrt(42) / 8) = Phi(3.24)
  CHECK(synth_linear_oracle_accuracy(4.0) >= 0.99);

  const auto table = synth_features(2000, 4.0, 7);
  const auto proto = synth_prototypes(4.0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    double score = 0.0;
    for (std::size_t k = 0; k < kFeatureCount; ++k) {
      const double w = proto.manipulated[k] - proto.pristine[k];
      score += w * (table.rows[i][k] - 0.5 * (proto.manipulated[k] + proto.pristine[k]));
    }
    const Label predicted = score > 0.0 ? Label::Manipulated : Label::Pristine;
    correct += predicted == table.labels[i];
  }
  CHECK(static_cast<double>(correct) / 2000.0 >= 0.99);

  const auto a = synth_generate(50, 4.0, 3);
  const auto b = synth_generate(50, 4.0, 3);
  REQUIRE(a.size() == 50);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].pixels == b[i].pixels);
    CHECK(a[i].label == b[i].label);
    for (float p : a[i].pixels.data) {
      CHECK(p >= 0.0f);
      CHECK(p <= 1.0f);
    }
  }
  const auto c = synth_generate(50, 4.0, 4);
  CHECK_FALSE(a[0].pixels == c[0].pixels);
}

TEST_CASE("split-first preprocessing normalizes with training statistics") {
  const auto schema = parse_schema(unsw_like_schema());
  std::string text = csv_header();
  for (int i = 0; i < 20; ++i) text += csv_row(i, i % 3 ? "http" : "dns", i % 2);
  const auto recs = parse_csv_records(text, schema);
  const auto split = preprocess_split(recs, schema, kUnswDropColumns, {0.5, 0.25, 0.25}, 9);
  CHECK(split.train.size() == 10);
  float lo = 1.0f, hi = 0.0f;
  for (const auto& s : split.train) {
    lo = std::min(lo, s.pixels[0]);
    hi = std::max(hi, s.pixels[0]);
  }
  CHECK(lo == 0.0f);
  CHECK(hi == 1.0f);
  for (const auto* part : {&split.validation, &split.test})
    for (const auto& s : *part)
      for (float p : s.pixels.data) {
        CHECK(p >= 0.0f);
        CHECK(p <= 1.0f);
      }
}

TEST_CASE("dataset archive round-trips") {
  const auto split = split_dataset(synth_generate(20, 4.0, 2), {0.5, 0.3, 0.2}, 5);
  const auto path = std::filesystem::temp_directory_path() / "frshield_ds_roundtrip.bin";
  save_split(path, split);
  const auto back = load_split(path);
  REQUIRE(back.train.size() == split.train.size());
  REQUIRE(back.test.size() == split.test.size());
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    CHECK(back.train[i].pixels == split.train[i].pixels);
    CHECK(back.train[i].source_id == split.train[i].source_id);
    CHECK(back.train[i].label == split.train[i].label);
  }
  save_samples(path, split.test);
  CHECK(load_samples(path).size() == split.test.size());
  CHECK_THROWS_AS(load_split(path), Error);  // unsplit samples
  std::filesystem::remove(path);
}

}  // TEST_SUITE
