#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "frshield/report.hpp"
#include "frshield/rng.hpp"

using namespace frshield;
using namespace frshield::report;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fr::ScoreTable random_table(Rng& rng, fr::Protocol p, const std::vector<std::string>& rows) {
  fr::ScoreTable t(p, rows, {5, 30, 1728});
  for (auto& c : t.cells) c = rng.uniform();
  return t;
}

Report random_report(std::uint64_t seed) {
  Rng rng(seed);
  Report r;
  r.partial = rng.below(2) == 1;
  r.networks = {"N1", "N2"};
  const std::vector<std::string> attacks{"FGSM010", "CW0", "DEEPFOOL"};
  for (const auto& n : r.networks) {
    r.clean.push_back({n, rng.below(100000), rng.below(30), rng.uniform(), rng.uniform(), rng.uniform()});
    for (const auto& a : attacks) {
      const double psnr = rng.below(4) == 0 ? std::numeric_limits<double>::infinity() : rng.uniform(10, 60);
      r.attacks.push_back({n, a, rng.below(500), psnr, rng.uniform(0, 80), rng.uniform(0, 255), rng.uniform()});
    }
    MpaResult m;
    m.network = n;
    m.matrix.tuned = {"FGSM010", "CW0"};
    m.matrix.tested = attacks;
    for (int i = 0; i < 6; ++i) m.matrix.cells.push_back(rng.uniform());
    m.reattack = {{"FGSM010", 90, rng.uniform()}, {"CW0", 88, rng.uniform()}};
    r.mpa.push_back(m);
    FrResult f;
    f.network = n;
    f.flatten_width = 1728;
    f.clean = random_table(rng, fr::Protocol::Clean, {"Clean"});
    f.mismatch = random_table(rng, fr::Protocol::Mismatch, attacks);
    if (rng.below(2)) f.match = random_table(rng, fr::Protocol::Match, attacks);
    f.verdicts = best_verdicts(*f.mismatch);
    r.fr.push_back(f);
  }
  r.timings = {{"attack", "N1/CW0", rng.uniform(0, 100)}};
  return r;
}

}  // namespace

TEST_SUITE("report") {

TEST_CASE("summary round-trips on canonical fields") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto r = random_report(seed);
    const auto text = summary_json(r);
    const auto back = parse_summary_json(text);
    CHECK(back.canonical_equal(r));
    CHECK(back.timings.empty());
    CHECK(summary_json(back) == text);
  }
}

TEST_CASE("identical-input PSNR survives as +inf") {
  Report r;
  r.networks = {"N1"};
  r.attacks.push_back({"N1", "X", 1, std::numeric_limits<double>::infinity(), 0.0, 0.0, 0.0});
  const auto text = summary_json(r);
  CHECK(text.find("\"psnr\": null") != std::string::npos);
  const auto back = parse_summary_json(text);
  CHECK(std::isinf(back.attacks[0].psnr));
  CHECK(back.attacks[0].psnr > 0);
  CHECK(attack_results_csv(r, "N1") == "Attack Type,PSNR,L1 dist,Max. dist,ASR\nX,inf,0.0000,0.0000,0.00\n");
}

TEST_CASE("timings are not canonical") {
  auto a = random_report(3), b = a;
  b.timings.clear();
  CHECK(a.canonical_equal(b));
  CHECK(summary_json(a) == summary_json(b));
  const auto t = parse_timings_json(timings_json(a));
  REQUIRE(t.size() == 1);
  CHECK(t[0].seconds == a.timings[0].seconds);
  b.clean[0].epochs += 1;
  CHECK_FALSE(a.canonical_equal(b));
}

TEST_CASE("attack table layout") {
  Report r;
  r.networks = {"N1"};
  r.attacks.push_back({"N1", "IFGSM010", 100, 36.42251, 3.00114, 6.07921, 1.0});
  r.attacks.push_back({"N2", "IFGSM010", 100, 1.0, 1.0, 1.0, 0.5});
  r.attacks.push_back({"N1", "FGSM010", 100, 9.41109, 80.19851, 143.41939, 0.96});
  CHECK(attack_results_csv(r, "N1") ==
        "Attack Type,PSNR,L1 dist,Max. dist,ASR\n"
        "IFGSM010,36.4225,3.0011,6.0792,1.00\n"
        "FGSM010,9.4111,80.1985,143.4194,0.96\n");
}

TEST_CASE("empty report gives header-only tables") {
  const auto dir = std::filesystem::temp_directory_path() / "frshield_report_empty";
  std::filesystem::remove_all(dir);
  Report r;
  r.networks = {"N1"};
  const auto files = emit_report(r, Format::CsvBundle, dir);
  CHECK(files.size() == 2);
  CHECK(slurp(dir / "clean_training.csv") ==
        "Network,Parameters,Epochs,Train Accuracy,Validation Accuracy,Test Accuracy\n");
  CHECK(slurp(dir / "attack_results_N1.csv") == "Attack Type,PSNR,L1 dist,Max. dist,ASR\n");
  const auto summary = emit_report(r, Format::Summary, dir);
  REQUIRE(summary.size() == 1);
  CHECK(parse_summary_json(slurp(summary[0])).canonical_equal(r));
  std::filesystem::remove_all(dir);
}

TEST_CASE("best verdicts") {
  fr::ScoreTable t(fr::Protocol::Mismatch, {"A", "B", "C"}, {5, 30, 50});
  t.set("A", 5, 0.2);
  t.set("A", 30, 0.7);
  t.set("A", 50, 0.7);
  t.set("B", 5, 0.6);
  t.set("C", 50, 0.61);
  const auto v = best_verdicts(t);
  REQUIRE(v.size() == 3);
  CHECK(v[0].f == 30);  // tie goes to the smaller size
  CHECK(v[0].verdict == fr::Verdict::Secure);
  CHECK(v[1].f == 5);
  CHECK(v[1].verdict == fr::Verdict::Insecure);  // exactly 60% is not secure
  CHECK(v[2].f == 50);
  CHECK(v[2].verdict == fr::Verdict::Secure);
  CHECK(v[2].protocol == fr::Protocol::Mismatch);
}

TEST_CASE("malformed summaries") {
  auto kind_of = [](const std::string& text) {
    try {
      parse_summary_json(text);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::InvalidArgument;
  };
  CHECK(kind_of("{") == ErrorKind::Format);
  CHECK(kind_of("{\"format\": \"other\", \"version\": 1}") == ErrorKind::Format);
  auto text = summary_json(random_report(1));
  CHECK(kind_of(text.substr(0, text.size() / 2)) == ErrorKind::Format);
  const auto pos = text.find("\"secure\"") != std::string::npos ? text.find("\"secure\"") : text.find("\"insecure\"");
  text.replace(pos, text.find('"', pos + 1) - pos + 1, "\"maybe\"");
  CHECK(kind_of(text) == ErrorKind::Format);
}

TEST_CASE("unwritable destination") {
  const auto file = std::filesystem::temp_directory_path() / "frshield_report_blocker";
  std::ofstream(file) << "x";
  try {
    emit_report(Report{}, Format::Summary, file / "sub");
    FAIL("expected an io error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Io);
  }
  std::filesystem::remove(file);
}

}  // TEST_SUITE
