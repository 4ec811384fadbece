#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "frshield/experiment.hpp"

using namespace frshield;
using namespace frshield::experiment;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

config::ExperimentConfig tiny(const std::string& name, bool attacks) {
  auto c = config::parse_config(R"(seed = 77
[data]
count = 120
[network]
epochs = 1
batch = 16
learning_rate = 1e-3
[fr]
sizes = 5, N
train_samples = 40
test_samples = 10
folds = 2
grid = shared
C = 1
gamma = 0.5
)");
  c.out = std::filesystem::temp_directory_path() / ("frshield_harness_" + name);
  std::filesystem::remove_all(c.out);
  if (attacks) {
    c.attacks.specs = {attacks::spec_from_name("FGSM010"), attacks::spec_from_name("DEEPFOOL")};
    c.attacks.samples = 4;
    c.mpa.enabled = true;
    c.mpa.epochs = 1;
    c.mpa.reattack_samples = 4;
    c.fr.enabled = true;
  }
  return c;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("stage seeds are stable and distinct") {
  std::set<std::uint64_t> seen;
  for (const auto* s : {"data", "train", "attack", "mpa", "fr-train", "fr-eval"}) {
    CHECK(stage_seed(5, s) == stage_seed(5, s));
    CHECK(seen.insert(stage_seed(5, s)).second);
  }
  CHECK(stage_seed(5, "data") != stage_seed(6, "data"));
}

TEST_CASE("exit codes are distinct per failure class") {
  std::set<int> codes{0, kInternalErrorExitCode};
  for (auto k : {ErrorKind::InvalidArgument, ErrorKind::ShapeMismatch, ErrorKind::NonFinite, ErrorKind::Io,
                 ErrorKind::Format, ErrorKind::Data, ErrorKind::Convergence, ErrorKind::Config})
    CHECK(codes.insert(exit_code(k)).second);
}

TEST_CASE("empty attack list runs training and clean evaluation only") {
  const auto c = tiny("clean_only", false);
  const auto r = run_experiment(c);
  CHECK_FALSE(r.partial);
  REQUIRE(r.clean.size() == 1);
  CHECK(r.clean[0].network == "N1");
  CHECK(r.clean[0].epochs == 1);
  CHECK(r.attacks.empty());
  CHECK(r.mpa.empty());
  CHECK(r.fr.empty());
  const Layout layout(c.out);
  CHECK(std::filesystem::exists(layout.model("N1")));
  CHECK(slurp(layout.report_dir() / "attack_results_N1.csv") == "Attack Type,PSNR,L1 dist,Max. dist,ASR\n");
  CHECK_FALSE(std::filesystem::exists(layout.failure()));
  std::filesystem::remove_all(c.out);
}

TEST_CASE("full graph persists every artifact and rebuilds the same report") {
  const auto c = tiny("full", true);
  const auto r = run_experiment(c);
  CHECK_FALSE(r.partial);
  const Layout layout(c.out);
  for (const auto& p : {layout.split(), layout.model("N1"), layout.attack("N1", "FGSM010"),
                        layout.attack("N1", "DEEPFOOL"), layout.tuned("N1", "FGSM010"),
                        layout.features("N1", "train"), layout.features("N1", "DEEPFOOL"), layout.ensemble("N1", 5),
                        layout.ensemble("N1", 1728), layout.config()})
    CHECK_MESSAGE(std::filesystem::exists(p), p.string());
  CHECK(r.attacks.size() == 2);
  REQUIRE(r.mpa.size() == 1);
  CHECK(r.mpa[0].matrix.tuned.size() == 2);
  REQUIRE(r.fr.size() == 1);
  CHECK(r.fr[0].flatten_width == 1728);
  REQUIRE(r.fr[0].mismatch);
  REQUIRE(r.fr[0].match);
  CHECK(r.fr[0].mismatch->columns == std::vector<std::size_t>{5, 1728});
  // at f = N the attacker has no indices to guess
  for (const auto& a : r.fr[0].match->rows) CHECK(r.fr[0].match->get(a, 1728) == r.fr[0].mismatch->get(a, 1728));
  CHECK(r.fr[0].verdicts.size() == 4);
  CHECK(!r.timings.empty());

  const auto rebuilt = build_report(c);
  CHECK(rebuilt.canonical_equal(r));
  CHECK(report::parse_summary_json(slurp(layout.report_dir() / "summary.json")).canonical_equal(r));

  // A second run into another directory is byte-identical on canonical files.
  auto c2 = c;
  c2.out = c.out.string() + "_again";
  c2.jobs = 2;
  std::filesystem::remove_all(c2.out);
  run_experiment(c2);
  const Layout l2(c2.out);
  for (const auto& e : std::filesystem::directory_iterator(layout.report_dir())) {
    const auto name = e.path().filename().string();
    if (name == "timings.json" || name == "attack_cost.csv") continue;
    CHECK_MESSAGE(slurp(e.path()) == slurp(l2.report_dir() / name), name);
  }
  std::filesystem::remove_all(c.out);
  std::filesystem::remove_all(c2.out);
}

TEST_CASE("a failing stage leaves a failure record") {
  auto c = tiny("failure", false);
  const Layout layout(c.out);
  try {
    run_stage(c, "train", [&] { run_train(c); });
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Io);
  }
  const auto j = nlohmann::json::parse(slurp(layout.failure()));
  CHECK(j.at("stage") == "train");
  CHECK(j.at("kind") == "io");
  CHECK(j.at("exit_code") == 5);

  // Partial artifacts stay, and the report says it is partial.
  run_data(c);
  run_train(c);
  c.mpa.enabled = true;
  c.attacks.specs = {attacks::spec_from_name("FGSM010")};
  const auto r = run_report(c);
  CHECK(r.partial);
  CHECK(r.clean.size() == 1);
  std::filesystem::remove_all(c.out);
}

}  // TEST_SUITE
