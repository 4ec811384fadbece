#pragma once

// Stage graph: data -> train -> attack -> mpa -> fr-train -> fr-eval -> report.
// Every stage reads its inputs from, and persists its outputs under, the
// configured output directory, so stages can also be run one at a time.

#include <cstdint>
#include <functional>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "frshield/config.hpp"
#include "frshield/defense_fr.hpp"
#include "frshield/report.hpp"

namespace frshield::experiment {

// Stage sub-seed: a stable hash of the stage name mixed into the master seed.
std::uint64_t stage_seed(std::uint64_t master, std::string_view stage);

class Layout {
 public:
  explicit Layout(std::filesystem::path out) : out_(std::move(out)) {}

  const std::filesystem::path& root() const { return out_; }
  std::filesystem::path config() const { return out_ / "config.txt"; }
  std::filesystem::path split() const { return out_ / "data" / "split.ds"; }
  std::filesystem::path model(const std::string& net) const { return out_ / "models" / (net + ".nn"); }
  std::filesystem::path attack(const std::string& net, const std::string& attack) const {
    return out_ / "attacks" / net / (attack + ".adv");
  }
  std::filesystem::path tuned(const std::string& net, const std::string& attack) const {
    return out_ / "mpa" / net / (attack + ".nn");
  }
  // name: "train", "test" or an attack name.
  std::filesystem::path features(const std::string& net, const std::string& name) const {
    return out_ / "fr" / net / (name + ".fm");
  }
  std::filesystem::path ensemble(const std::string& net, std::size_t f) const {
    return out_ / "fr" / net / ("f" + std::to_string(f) + ".fre");
  }
  // Report fragment and timings written by one stage.
  std::filesystem::path result(const std::string& stage) const { return out_ / "results" / (stage + ".json"); }
  std::filesystem::path timings(const std::string& stage) const {
    return out_ / "results" / (stage + ".timings.json");
  }
  std::filesystem::path failure() const { return out_ / "failure.json"; }
  std::filesystem::path report_dir() const { return out_ / "report"; }

 private:
  std::filesystem::path out_;
};

// Individual stages.
void run_data(const config::ExperimentConfig& config);
void run_train(const config::ExperimentConfig& config);
void run_attack(const config::ExperimentConfig& config);
void run_mpa(const config::ExperimentConfig& config);
void run_fr_train(const config::ExperimentConfig& config);
void run_fr_eval(const config::ExperimentConfig& config, fr::Protocol protocol);

// Assembles the report from the persisted stage results.
report::Report build_report(const config::ExperimentConfig& config);
// build_report followed by emitting both formats into the report directory.
report::Report run_report(const config::ExperimentConfig& config);

// Runs `fn` as stage `stage`; on failure writes the failure record and rethrows.
void run_stage(const config::ExperimentConfig& config, const std::string& stage,
               const std::function<void()>& fn);

// Every configured stage in order, then the report.
report::Report run_experiment(const config::ExperimentConfig& config);

// Exit code the command-line tool uses for an error of this kind.
int exit_code(ErrorKind kind) noexcept;
inline constexpr int kInternalErrorExitCode = 70;

}  // namespace frshield::experiment
