#pragma once

// Experiment configuration.
//
// Grammar (one statement per line, '#' starts a comment):
//
//   file     := { line }
//   line     := section | entry | blank
//   section  := '[' name ']'            name: data | network | attacks | mpa | fr
//                                              | 'attack.' ATTACK-NAME
//   entry    := key '=' value
//   value    := text up to the comment, trimmed; lists are comma-separated
//
// Entries before the first section are global: seed (required), out, jobs.
// Unknown sections, unknown keys, duplicate keys and malformed values are
// errors that name the offending line.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "frshield/attacks.hpp"
#include "frshield/dataio.hpp"
#include "frshield/nn.hpp"
#include "frshield/svm.hpp"

namespace frshield::config {

struct DataConfig {
  enum class Source { Synthetic, Csv };
  Source source = Source::Synthetic;
  std::size_t count = 2000;       // synthetic records
  double separation = 4.0;
  std::filesystem::path csv;
  std::filesystem::path schema;
  data::SplitRatios split{0.7, 0.2, 0.1};
};

struct NetworkConfig {
  std::vector<std::string> presets{"N1"};
  // Overrides of the preset's reference learning parameters.
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch;
  std::optional<double> learning_rate;

  nn::TrainConfig train_config(const std::string& preset) const;
};

struct AttackConfig {
  std::vector<attacks::AttackSpec> specs;  // unique names, in configured order
  std::size_t samples = 500;
};

struct MpaConfig {
  bool enabled = false;
  std::vector<std::string> attacks;  // empty: every configured attack
  std::size_t epochs = 3;
  double lr_scale = 0.1;
  std::size_t reattack_samples = 100;
};

struct FrConfig {
  bool enabled = false;
  // 0 stands for the full flatten width N.
  std::vector<std::size_t> sizes{5, 10, 30, 50, 200, 400, 0};
  bool allow_custom_sizes = false;
  std::size_t train_samples = 6000;
  std::size_t test_samples = 1000;
  std::size_t folds = 5;
  bool grid_per_model = true;
  svm::Grid grid = svm::Grid::standard();
  bool match = true;
  bool mismatch = true;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = "frshield-out";
  unsigned jobs = 1;
  DataConfig data;
  NetworkConfig network;
  AttackConfig attacks;
  MpaConfig mpa;
  FrConfig fr;

  // Throws Config on violated invariants.
  void validate() const;
};

// Parses the text form; relative paths resolve against `base_dir`.
ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

// Canonical text form; parse_config(to_text(c)) reproduces c.
std::string to_text(const ExperimentConfig& config);

}  // namespace frshield::config
