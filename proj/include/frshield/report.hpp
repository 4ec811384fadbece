#pragma once

// Experiment report: the tables an experiment produces, their CSV layouts and
// a JSON summary. Timings are recorded but are not part of the canonical form.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "frshield/defense_fr.hpp"
#include "frshield/defense_mpa.hpp"

namespace frshield::report {

struct CleanRow {
  std::string network;
  std::size_t parameters = 0;
  std::size_t epochs = 0;
  double train_accuracy = 0.0;
  double validation_accuracy = 0.0;
  double test_accuracy = 0.0;
  bool operator==(const CleanRow&) const = default;
};

struct AttackRow {
  std::string network;
  std::string attack;
  std::size_t samples = 0;
  double psnr = 0.0;  // +inf when no sample changed
  double l1 = 0.0;
  double max_dist = 0.0;
  double asr = 0.0;
  bool operator==(const AttackRow&) const = default;
};

struct ReattackRow {
  std::string attack;
  std::size_t samples = 0;
  double asr = 0.0;
  bool operator==(const ReattackRow&) const = default;
};

struct MpaResult {
  std::string network;
  mpa::CrossAttackMatrix matrix;
  std::vector<ReattackRow> reattack;
  bool operator==(const MpaResult&) const = default;
};

// Best feature size for one attack under one protocol.
struct FrVerdictRow {
  fr::Protocol protocol = fr::Protocol::Mismatch;
  std::string attack;
  std::size_t f = 0;
  double score = 0.0;
  fr::Verdict verdict = fr::Verdict::Insecure;
  bool operator==(const FrVerdictRow&) const = default;
};

struct FrResult {
  std::string network;
  std::size_t flatten_width = 0;
  std::optional<fr::ScoreTable> clean;
  std::optional<fr::ScoreTable> mismatch;
  std::optional<fr::ScoreTable> match;
  std::vector<FrVerdictRow> verdicts;
  bool operator==(const FrResult&) const = default;
};

struct Timing {
  std::string stage;
  std::string item;  // e.g. "N1/FGSM010" or "N1/f=30"
  double seconds = 0.0;
};

struct Report {
  bool partial = false;
  std::vector<std::string> networks;
  std::vector<CleanRow> clean;
  std::vector<AttackRow> attacks;
  std::vector<MpaResult> mpa;
  std::vector<FrResult> fr;
  std::vector<Timing> timings;

  // Equality on canonical fields (everything except timings).
  bool canonical_equal(const Report& other) const;
};

// Per attack row of `table`, the best feature size (ties to the smaller f).
std::vector<FrVerdictRow> best_verdicts(const fr::ScoreTable& table);

std::string clean_training_csv(const Report& report);
std::string attack_results_csv(const Report& report, const std::string& network);
std::string reattack_csv(const MpaResult& result);
std::string verdicts_csv(const FrResult& result);
// "Attack Type,<network>..." in seconds; not canonical.
std::string attack_cost_csv(const Report& report);

enum class Format { CsvBundle, Summary };

// Canonical JSON summary; PSNR +inf is written as null.
std::string summary_json(const Report& report);
Report parse_summary_json(std::string_view text);
std::string timings_json(const Report& report);
std::vector<Timing> parse_timings_json(std::string_view text);

// Writes the files for `format` into `dir` and returns the canonical ones.
std::vector<std::filesystem::path> emit_report(const Report& report, Format format,
                                               const std::filesystem::path& dir);

}  // namespace frshield::report
