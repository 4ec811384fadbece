#pragma once

// CSV traffic records -> 42 normalized features -> 6x7 grid -> 64x64 image,
// dataset splitting, the synthetic desk-scale corpus, and the dataset archive.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "frshield/sample.hpp"

namespace frshield::data {

inline constexpr std::size_t kFeatureCount = 42;
inline constexpr std::size_t kGridRows = 6;
inline constexpr std::size_t kGridCols = 7;

// Column names of the UNSW-NB15 identifiers removed before imaging.
inline const std::vector<std::string> kUnswDropColumns = {"srcip", "sport", "dstip",
                                                          "dsport", "state", "proto"};

enum class FieldKind : std::uint8_t { Numeric, Categorical, Label };

struct Field {
  std::string name;
  FieldKind kind = FieldKind::Numeric;
  bool drop = false;
};

struct Schema {
  std::vector<Field> fields;

  std::size_t label_index() const;
  std::size_t index_of(const std::string& name) const;  // throws Data if absent
};

// Schema file: CSV with header "name,kind,drop"; kind is numeric|categorical|label,
// drop is 0/1 (or true/false).
Schema load_schema(const std::filesystem::path& path);
Schema parse_schema(std::string_view text);

using FieldValue = std::variant<double, std::string>;

struct RawRecord {
  std::vector<FieldValue> values;  // aligned with Schema::fields
  Label label = Label::Pristine;
  std::uint64_t row = 0;           // 1-based data row index in the source file
};

// Accepts 0/1, pristine/manipulated, normal/attack (case-insensitive).
Label parse_label(std::string_view text);

std::vector<RawRecord> load_csv_records(const std::filesystem::path& path, const Schema& schema);
std::vector<RawRecord> parse_csv_records(std::string_view text, const Schema& schema);

// Feature rows left after dropping, categoricals integer-coded by sorted value.
struct FeatureTable {
  std::vector<std::string> names;
  std::vector<std::array<double, kFeatureCount>> rows;
  std::vector<Label> labels;
  std::vector<std::uint64_t> ids;
};

// Drops every field flagged in the schema or named in `drop_columns`.
// Throws Data unless exactly 42 features remain.
FeatureTable extract_features(std::span<const RawRecord> records, const Schema& schema,
                              std::span<const std::string> drop_columns);

struct MinMaxScaling {
  std::array<double, kFeatureCount> min{};
  std::array<double, kFeatureCount> max{};
};

// Constant features get min == max; they encode to 0 with a warning.
MinMaxScaling fit_min_max(std::span<const std::array<double, kFeatureCount>> rows);

// Normalizes (clamping to [0,1]), fills the 6x7 grid row-major and upsamples
// to 64x64 by nearest neighbour.
ImageSample encode_image(const std::array<double, kFeatureCount>& features,
                         const MinMaxScaling& scaling, Label label, std::uint64_t id);

// Grid cell (row, col) sampled by output pixel (y, x).
std::pair<std::size_t, std::size_t> grid_cell_for_pixel(std::size_t y, std::size_t x);

// Whole-corpus normalization.
std::vector<ImageSample> preprocess_to_images(std::span<const RawRecord> records,
                                              const Schema& schema,
                                              std::span<const std::string> drop_columns);

struct SplitRatios {
  double train = 0.7;
  double validation = 0.2;
  double test = 0.1;
};

struct SplitIndices {
  std::vector<std::size_t> train, validation, test;
};

// Stratified seeded shuffle followed by contiguous cuts.
SplitIndices split_indices(std::span<const Label> labels, const SplitRatios& ratios,
                           std::uint64_t seed);

DatasetSplit split_dataset(std::span<const ImageSample> samples, const SplitRatios& ratios,
                           std::uint64_t seed);

// Split first, then normalize with statistics from the training portion only.
DatasetSplit preprocess_split(std::span<const RawRecord> records, const Schema& schema,
                              std::span<const std::string> drop_columns,
                              const SplitRatios& ratios, std::uint64_t seed);

// Synthetic corpus: two Gaussian classes (sigma = 1) around fixed 42-feature
// prototypes. Every feature differs between the prototypes by
// separation / 4, so the prototype distance is separation * sqrt(42) / 4.
// A small fraction of records are heavy-tailed bursts (every feature shifted
// up by 0.5..1 x kSynthBurstScale), like the long-tailed flow counters of real
// traffic; after min-max scaling the bulk of the corpus sits in a narrow band.
inline constexpr double kSynthBurstRate = 0.005;
inline constexpr double kSynthBurstScale = 40.0;

struct SynthPrototypes {
  std::array<double, kFeatureCount> pristine{};
  std::array<double, kFeatureCount> manipulated{};
};

SynthPrototypes synth_prototypes(double class_separation);

// Lower bound on the accuracy of the Bayes-optimal linear rule:
// (1 - burst rate) * Phi(distance / 2).
double synth_linear_oracle_accuracy(double class_separation);

// Raw (un-normalized) features; labels alternate pristine / manipulated.
FeatureTable synth_features(std::size_t count, double class_separation, std::uint64_t seed);

std::vector<ImageSample> synth_generate(std::size_t count, double class_separation,
                                        std::uint64_t seed);

// Dataset archive "FRSHIELD-DS". Samples carry a partition tag so a whole
// split round-trips through one file.
void save_samples(const std::filesystem::path& path, std::span<const ImageSample> samples);
std::vector<ImageSample> load_samples(const std::filesystem::path& path);
void save_split(const std::filesystem::path& path, const DatasetSplit& split);
DatasetSplit load_split(const std::filesystem::path& path);

}  // namespace frshield::data
