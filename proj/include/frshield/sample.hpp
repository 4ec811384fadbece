#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "frshield/tensor.hpp"

namespace frshield {

enum class Label : std::uint8_t { Pristine = 0, Manipulated = 1 };

inline int label_index(Label l) noexcept { return static_cast<int>(l); }
inline Label label_from_index(int i) { return i == 0 ? Label::Pristine : Label::Manipulated; }
inline Label other_label(Label l) noexcept {
  return l == Label::Pristine ? Label::Manipulated : Label::Pristine;
}
const char* label_name(Label l) noexcept;

inline constexpr std::size_t kImageSide = 64;

// A model input plus its ground-truth label. Pixels live in [0, 1]; images
// produced by dataio are always 1x64x64, small fixtures may use other shapes.
struct ImageSample {
  Tensor pixels;
  Label label = Label::Pristine;
  std::uint64_t source_id = 0;
};

struct DatasetSplit {
  std::vector<ImageSample> train;
  std::vector<ImageSample> validation;
  std::vector<ImageSample> test;
  std::uint64_t seed = 0;
};

// Row-major feature rows (e.g. flatten-layer activations).
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

  std::span<const float> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  std::span<float> row(std::size_t i) { return {data.data() + i * cols, cols}; }

  // New matrix holding only `columns` (in the given order).
  FeatureMatrix select_columns(std::span<const std::size_t> columns) const;
  FeatureMatrix select_rows(std::span<const std::size_t> row_indices) const;

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;
};

}  // namespace frshield
