#include "frshield/sample.hpp"

namespace frshield {

const char* label_name(Label l) noexcept {
  return l == Label::Pristine ? "pristine" : "manipulated";
}

FeatureMatrix FeatureMatrix::select_columns(std::span<const std::size_t> columns) const {
  for (auto c : columns)
    require(c < cols, ErrorKind::ShapeMismatch, "column index out of range");
  FeatureMatrix out(rows, columns.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* src = data.data() + r * cols;
    float* dst = out.data.data() + r * out.cols;
    for (std::size_t k = 0; k < columns.size(); ++k) dst[k] = src[columns[k]];
  }
  return out;
}

FeatureMatrix FeatureMatrix::select_rows(std::span<const std::size_t> row_indices) const {
  FeatureMatrix out(row_indices.size(), cols);
  for (std::size_t k = 0; k < row_indices.size(); ++k) {
    require(row_indices[k] < rows, ErrorKind::ShapeMismatch, "row index out of range");
    auto src = row(row_indices[k]);
    std::copy(src.begin(), src.end(), out.row(k).begin());
  }
  return out;
}

}  // namespace frshield
