#pragma once

#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "frshield/error.hpp"

namespace frshield {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

// Dense row-major float32 array. `grad`, when present, has the same length as `data`.
struct Tensor {
  Shape shape;
  std::vector<float> data;
  std::optional<std::vector<float>> grad;

  Tensor() = default;
  explicit Tensor(Shape s, float fill = 0.0f) : shape(std::move(s)), data(shape_size(shape), fill) {
    for (auto d : shape) require(d > 0, ErrorKind::ShapeMismatch, "tensor dimensions must be positive");
  }
  Tensor(Shape s, std::vector<float> values) : shape(std::move(s)), data(std::move(values)) {
    require(data.size() == shape_size(shape), ErrorKind::ShapeMismatch,
            "tensor data length does not match shape " + shape_string(shape));
  }

  std::size_t size() const noexcept { return data.size(); }
  std::span<float> values() noexcept { return data; }
  std::span<const float> values() const noexcept { return data; }

  float& operator[](std::size_t i) { return data[i]; }
  float operator[](std::size_t i) const { return data[i]; }

  void enable_grad() { grad.emplace(data.size(), 0.0f); }

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.data == b.data;
  }
};

void require_finite(std::span<const float> values, const std::string& context);

}  // namespace frshield
