#include "frshield/tensor.hpp"

#include <atomic>
#include <cmath>
#include <iostream>

namespace frshield {

namespace {
std::atomic<bool> g_warnings{true};
}

const char* error_kind_name(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::ShapeMismatch: return "shape-mismatch";
    case ErrorKind::NonFinite: return "non-finite";
    case ErrorKind::Io: return "io";
    case ErrorKind::Format: return "format";
    case ErrorKind::Data: return "data";
    case ErrorKind::Convergence: return "convergence";
    case ErrorKind::Config: return "config";
  }
  return "unknown";
}

void warn(const std::string& message) {
  if (g_warnings.load()) std::cerr << "warning: " << message << '\n';
}

void info(const std::string& message) {
  if (g_warnings.load()) std::cerr << message << '\n';
}

void set_warnings_enabled(bool enabled) { g_warnings.store(enabled); }

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

bool Tensor::all_finite() const noexcept {
  for (float v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

void require_finite(std::span<const float> values, const std::string& context) {
  for (float v : values)
    if (!std::isfinite(v)) fail(ErrorKind::NonFinite, "non-finite value in " + context);
}

}  // namespace frshield
