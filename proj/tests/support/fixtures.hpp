#pragma once

#include <vector>

#include "frshield/nn.hpp"
#include "frshield/rng.hpp"

namespace frshield::testing {

// flatten -> dense(2) on a 1x1xn input. Row 0 of the kernel is `w0`, row 1 is `w1`.
inline nn::TrainedModel linear_model(const std::vector<float>& w0, const std::vector<float>& w1,
                                     float b0 = 0.0f, float b1 = 0.0f) {
  nn::NetworkSpec spec;
  spec.name = "linear";
  spec.input_shape = {1, 1, w0.size()};
  spec.layers = {nn::Layer::flatten(), nn::Layer::dense(2), nn::Layer::softmax()};
  auto m = nn::init_model(spec, 1, "linear");
  const std::size_t n = w0.size();
  for (std::size_t k = 0; k < n; ++k) {
    m.weights[1].kernel[k] = w0[k];
    m.weights[1].kernel[n + k] = w1[k];
  }
  m.weights[1].bias[0] = b0;
  m.weights[1].bias[1] = b1;
  return m;
}

// Binary logistic model: logit_0 = 0, logit_1 = w.x + b.
inline nn::TrainedModel logistic_model(const std::vector<float>& w, float b = 0.0f) {
  return linear_model(std::vector<float>(w.size(), 0.0f), w, 0.0f, b);
}

// conv(3,3) relu conv(2,3) relu maxpool(2) flatten dense(2) on 1x8x8.
inline nn::NetworkSpec small_conv_spec() {
  nn::NetworkSpec spec;
  spec.name = "small";
  spec.input_shape = {1, 8, 8};
  spec.layers = {nn::Layer::conv2d(3, 3), nn::Layer::relu(),       nn::Layer::conv2d(2, 3),
                 nn::Layer::relu(),       nn::Layer::maxpool(2),   nn::Layer::flatten(),
                 nn::Layer::dense(2),     nn::Layer::softmax()};
  return spec;
}

inline nn::TrainedModel random_small_net(std::uint64_t seed) {
  auto m = nn::init_model(small_conv_spec(), seed, "small");
  Rng rng(seed ^ 0xabcdefull);
  for (auto& w : m.weights)
    for (auto& b : w.bias.data) b = static_cast<float>(rng.uniform(-0.1, 0.1));
  return m;
}

inline Tensor random_input(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (auto& v : t.data) v = static_cast<float>(rng.uniform());
  return t;
}

}  // namespace frshield::testing
