#pragma once

// Double-precision re-implementation of the forward pass, written
// independently of the engine, for finite-difference gradient checks.

#include <algorithm>
#include <cmath>
#include <vector>

#include "frshield/nn.hpp"

namespace frshield::testing {

struct ReferenceNet {
  nn::NetworkSpec spec;
  std::vector<std::vector<double>> kernels;
  std::vector<std::vector<double>> biases;

  explicit ReferenceNet(const nn::TrainedModel& m) : spec(m.spec) {
    for (const auto& w : m.weights) {
      kernels.emplace_back(w.kernel.data.begin(), w.kernel.data.end());
      biases.emplace_back(w.bias.data.begin(), w.bias.data.end());
    }
  }

  // `pattern`, when given, receives the ReLU on/off bits and max-pool argmaxes:
  // the loss is smooth wherever this pattern is locally constant.
  std::vector<double> logits(const std::vector<double>& input, std::vector<std::size_t>* pattern = nullptr) const {
    std::vector<double> x = input;
    std::size_t C = spec.input_shape[0], H = spec.input_shape[1], W = spec.input_shape[2];
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      const auto& L = spec.layers[i];
      if (L.kind == nn::LayerKind::Conv2d) {
        const std::size_t K = L.kernel, S = L.stride, O = L.out_channels;
        const std::size_t Ho = (H - K) / S + 1, Wo = (W - K) / S + 1;
        std::vector<double> y(O * Ho * Wo);
        for (std::size_t o = 0; o < O; ++o)
          for (std::size_t r = 0; r < Ho; ++r)
            for (std::size_t c = 0; c < Wo; ++c) {
              double acc = biases[i][o];
              for (std::size_t ch = 0; ch < C; ++ch)
                for (std::size_t a = 0; a < K; ++a)
                  for (std::size_t b = 0; b < K; ++b)
                    acc += kernels[i][((o * C + ch) * K + a) * K + b] *
                           x[(ch * H + r * S + a) * W + c * S + b];
              y[(o * Ho + r) * Wo + c] = acc;
            }
        x = std::move(y);
        C = O;
        H = Ho;
        W = Wo;
      } else if (L.kind == nn::LayerKind::Relu) {
        for (auto& v : x) {
          if (pattern) pattern->push_back(v > 0.0);
          v = std::max(v, 0.0);
        }
      } else if (L.kind == nn::LayerKind::MaxPool) {
        const std::size_t P = L.window, Ho = H / P, Wo = W / P;
        std::vector<double> y(C * Ho * Wo, -1e300);
        std::vector<std::size_t> arg(y.size());
        for (std::size_t ch = 0; ch < C; ++ch)
          for (std::size_t r = 0; r < Ho * P; ++r)
            for (std::size_t c = 0; c < Wo * P; ++c) {
              const std::size_t cell = (ch * Ho + r / P) * Wo + c / P, src = (ch * H + r) * W + c;
              if (x[src] > y[cell]) y[cell] = x[src], arg[cell] = src;
            }
        if (pattern) pattern->insert(pattern->end(), arg.begin(), arg.end());
        x = std::move(y);
        H = Ho;
        W = Wo;
      } else if (L.kind == nn::LayerKind::Dense) {
        const std::size_t n = x.size();
        std::vector<double> y(L.width);
        for (std::size_t j = 0; j < L.width; ++j) {
          double acc = biases[i][j];
          for (std::size_t k = 0; k < n; ++k) acc += kernels[i][j * n + k] * x[k];
          y[j] = acc;
        }
        x = std::move(y);
      } else if (L.kind == nn::LayerKind::Softmax) {
        break;  // logits are taken before the softmax
      }
    }
    return x;
  }

  std::vector<std::size_t> pattern(const std::vector<double>& input) const {
    std::vector<std::size_t> p;
    logits(input, &p);
    return p;
  }

  double loss(const std::vector<double>& input, Label label) const {
    const auto z = logits(input);
    const double mx = std::max(z[0], z[1]);
    return std::log(std::exp(z[0] - mx) + std::exp(z[1] - mx)) + mx - z[label_index(label)];
  }
};

// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double analytic, double numeric, double floor = 1e-4) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

}  // namespace frshield::testing
