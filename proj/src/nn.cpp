#include "frshield/nn.hpp"

#include <algorithm>
#include <cmath>

#include "frshield/binio.hpp"
#include "frshield/rng.hpp"

namespace frshield::nn {

const char* layer_kind_name(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "dense";
    case LayerKind::Softmax: return "softmax";
  }
  return "?";
}

// ---------------------------------------------------------------- spec

std::vector<Shape> NetworkSpec::layer_shapes() const {
  require(input_shape.size() == 3, ErrorKind::InvalidArgument,
          "network input shape must be channels x height x width");
  std::vector<Shape> shapes;
  Shape cur = input_shape;
  for (const auto& layer : layers) {
    switch (layer.kind) {
      case LayerKind::Conv2d: {
        require(cur.size() == 3, ErrorKind::InvalidArgument, "conv2d after flatten");
        require(layer.kernel >= 1 && layer.stride >= 1 && layer.out_channels >= 1,
                ErrorKind::InvalidArgument, "conv2d needs positive channels, kernel, stride");
        require(cur[1] >= layer.kernel && cur[2] >= layer.kernel, ErrorKind::InvalidArgument,
                "conv2d kernel larger than its input " + shape_string(cur));
        cur = {layer.out_channels, (cur[1] - layer.kernel) / layer.stride + 1,
               (cur[2] - layer.kernel) / layer.stride + 1};
        break;
      }
      case LayerKind::MaxPool: {
        require(cur.size() == 3, ErrorKind::InvalidArgument, "maxpool after flatten");
        require(layer.window >= 1 && cur[1] >= layer.window && cur[2] >= layer.window,
                ErrorKind::InvalidArgument, "maxpool window does not fit " + shape_string(cur));
        cur = {cur[0], cur[1] / layer.window, cur[2] / layer.window};
        break;
      }
      case LayerKind::Flatten: cur = {shape_size(cur)}; break;
      case LayerKind::Dense: {
        require(cur.size() == 1, ErrorKind::InvalidArgument, "dense before flatten");
        require(layer.width >= 1, ErrorKind::InvalidArgument, "dense width must be positive");
        cur = {layer.width};
        break;
      }
      case LayerKind::Relu:
      case LayerKind::Softmax: break;
    }
    shapes.push_back(cur);
  }
  return shapes;
}

void NetworkSpec::validate() const {
  const auto flattens = std::count_if(layers.begin(), layers.end(),
                                      [](const Layer& l) { return l.kind == LayerKind::Flatten; });
  require(flattens == 1, ErrorKind::InvalidArgument, "network needs exactly one flatten layer");
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].kind == LayerKind::Softmax)
      require(i + 1 == layers.size(), ErrorKind::InvalidArgument, "softmax must be the last layer");
  const auto shapes = layer_shapes();
  const auto li = logits_index();
  require(shapes[li] == Shape{2}, ErrorKind::InvalidArgument,
          "final dense layer must have width 2");
}

std::size_t NetworkSpec::flatten_index() const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].kind == LayerKind::Flatten) return i;
  fail(ErrorKind::InvalidArgument, "network has no flatten layer");
}

std::size_t NetworkSpec::flatten_width() const { return layer_shapes()[flatten_index()][0]; }

std::size_t NetworkSpec::logits_index() const {
  for (std::size_t i = layers.size(); i-- > 0;)
    if (layers[i].kind == LayerKind::Dense) return i;
  fail(ErrorKind::InvalidArgument, "network has no dense output layer");
}

std::size_t NetworkSpec::conv_layer_count() const {
  return static_cast<std::size_t>(std::count_if(
      layers.begin(), layers.end(), [](const Layer& l) { return l.kind == LayerKind::Conv2d; }));
}

NetworkSpec preset(std::string_view id) {
  NetworkSpec spec;
  spec.name = std::string(id);
  auto& L = spec.layers;
  if (id == "N1") {
    // 64 -> 62 -> 31 -> 29 -> 14 -> 12 -> 6; 48 * 6 * 6 = 1728
    for (std::size_t ch : {4, 8, 48}) {
      L.push_back(Layer::conv2d(ch, 3));
      L.push_back(Layer::relu());
      L.push_back(Layer::maxpool(2));
    }
    L.push_back(Layer::flatten());
    L.push_back(Layer::dense(2));
    L.push_back(Layer::softmax());
  } else if (id == "N2") {
    // 64 -> 58 -> 29 -> 23 -> 11 -> 5; 128 * 5 * 5 = 3200. A pool after the
    // ninth conv would leave 2x2 maps, so the last block feeds flatten directly.
    const std::size_t channels[9] = {8, 8, 8, 16, 16, 16, 32, 32, 128};
    for (int i = 0; i < 9; ++i) {
      L.push_back(Layer::conv2d(channels[i], 3));
      L.push_back(Layer::relu());
      if (i == 2 || i == 5) L.push_back(Layer::maxpool(2));
    }
    L.push_back(Layer::flatten());
    L.push_back(Layer::dense(32));
    L.push_back(Layer::relu());
    L.push_back(Layer::dense(2));
    L.push_back(Layer::softmax());
  } else {
    fail(ErrorKind::InvalidArgument, "unknown network preset: " + std::string(id));
  }
  spec.validate();
  return spec;
}

void TrainConfig::validate() const {
  require(batch >= 1, ErrorKind::InvalidArgument, "train batch must be >= 1");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorKind::InvalidArgument,
          "learning rate must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0,
          ErrorKind::InvalidArgument, "invalid Adam parameters");
}

TrainConfig preset_train_config(std::string_view id) {
  TrainConfig c;
  if (id == "N1") {
    c.epochs = 20;
    c.batch = 64;
    c.learning_rate = 1e-6;
  } else if (id == "N2") {
    c.epochs = 10;
    c.batch = 16;
    c.learning_rate = 1e-4;
  } else {
    fail(ErrorKind::InvalidArgument, "unknown network preset: " + std::string(id));
  }
  return c;
}

// ---------------------------------------------------------------- model

std::size_t TrainedModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& w : weights) n += w.kernel.size() + w.bias.size();
  return n;
}

TrainedModel init_model(const NetworkSpec& spec, std::uint64_t seed, std::string id) {
  spec.validate();
  TrainedModel model;
  model.spec = spec;
  model.id = std::move(id);
  model.weights.resize(spec.layers.size());
  Rng rng(seed);
  Shape cur = spec.input_shape;
  const auto shapes = spec.layer_shapes();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& layer = spec.layers[i];
    if (layer.kind == LayerKind::Conv2d) {
      const std::size_t k = layer.kernel;
      Tensor kernel({layer.out_channels, cur[0], k, k});
      const double fan_in = static_cast<double>(cur[0] * k * k);
      const double fan_out = static_cast<double>(layer.out_channels * k * k);
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (auto& w : kernel.data) w = static_cast<float>(rng.uniform(-limit, limit));
      model.weights[i] = {std::move(kernel), Tensor({layer.out_channels})};
    } else if (layer.kind == LayerKind::Dense) {
      Tensor kernel({layer.width, cur[0]});
      const double limit = std::sqrt(6.0 / static_cast<double>(cur[0] + layer.width));
      for (auto& w : kernel.data) w = static_cast<float>(rng.uniform(-limit, limit));
      model.weights[i] = {std::move(kernel), Tensor({layer.width})};
    }
    cur = shapes[i];
  }
  if (spec.constrained_first_conv) apply_bayar_constraint(model);
  return model;
}

Gradients zero_gradients(const TrainedModel& model) {
  Gradients g(model.weights.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (model.weights[i].kernel.size() == 0) continue;
    g[i].kernel = Tensor(model.weights[i].kernel.shape);
    g[i].bias = Tensor(model.weights[i].bias.shape);
  }
  return g;
}

// ---------------------------------------------------------------- forward

namespace {

void conv_forward(const float* in, std::size_t C, std::size_t H, std::size_t W, const Tensor& kernel,
                  const Tensor& bias, std::size_t stride, float* out, std::size_t Ho,
                  std::size_t Wo) {
  const std::size_t O = kernel.shape[0];
  const std::size_t K = kernel.shape[2];
  for (std::size_t o = 0; o < O; ++o) {
    float* outc = out + o * Ho * Wo;
    std::fill(outc, outc + Ho * Wo, bias[o]);
    for (std::size_t c = 0; c < C; ++c) {
      const float* inc = in + c * H * W;
      const float* wk = kernel.data.data() + ((o * C + c) * K) * K;
      for (std::size_t ky = 0; ky < K; ++ky)
        for (std::size_t kx = 0; kx < K; ++kx) {
          const float w = wk[ky * K + kx];
          for (std::size_t oy = 0; oy < Ho; ++oy) {
            const float* irow = inc + (oy * stride + ky) * W + kx;
            float* orow = outc + oy * Wo;
            if (stride == 1) {
              for (std::size_t ox = 0; ox < Wo; ++ox) orow[ox] += w * irow[ox];
            } else {
              for (std::size_t ox = 0; ox < Wo; ++ox) orow[ox] += w * irow[ox * stride];
            }
          }
        }
    }
  }
}

void conv_backward(const float* in, std::size_t C, std::size_t H, std::size_t W,
                   const Tensor& kernel, std::size_t stride, const float* dout, std::size_t Ho,
                   std::size_t Wo, LayerWeights* grad, float* din) {
  const std::size_t O = kernel.shape[0];
  const std::size_t K = kernel.shape[2];
  for (std::size_t o = 0; o < O; ++o) {
    const float* doutc = dout + o * Ho * Wo;
    if (grad) {
      double b = 0.0;
      for (std::size_t j = 0; j < Ho * Wo; ++j) b += doutc[j];
      grad->bias[o] += static_cast<float>(b);
    }
    for (std::size_t c = 0; c < C; ++c) {
      const float* inc = in + c * H * W;
      float* dinc = din ? din + c * H * W : nullptr;
      const float* wk = kernel.data.data() + ((o * C + c) * K) * K;
      float* gk = grad ? grad->kernel.data.data() + ((o * C + c) * K) * K : nullptr;
      for (std::size_t ky = 0; ky < K; ++ky)
        for (std::size_t kx = 0; kx < K; ++kx) {
          const float w = wk[ky * K + kx];
          float acc = 0.0f;
          for (std::size_t oy = 0; oy < Ho; ++oy) {
            const float* drow = doutc + oy * Wo;
            const std::size_t base = (oy * stride + ky) * W + kx;
            if (gk) {
              const float* irow = inc + base;
              float racc = 0.0f;
              for (std::size_t ox = 0; ox < Wo; ++ox) racc += drow[ox] * irow[ox * stride];
              acc += racc;
            }
            if (dinc) {
              float* dirow = dinc + base;
              for (std::size_t ox = 0; ox < Wo; ++ox) dirow[ox * stride] += w * drow[ox];
            }
          }
          if (gk) gk[ky * K + kx] += acc;
        }
    }
  }
}

}  // namespace

Trace forward_trace(const TrainedModel& model, std::span<const float> input) {
  const auto& spec = model.spec;
  require(input.size() == shape_size(spec.input_shape), ErrorKind::ShapeMismatch,
          "input length " + std::to_string(input.size()) + " does not match network input " +
              shape_string(spec.input_shape));
  const auto shapes = spec.layer_shapes();
  Trace t;
  t.activations.reserve(spec.layers.size() + 1);
  t.activations.emplace_back(input.begin(), input.end());
  t.argmax.resize(spec.layers.size());
  Shape cur = spec.input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& layer = spec.layers[i];
    const auto& in = t.activations.back();
    std::vector<float> out(shape_size(shapes[i]));
    switch (layer.kind) {
      case LayerKind::Conv2d:
        conv_forward(in.data(), cur[0], cur[1], cur[2], model.weights[i].kernel,
                     model.weights[i].bias, layer.stride, out.data(), shapes[i][1], shapes[i][2]);
        break;
      case LayerKind::Relu:
        for (std::size_t j = 0; j < in.size(); ++j) out[j] = in[j] > 0.0f ? in[j] : 0.0f;
        break;
      case LayerKind::MaxPool: {
        const std::size_t C = cur[0], H = cur[1], W = cur[2], P = layer.window;
        const std::size_t Ho = shapes[i][1], Wo = shapes[i][2];
        auto& arg = t.argmax[i];
        arg.resize(out.size());
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t oy = 0; oy < Ho; ++oy)
            for (std::size_t ox = 0; ox < Wo; ++ox) {
              std::size_t best = c * H * W + (oy * P) * W + ox * P;
              for (std::size_t py = 0; py < P; ++py)
                for (std::size_t px = 0; px < P; ++px) {
                  const std::size_t idx = c * H * W + (oy * P + py) * W + ox * P + px;
                  if (in[idx] > in[best]) best = idx;
                }
              const std::size_t o = (c * Ho + oy) * Wo + ox;
              out[o] = in[best];
              arg[o] = static_cast<std::uint32_t>(best);
            }
        break;
      }
      case LayerKind::Flatten: out = in; break;
      case LayerKind::Dense: {
        const auto& Wt = model.weights[i].kernel;
        const std::size_t n_in = in.size();
        for (std::size_t j = 0; j < layer.width; ++j) {
          const float* row = Wt.data.data() + j * n_in;
          float acc = model.weights[i].bias[j];
          for (std::size_t k = 0; k < n_in; ++k) acc += row[k] * in[k];
          out[j] = acc;
        }
        break;
      }
      case LayerKind::Softmax: {
        const auto p = softmax(in);
        for (std::size_t j = 0; j < p.size(); ++j) out[j] = static_cast<float>(p[j]);
        break;
      }
    }
    cur = shapes[i];
    t.activations.push_back(std::move(out));
  }
  require_finite(t.activations[spec.logits_index() + 1], "network activations");
  return t;
}

std::vector<float> logits(const TrainedModel& model, std::span<const float> input) {
  auto t = forward_trace(model, input);
  return std::move(t.activations[model.spec.logits_index() + 1]);
}

void backward(const TrainedModel& model, const Trace& trace, std::span<const float> dlogits,
              Gradients* param_grads, std::vector<float>* input_grad) {
  const auto& spec = model.spec;
  require(trace.activations.size() == spec.layers.size() + 1, ErrorKind::InvalidArgument,
          "backward needs a recorded forward pass");
  const std::size_t top = spec.logits_index();
  require(dlogits.size() == trace.activations[top + 1].size(), ErrorKind::ShapeMismatch,
          "logit gradient length mismatch");
  const auto shapes = spec.layer_shapes();
  std::vector<float> grad(dlogits.begin(), dlogits.end());
  for (std::size_t i = top + 1; i-- > 0;) {
    const auto& layer = spec.layers[i];
    const auto& in = trace.activations[i];
    const Shape& in_shape = i == 0 ? spec.input_shape : shapes[i - 1];
    const bool need_input = i > 0 || input_grad != nullptr;
    std::vector<float> gin(need_input ? in.size() : 0, 0.0f);
    LayerWeights* pg = param_grads && layer.has_params() ? &(*param_grads)[i] : nullptr;
    switch (layer.kind) {
      case LayerKind::Conv2d:
        conv_backward(in.data(), in_shape[0], in_shape[1], in_shape[2], model.weights[i].kernel,
                      layer.stride, grad.data(), shapes[i][1], shapes[i][2], pg,
                      need_input ? gin.data() : nullptr);
        break;
      case LayerKind::Relu:
        if (need_input)
          for (std::size_t j = 0; j < in.size(); ++j) gin[j] = in[j] > 0.0f ? grad[j] : 0.0f;
        break;
      case LayerKind::MaxPool:
        if (need_input) {
          const auto& arg = trace.argmax[i];
          for (std::size_t j = 0; j < grad.size(); ++j) gin[arg[j]] += grad[j];
        }
        break;
      case LayerKind::Flatten:
        if (need_input) gin = grad;
        break;
      case LayerKind::Dense: {
        const auto& Wt = model.weights[i].kernel;
        const std::size_t n_in = in.size();
        for (std::size_t j = 0; j < layer.width; ++j) {
          const float g = grad[j];
          const float* row = Wt.data.data() + j * n_in;
          if (pg) {
            pg->bias[j] += g;
            float* grow = pg->kernel.data.data() + j * n_in;
            for (std::size_t k = 0; k < n_in; ++k) grow[k] += g * in[k];
          }
          if (need_input)
            for (std::size_t k = 0; k < n_in; ++k) gin[k] += row[k] * g;
        }
        break;
      }
      case LayerKind::Softmax:
        fail(ErrorKind::InvalidArgument, "softmax below the logits layer");
    }
    if (!need_input) break;
    grad = std::move(gin);
  }
  if (input_grad) {
    require_finite(grad, "input gradient");
    *input_grad = std::move(grad);
  }
}

std::vector<double> softmax(std::span<const float> z) {
  double mx = z[0];
  for (float v : z) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> p(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(static_cast<double>(z[i]) - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

double cross_entropy(std::span<const float> z, Label label) {
  double mx = z[0];
  for (float v : z) mx = std::max(mx, static_cast<double>(v));
  double sum = 0.0;
  for (float v : z) sum += std::exp(static_cast<double>(v) - mx);
  return std::log(sum) + mx - static_cast<double>(z[label_index(label)]);
}

namespace {

// d(CE)/d(logits) = softmax - onehot.
std::vector<float> ce_logit_gradient(std::span<const float> z, Label label, double scale) {
  const auto p = softmax(z);
  std::vector<float> g(z.size());
  for (std::size_t k = 0; k < z.size(); ++k)
    g[k] = static_cast<float>(scale * (p[k] - (static_cast<int>(k) == label_index(label) ? 1.0 : 0.0)));
  return g;
}

}  // namespace

BatchForward forward_loss(const TrainedModel& model, std::span<const ImageSample> batch) {
  require(!batch.empty(), ErrorKind::InvalidArgument, "forward_loss on an empty batch");
  BatchForward out;
  out.logits = Tensor({batch.size(), 2});
  out.traces.reserve(batch.size());
  double loss = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    out.traces.push_back(forward_trace(model, batch[b].pixels.data));
    const auto z = out.traces.back().logits(model.spec);
    out.logits[2 * b] = z[0];
    out.logits[2 * b + 1] = z[1];
    out.labels.push_back(batch[b].label);
    loss += cross_entropy(z, batch[b].label);
  }
  out.loss = loss / static_cast<double>(batch.size());
  if (!std::isfinite(out.loss)) fail(ErrorKind::NonFinite, "non-finite loss");
  return out;
}

Gradients backward_gradients(const TrainedModel& model, const BatchForward& forward) {
  require(!forward.traces.empty() && forward.traces.size() == forward.labels.size(),
          ErrorKind::InvalidArgument, "backward_gradients called without a forward pass");
  Gradients grads = zero_gradients(model);
  const double scale = 1.0 / static_cast<double>(forward.traces.size());
  for (std::size_t b = 0; b < forward.traces.size(); ++b) {
    const auto& t = forward.traces[b];
    const auto g = ce_logit_gradient(t.logits(model.spec), forward.labels[b], scale);
    backward(model, t, g, &grads, nullptr);
  }
  for (const auto& g : grads) {
    require_finite(g.kernel.data, "parameter gradient");
    require_finite(g.bias.data, "parameter gradient");
  }
  return grads;
}

Tensor input_gradient(const TrainedModel& model, const Tensor& input, Label label) {
  const auto t = forward_trace(model, input.data);
  const auto g = ce_logit_gradient(t.logits(model.spec), label, 1.0);
  std::vector<float> gin;
  backward(model, t, g, nullptr, &gin);
  return Tensor(input.shape, std::move(gin));
}

std::pair<std::vector<float>, std::vector<float>> logit_combination_gradient(
    const TrainedModel& model, std::span<const float> input, std::span<const float> coeffs) {
  const auto t = forward_trace(model, input);
  const auto z = t.logits(model.spec);
  std::vector<float> gin;
  backward(model, t, coeffs, nullptr, &gin);
  return {std::vector<float>(z.begin(), z.end()), std::move(gin)};
}

// ---------------------------------------------------------------- Adam

AdamState init_adam(const TrainedModel& model) {
  return {zero_gradients(model), zero_gradients(model), 0};
}

void adam_step(std::vector<LayerWeights>& weights, const Gradients& grads, AdamState& state,
               const TrainConfig& config) {
  require(weights.size() == grads.size() && weights.size() == state.m.size() &&
              weights.size() == state.v.size(),
          ErrorKind::ShapeMismatch, "adam_step: weight, gradient and state layouts differ");
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  auto update = [&](Tensor& w, const Tensor& g, Tensor& m, Tensor& v) {
    require(w.shape == g.shape && w.shape == m.shape && w.shape == v.shape,
            ErrorKind::ShapeMismatch, "adam_step: shape mismatch");
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      const double mj = config.beta1 * m[j] + (1.0 - config.beta1) * gj;
      const double vj = config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double step = config.learning_rate * (mj / c1) / (std::sqrt(vj / c2) + config.eps);
      w[j] = static_cast<float>(w[j] - step);
    }
  };
  for (std::size_t i = 0; i < weights.size(); ++i) {
    update(weights[i].kernel, grads[i].kernel, state.m[i].kernel, state.v[i].kernel);
    update(weights[i].bias, grads[i].bias, state.m[i].bias, state.v[i].bias);
  }
}

void apply_bayar_constraint(TrainedModel& model) {
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    if (model.spec.layers[i].kind != LayerKind::Conv2d) continue;
    auto& k = model.weights[i].kernel;
    const std::size_t K = k.shape[2];
    const std::size_t centre = (K / 2) * K + K / 2;
    const std::size_t taps = K * K;
    for (std::size_t f = 0; f < k.shape[0] * k.shape[1]; ++f) {
      float* w = k.data.data() + f * taps;
      w[centre] = 0.0f;
      double sum = 0.0;
      for (std::size_t j = 0; j < taps; ++j) sum += w[j];
      if (std::abs(sum) < 1e-12) {
        for (std::size_t j = 0; j < taps; ++j)
          if (j != centre) w[j] = static_cast<float>(1.0 / static_cast<double>(taps - 1));
      } else {
        for (std::size_t j = 0; j < taps; ++j) w[j] = static_cast<float>(w[j] / sum);
      }
      w[centre] = -1.0f;
    }
    return;
  }
}

// ---------------------------------------------------------------- training

namespace {

std::pair<double, double> evaluate(const TrainedModel& model, std::span<const ImageSample> set) {
  double loss = 0.0;
  std::size_t correct = 0;
  for (const auto& s : set) {
    const auto z = logits(model, s.pixels.data);
    loss += cross_entropy(z, s.label);
    if (predict_from_logits(z) == s.label) ++correct;
  }
  const double n = static_cast<double>(set.size());
  return {loss / n, static_cast<double>(correct) / n};
}

void check_two_classes(std::span<const ImageSample> set, const char* what) {
  require(!set.empty(), ErrorKind::Data, std::string(what) + " set is empty");
  bool seen[2] = {false, false};
  for (const auto& s : set) seen[label_index(s.label)] = true;
  require(seen[0] && seen[1], ErrorKind::Data, std::string(what) + " set has a single class");
}

}  // namespace

void continue_training(TrainedModel& model, std::span<const ImageSample> train_set,
                       std::span<const ImageSample> validation_set, const TrainConfig& config) {
  config.validate();
  if (config.epochs == 0) return;
  check_two_classes(train_set, "training");
  require(!validation_set.empty(), ErrorKind::Data, "validation set is empty");
  AdamState state = init_adam(model);
  std::vector<std::size_t> order(train_set.size());
  std::vector<ImageSample> batch;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(config.seed, epoch));
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      batch.clear();
      for (std::size_t j = start; j < end; ++j) batch.push_back(train_set[order[j]]);
      const auto fwd = forward_loss(model, batch);
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const float z[2] = {fwd.logits[2 * b], fwd.logits[2 * b + 1]};
        if (predict_from_logits(z) == batch[b].label) ++correct;
      }
      loss_sum += fwd.loss * static_cast<double>(batch.size());
      const auto grads = backward_gradients(model, fwd);
      adam_step(model.weights, grads, state, config);
      if (model.spec.constrained_first_conv) apply_bayar_constraint(model);
    }
    EpochStats stats;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    if (!std::isfinite(stats.train_loss)) fail(ErrorKind::NonFinite, "training loss diverged");
    std::tie(stats.val_loss, stats.val_accuracy) = evaluate(model, validation_set);
    model.history.push_back(stats);
  }
}

TrainedModel train(const NetworkSpec& spec, const DatasetSplit& data, const TrainConfig& config,
                   std::string id) {
  config.validate();
  check_two_classes(data.train, "training");
  require(!data.validation.empty(), ErrorKind::Data, "validation set is empty");
  TrainedModel model = init_model(spec, derive_seed(config.seed, "init"),
                                  id.empty() ? spec.name : std::move(id));
  TrainConfig loop = config;
  loop.seed = derive_seed(config.seed, "shuffle");
  continue_training(model, data.train, data.validation, loop);
  return model;
}

// ---------------------------------------------------------------- inference

Label predict_from_logits(std::span<const float> z) {
  return z[1] > z[0] ? Label::Manipulated : Label::Pristine;
}

Label predict_label(const TrainedModel& model, std::span<const float> input) {
  return predict_from_logits(logits(model, input));
}

std::vector<Label> predict_labels(const TrainedModel& model, std::span<const ImageSample> batch) {
  std::vector<Label> out;
  out.reserve(batch.size());
  for (const auto& s : batch) out.push_back(predict_label(model, s.pixels.data));
  return out;
}

double accuracy(const TrainedModel& model, std::span<const ImageSample> batch) {
  if (batch.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& s : batch)
    if (predict_label(model, s.pixels.data) == s.label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(batch.size());
}

FeatureMatrix extract_flatten_features(const TrainedModel& model,
                                       std::span<const ImageSample> batch) {
  const std::size_t fi = model.spec.flatten_index();
  const std::size_t width = model.spec.flatten_width();
  FeatureMatrix fm(batch.size(), width);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto t = forward_trace(model, batch[b].pixels.data);
    const auto& act = t.activations[fi + 1];
    std::copy(act.begin(), act.end(), fm.row(b).begin());
  }
  return fm;
}

// ---------------------------------------------------------------- serialization

namespace {
constexpr std::string_view kModelMagic = "FRSHIELD-NN";
constexpr std::uint32_t kModelVersion = 1;

void write_tensor(binio::Writer& w, const Tensor& t) {
  std::vector<std::uint64_t> shape(t.shape.begin(), t.shape.end());
  w.u64s(shape);
  w.f32s(t.data);
}

Tensor read_tensor(binio::Reader& r) {
  const auto shape = r.u64s();
  auto data = r.f32s();
  if (shape.empty()) {
    require(data.empty(), ErrorKind::Format, "tensor without shape carries data");
    return {};
  }
  return Tensor(Shape(shape.begin(), shape.end()), std::move(data));
}
}  // namespace

std::vector<std::uint8_t> serialize_model(const TrainedModel& model) {
  binio::Writer w(kModelMagic, kModelVersion);
  w.str(model.id);
  w.u64(model.provenance.size());
  for (const auto& [k, v] : model.provenance) {
    w.str(k);
    w.str(v);
  }
  const auto& spec = model.spec;
  w.str(spec.name);
  w.u64s(std::vector<std::uint64_t>(spec.input_shape.begin(), spec.input_shape.end()));
  w.u8(spec.constrained_first_conv ? 1 : 0);
  w.u64(spec.layers.size());
  for (const auto& l : spec.layers) {
    w.u8(static_cast<std::uint8_t>(l.kind));
    w.u64(l.out_channels);
    w.u64(l.kernel);
    w.u64(l.stride);
    w.u64(l.window);
    w.u64(l.width);
  }
  for (const auto& lw : model.weights) {
    write_tensor(w, lw.kernel);
    write_tensor(w, lw.bias);
  }
  w.u64(model.history.size());
  for (const auto& h : model.history) {
    w.f64(h.train_loss);
    w.f64(h.train_accuracy);
    w.f64(h.val_loss);
    w.f64(h.val_accuracy);
  }
  return w.bytes();
}

TrainedModel deserialize_model(std::vector<std::uint8_t> bytes) {
  binio::Reader r(std::move(bytes), kModelMagic, kModelVersion);
  TrainedModel m;
  m.id = r.str();
  const auto np = r.u64();
  for (std::uint64_t i = 0; i < np; ++i) {
    auto k = r.str();
    auto v = r.str();
    m.provenance.emplace_back(std::move(k), std::move(v));
  }
  m.spec.name = r.str();
  const auto in_shape = r.u64s();
  m.spec.input_shape.assign(in_shape.begin(), in_shape.end());
  m.spec.constrained_first_conv = r.u8() != 0;
  const auto nl = r.u64();
  require(nl < 4096, ErrorKind::Format, "implausible layer count");
  for (std::uint64_t i = 0; i < nl; ++i) {
    Layer l;
    const auto kind = r.u8();
    require(kind <= static_cast<std::uint8_t>(LayerKind::Softmax), ErrorKind::Format,
            "unknown layer kind");
    l.kind = static_cast<LayerKind>(kind);
    l.out_channels = r.u64();
    l.kernel = r.u64();
    l.stride = r.u64();
    l.window = r.u64();
    l.width = r.u64();
    m.spec.layers.push_back(l);
  }
  m.spec.validate();
  const auto reference = init_model(m.spec, 0);
  m.weights.resize(nl);
  for (std::size_t i = 0; i < nl; ++i) {
    m.weights[i].kernel = read_tensor(r);
    m.weights[i].bias = read_tensor(r);
    require(m.weights[i].kernel.shape == reference.weights[i].kernel.shape &&
                m.weights[i].bias.shape == reference.weights[i].bias.shape,
            ErrorKind::Format, "weight shapes inconsistent with network spec");
  }
  const auto nh = r.u64();
  for (std::uint64_t i = 0; i < nh; ++i) {
    EpochStats h;
    h.train_loss = r.f64();
    h.train_accuracy = r.f64();
    h.val_loss = r.f64();
    h.val_accuracy = r.f64();
    m.history.push_back(h);
  }
  r.expect_end();
  return m;
}

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  binio::write_file(path, serialize_model(model));
}

TrainedModel load_model(const std::filesystem::path& path) {
  return deserialize_model(binio::read_file(path));
}

}  // namespace frshield::nn
