#pragma once

// Small differentiable CNN engine: forward pass, reverse-mode gradients with
// respect to parameters and inputs, Adam, and the N1/N2 presets.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "frshield/sample.hpp"
#include "frshield/tensor.hpp"

namespace frshield::nn {

enum class LayerKind : std::uint8_t { Conv2d, Relu, MaxPool, Flatten, Dense, Softmax };

const char* layer_kind_name(LayerKind kind) noexcept;

struct Layer {
  LayerKind kind = LayerKind::Relu;
  std::size_t out_channels = 0;  // conv2d
  std::size_t kernel = 0;        // conv2d, square, no padding
  std::size_t stride = 1;        // conv2d
  std::size_t window = 0;        // maxpool, stride == window
  std::size_t width = 0;         // dense

  static Layer conv2d(std::size_t out_channels, std::size_t kernel, std::size_t stride = 1) {
    return {LayerKind::Conv2d, out_channels, kernel, stride, 0, 0};
  }
  static Layer relu() { return {LayerKind::Relu}; }
  static Layer maxpool(std::size_t window) { return {LayerKind::MaxPool, 0, 0, 1, window, 0}; }
  static Layer flatten() { return {LayerKind::Flatten}; }
  static Layer dense(std::size_t width) { return {LayerKind::Dense, 0, 0, 1, 0, width}; }
  static Layer softmax() { return {LayerKind::Softmax}; }

  bool has_params() const noexcept { return kind == LayerKind::Conv2d || kind == LayerKind::Dense; }
  friend bool operator==(const Layer&, const Layer&) = default;
};

struct NetworkSpec {
  std::string name;
  Shape input_shape{1, kImageSide, kImageSide};  // channels, height, width
  std::vector<Layer> layers;
  // Bayar-style constraint on the first conv layer, re-applied after every update.
  bool constrained_first_conv = false;

  // Throws InvalidArgument unless: exactly one flatten, no conv/pool after it,
  // final dense of width 2, optional trailing softmax, all spatial sizes positive.
  void validate() const;
  // Output shape of every layer, in order.
  std::vector<Shape> layer_shapes() const;
  std::size_t flatten_index() const;
  std::size_t flatten_width() const;
  // Index of the layer whose output is the logits (the final dense).
  std::size_t logits_index() const;
  std::size_t conv_layer_count() const;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

// "N1": three conv/relu/pool blocks, flatten width 1728.
// "N2": nine conv layers in three blocks, flatten width 3200.
NetworkSpec preset(std::string_view id);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch = 64;
  double learning_rate = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

// Reference learning parameters for each preset: N1 20 epochs / batch 64 /
// lr 1e-6, N2 10 epochs / batch 16 / lr 1e-4.
TrainConfig preset_train_config(std::string_view id);

// Kernel and bias of one layer; both empty for parameter-free layers.
struct LayerWeights {
  Tensor kernel;
  Tensor bias;
  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

using Gradients = std::vector<LayerWeights>;

struct EpochStats {
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

struct TrainedModel {
  NetworkSpec spec;
  std::vector<LayerWeights> weights;  // one entry per layer
  std::vector<EpochStats> history;
  std::string id;
  // Free-form key/value provenance (e.g. which attack a tuned model saw).
  std::vector<std::pair<std::string, std::string>> provenance;

  std::size_t parameter_count() const;
  friend bool operator==(const TrainedModel&, const TrainedModel&) = default;
};

// Glorot-uniform kernels, zero biases.
TrainedModel init_model(const NetworkSpec& spec, std::uint64_t seed, std::string id = {});

// Zero-valued gradient buffers shaped like the model's weights.
Gradients zero_gradients(const TrainedModel& model);

// Activations recorded during one forward pass of one sample.
struct Trace {
  std::vector<std::vector<float>> activations;  // [0] is the input, [i+1] is layer i's output
  std::vector<std::vector<std::uint32_t>> argmax;  // per layer; filled for maxpool only

  std::span<const float> logits(const NetworkSpec& spec) const {
    return activations[spec.logits_index() + 1];
  }
};

Trace forward_trace(const TrainedModel& model, std::span<const float> input);

// Logits for one input.
std::vector<float> logits(const TrainedModel& model, std::span<const float> input);

// Back-propagates `dlogits` through the network. Parameter gradients are
// accumulated into `param_grads` (if non-null); the input gradient is written
// to `input_grad` (if non-null).
void backward(const TrainedModel& model, const Trace& trace, std::span<const float> dlogits,
              Gradients* param_grads, std::vector<float>* input_grad);

// Softmax of two or more logits, computed stably.
std::vector<double> softmax(std::span<const float> logits);
// Cross-entropy of softmax(logits) against `label`, in double precision.
double cross_entropy(std::span<const float> logits, Label label);

struct BatchForward {
  Tensor logits;  // (batch, 2)
  double loss = 0.0;
  std::vector<Trace> traces;
  std::vector<Label> labels;
};

// Mean cross-entropy over a non-empty batch.
BatchForward forward_loss(const TrainedModel& model, std::span<const ImageSample> batch);

// Gradients of the mean loss recorded by `forward_loss`. Throws
// InvalidArgument when `forward` holds no recorded pass.
Gradients backward_gradients(const TrainedModel& model, const BatchForward& forward);

// d(cross-entropy)/d(input) at (input, label).
Tensor input_gradient(const TrainedModel& model, const Tensor& input, Label label);

// Gradient of sum_k coeffs[k] * logit_k with respect to the input; also
// returns the logits at `input`.
std::pair<std::vector<float>, std::vector<float>> logit_combination_gradient(
    const TrainedModel& model, std::span<const float> input, std::span<const float> coeffs);

struct AdamState {
  Gradients m;
  Gradients v;
  std::uint64_t step = 0;
};

AdamState init_adam(const TrainedModel& model);

// One bias-corrected Adam update of `weights`.
void adam_step(std::vector<LayerWeights>& weights, const Gradients& grads, AdamState& state,
               const TrainConfig& config);

// Sets the first conv layer's kernels to centre -1 with the other taps summing to 1.
void apply_bayar_constraint(TrainedModel& model);

// Fresh model trained on split.train, validated on split.validation.
TrainedModel train(const NetworkSpec& spec, const DatasetSplit& data, const TrainConfig& config,
                   std::string id = {});

// Continues training `model` from its current weights, appending to its history.
void continue_training(TrainedModel& model, std::span<const ImageSample> train_set,
                       std::span<const ImageSample> validation_set, const TrainConfig& config);

// Argmax label per sample; an exact tie resolves to pristine.
std::vector<Label> predict_labels(const TrainedModel& model, std::span<const ImageSample> batch);
Label predict_label(const TrainedModel& model, std::span<const float> input);
Label predict_from_logits(std::span<const float> logits);

double accuracy(const TrainedModel& model, std::span<const ImageSample> batch);

// Activations at the flatten layer, one row per sample.
FeatureMatrix extract_flatten_features(const TrainedModel& model,
                                       std::span<const ImageSample> batch);

// Model container "FRSHIELD-NN".
void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_model(const TrainedModel& model);
TrainedModel deserialize_model(std::vector<std::uint8_t> bytes);

}  // namespace frshield::nn
