#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "cmr/layers.hpp"
#include "cmr/tensor.hpp"

namespace cmr {

/// Segmentation classes per phase, in output-channel order.
enum class Structure : std::uint8_t { kBackground = 0, kRV = 1, kMyo = 2, kLV = 3 };
inline constexpr std::size_t kClassesPerPhase = 4;
/// Channel layout of the network output: ED classes then ES classes.
inline constexpr const char* kChannelOrder = "ED:BG,RV,Myo,LV;ES:BG,RV,Myo,LV";

struct SegNetConfig {
  /// One 3x3 hidden layer per entry; the receptive field is 1 + 2 * sum.
  std::vector<std::size_t> dilations{1, 1, 2, 4, 8, 16, 32, 1};
  std::size_t hidden_width = 32;
  std::size_t in_channels = 2;
  std::size_t out_channels = 8;
  std::size_t hidden_kernel = 3;
  /// Largest input extent the network is meant to see (the padded patch).
  std::size_t input_extent = 281;
  std::uint64_t init_seed = 0;
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-5;

  friend bool operator==(const SegNetConfig&, const SegNetConfig&) = default;
};

std::size_t receptive_field(const SegNetConfig& config);

struct HiddenLayer {
  ConvLayerParams conv;
  BatchNormParams bn;
  friend bool operator==(const HiddenLayer&, const HiddenLayer&) = default;
};

/// conv -> batch norm -> ReLU per hidden layer, then a 1x1 conv and the
/// two-group softmax.
struct Model {
  SegNetConfig config;
  std::vector<HiddenLayer> hidden;
  ConvLayerParams output;
  /// Training iteration at which this snapshot was taken (0 = fresh).
  std::uint64_t iteration = 0;

  friend bool operator==(const Model&, const Model&) = default;
};

/// He-normal initialization from config.init_seed; batch-norm scale 1,
/// shift 0, running statistics (0, 1).
Model build(const SegNetConfig& config);

/// Intermediate activations kept by a train-mode forward for backprop.
struct ForwardTrace {
  Tensor input;
  std::vector<Tensor> conv_out;  // hidden conv outputs (batch-norm inputs)
  std::vector<Tensor> bn_out;    // batch-norm outputs (ReLU inputs)
  std::vector<Tensor> act;       // ReLU outputs
  Tensor probs;
};

struct ModelGradients {
  std::vector<ConvGradients> hidden_conv;
  std::vector<BatchNormGradients> hidden_bn;
  ConvGradients output;
  Tensor grad_input;  // empty unless requested
};

/// Eval-mode forward: [b, 2, H, W] -> [b, 8, H - rf + 1, W - rf + 1].
Tensor forward(const Model& model, const Tensor& batch);

/// Forward in either mode. Train mode updates the batch-norm running
/// statistics; pass a trace to enable backward().
Tensor forward(Model& model, const Tensor& batch, BatchNormMode mode, ForwardTrace* trace = nullptr);

/// Backpropagates dL/dprobs through a train-mode trace.
ModelGradients backward(const Model& model, const ForwardTrace& trace, const Tensor& grad_probs,
                        bool need_input_grad = false);

/// One SGD step over all parameters. Weight decay applies to convolution
/// weights and biases; batch-norm scale and shift are not decayed.
void apply_sgd(Model& model, const ModelGradients& grads, double lr, double weight_decay);

std::size_t parameter_count(const Model& model);

/// Snapshot binary format, version 1.
inline constexpr std::uint32_t kSnapshotVersion = 1;
std::vector<std::uint8_t> serialize_snapshot(const Model& model);
Model deserialize_snapshot(std::span<const std::uint8_t> bytes);
void save_snapshot(const Model& model, const std::filesystem::path& path);
Model load_snapshot(const std::filesystem::path& path);

}  // namespace cmr
