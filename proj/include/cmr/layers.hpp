#pragma once

#include <cstddef>
#include <vector>

#include "cmr/tensor.hpp"

namespace cmr {

/// Dilated square-kernel convolution parameters.
/// weights: [out_ch, in_ch, k, k]; bias: [out_ch].
template <typename T>
struct BasicConvParams {
  BasicTensor<T> weights;
  std::vector<T> bias;
  std::size_t dilation = 1;

  [[nodiscard]] std::size_t out_channels() const { return weights.batch(); }
  [[nodiscard]] std::size_t in_channels() const { return weights.channels(); }
  [[nodiscard]] std::size_t kernel() const { return weights.rows(); }
  /// Spatial extent consumed per axis by a valid convolution.
  [[nodiscard]] std::size_t reach() const { return dilation * (kernel() - 1); }

  friend bool operator==(const BasicConvParams&, const BasicConvParams&) = default;
};

/// Per-channel batch normalization state. Running statistics follow
/// running = momentum * running + (1 - momentum) * batch.
template <typename T>
struct BasicBatchNormParams {
  std::vector<T> scale;
  std::vector<T> shift;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  double momentum = 0.9;
  double epsilon = 1e-5;

  BasicBatchNormParams() = default;
  explicit BasicBatchNormParams(std::size_t channels)
      : scale(channels, T{1}), shift(channels, T{0}), running_mean(channels, T{0}), running_var(channels, T{1}) {}

  [[nodiscard]] std::size_t channels() const { return scale.size(); }

  friend bool operator==(const BasicBatchNormParams&, const BasicBatchNormParams&) = default;
};

enum class BatchNormMode { kTrain, kEval };

template <typename T>
struct BasicConvGradients {
  BasicTensor<T> grad_x;  // empty when not requested
  BasicTensor<T> grad_w;
  std::vector<T> grad_b;
};

template <typename T>
struct BasicBatchNormGradients {
  BasicTensor<T> grad_x;
  std::vector<T> grad_scale;
  std::vector<T> grad_shift;
};

using ConvLayerParams = BasicConvParams<float>;
using BatchNormParams = BasicBatchNormParams<float>;
using ConvGradients = BasicConvGradients<float>;
using BatchNormGradients = BasicBatchNormGradients<float>;

/// Channel index lists normalized jointly by grouped softmax.
using ChannelGroups = std::vector<std::vector<std::size_t>>;

/// The two 4-class phase groups of the segmentation output (ED, ES).
ChannelGroups phase_groups();

/// Throws InputError if a group is empty, out of range, or overlaps another.
void validate_groups(const ChannelGroups& groups, std::size_t channels);

/// Output spatial extent of a valid dilated convolution; throws InputError
/// when the input is smaller than the kernel footprint.
std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t dilation);

}  // namespace cmr
