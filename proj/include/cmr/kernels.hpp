#pragma once

#include <span>

#include "cmr/layers.hpp"
#include "cmr/tensor.hpp"

// OpenMP-parallel float kernels used by the network. Work is partitioned by
// output element so every value is accumulated in a fixed order: results are
// bitwise identical for any thread count. Serial templated counterparts live
// in reference_kernels.hpp and back the test oracles.
namespace cmr::kernels {

/// Valid (unpadded) dilated convolution; 64-bit accumulation.
Tensor conv2d_forward(const Tensor& x, const ConvLayerParams& p);

/// Analytic gradients of conv2d_forward. grad_x is skipped (left empty)
/// when `need_grad_x` is false, e.g. for the first layer.
ConvGradients conv2d_backward(const Tensor& x, const ConvLayerParams& p, const Tensor& grad_out,
                              bool need_grad_x = true);

/// Train mode normalizes with biased batch statistics over (batch, row, col)
/// and folds the unbiased batch variance into the running estimate.
Tensor batchnorm_forward(const Tensor& x, BatchNormParams& p, BatchNormMode mode);

/// Eval-mode normalization with the running statistics; never writes p.
Tensor batchnorm_inference(const Tensor& x, const BatchNormParams& p);

/// Gradient of the train-mode forward; batch statistics are recomputed from x.
BatchNormGradients batchnorm_backward(const Tensor& x, const BatchNormParams& p, const Tensor& grad_out);

Tensor relu(const Tensor& x);
/// Passes grad_out where x > 0.
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);

/// Softmax over each channel group per voxel; channels outside every group
/// are copied through unchanged.
Tensor grouped_softmax(const Tensor& logits, const ChannelGroups& groups);
/// Gradient w.r.t. the logits given the softmax output and dL/dprobs.
Tensor grouped_softmax_backward(const Tensor& probs, const Tensor& grad_probs, const ChannelGroups& groups);

/// p <- p - lr * (g + weight_decay * p)
void sgd_step(std::span<float> params, std::span<const float> grads, double lr, double weight_decay);

/// Reflect-pads every plane by `pad` on each side (mirror without repeating
/// the edge sample, folding repeatedly for planes narrower than `pad`).
Tensor reflect_pad(const Tensor& x, std::size_t pad);

/// Mirror index for reflect padding of a length-n axis.
std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n);

}  // namespace cmr::kernels
