#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "cmr/layers.hpp"
#include "cmr/tensor.hpp"

// Serial, loop-by-loop implementations of every network kernel, templated on
// the value type. They define the semantics the parallel kernels must match
// and are instantiated in double by the finite-difference tests.
namespace cmr::reference {

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const BasicConvParams<T>& p) {
  const std::size_t k = p.kernel();
  const std::size_t d = p.dilation;
  if (x.channels() != p.in_channels()) throw InputError("conv2d: channel mismatch");
  const std::size_t ho = conv_output_extent(x.rows(), k, d);
  const std::size_t wo = conv_output_extent(x.cols(), k, d);
  BasicTensor<T> y({x.batch(), p.out_channels(), ho, wo});
  for (std::size_t n = 0; n < x.batch(); ++n)
    for (std::size_t o = 0; o < p.out_channels(); ++o)
      for (std::size_t r = 0; r < ho; ++r)
        for (std::size_t c = 0; c < wo; ++c) {
          double acc = 0.0;
          for (std::size_t i = 0; i < p.in_channels(); ++i)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx)
                acc += static_cast<double>(p.weights.at(o, i, ky, kx)) *
                       static_cast<double>(x.at(n, i, r + ky * d, c + kx * d));
          y.at(n, o, r, c) = static_cast<T>(acc + static_cast<double>(p.bias[o]));
        }
  return y;
}

template <typename T>
BasicConvGradients<T> conv2d_backward(const BasicTensor<T>& x, const BasicConvParams<T>& p,
                                      const BasicTensor<T>& grad_out) {
  const std::size_t k = p.kernel();
  const std::size_t d = p.dilation;
  const std::size_t ho = grad_out.rows();
  const std::size_t wo = grad_out.cols();
  BasicConvGradients<T> g;
  g.grad_x = BasicTensor<T>(x.shape());
  g.grad_w = BasicTensor<T>(p.weights.shape());
  g.grad_b.assign(p.out_channels(), T{0});

  std::vector<double> gx(x.size(), 0.0);
  for (std::size_t o = 0; o < p.out_channels(); ++o) {
    double gb = 0.0;
    for (std::size_t n = 0; n < x.batch(); ++n)
      for (std::size_t r = 0; r < ho; ++r)
        for (std::size_t c = 0; c < wo; ++c) gb += grad_out.at(n, o, r, c);
    g.grad_b[o] = static_cast<T>(gb);
    for (std::size_t i = 0; i < p.in_channels(); ++i)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          double gw = 0.0;
          const double w = p.weights.at(o, i, ky, kx);
          for (std::size_t n = 0; n < x.batch(); ++n)
            for (std::size_t r = 0; r < ho; ++r)
              for (std::size_t c = 0; c < wo; ++c) {
                const double go = grad_out.at(n, o, r, c);
                gw += go * static_cast<double>(x.at(n, i, r + ky * d, c + kx * d));
                gx[x.offset(n, i, r + ky * d, c + kx * d)] += go * w;
              }
          g.grad_w.at(o, i, ky, kx) = static_cast<T>(gw);
        }
  }
  for (std::size_t j = 0; j < gx.size(); ++j) g.grad_x.data()[j] = static_cast<T>(gx[j]);
  return g;
}

namespace detail {

template <typename T>
void channel_stats(const BasicTensor<T>& x, std::size_t c, double& mean, double& var) {
  const double count = static_cast<double>(x.batch() * x.rows() * x.cols());
  double sum = 0.0;
  for (std::size_t n = 0; n < x.batch(); ++n)
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t q = 0; q < x.cols(); ++q) sum += x.at(n, c, r, q);
  mean = sum / count;
  double ss = 0.0;
  for (std::size_t n = 0; n < x.batch(); ++n)
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t q = 0; q < x.cols(); ++q) {
        const double dv = x.at(n, c, r, q) - mean;
        ss += dv * dv;
      }
  var = ss / count;
}

}  // namespace detail

template <typename T>
BasicTensor<T> batchnorm_forward(const BasicTensor<T>& x, BasicBatchNormParams<T>& p, BatchNormMode mode) {
  if (x.channels() != p.channels()) throw InputError("batchnorm: channel mismatch");
  BasicTensor<T> y(x.shape());
  const double count = static_cast<double>(x.batch() * x.rows() * x.cols());
  for (std::size_t c = 0; c < x.channels(); ++c) {
    double mean = 0.0;
    double var = 0.0;
    if (mode == BatchNormMode::kTrain) {
      detail::channel_stats(x, c, mean, var);
      const double unbiased = count > 1 ? var * count / (count - 1) : var;
      p.running_mean[c] = static_cast<T>(p.momentum * p.running_mean[c] + (1 - p.momentum) * mean);
      p.running_var[c] = static_cast<T>(p.momentum * p.running_var[c] + (1 - p.momentum) * unbiased);
    } else {
      mean = p.running_mean[c];
      var = p.running_var[c];
    }
    const double inv_std = 1.0 / std::sqrt(var + p.epsilon);
    for (std::size_t n = 0; n < x.batch(); ++n)
      for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t q = 0; q < x.cols(); ++q)
          y.at(n, c, r, q) = static_cast<T>((x.at(n, c, r, q) - mean) * inv_std * p.scale[c] + p.shift[c]);
  }
  return y;
}

template <typename T>
BasicBatchNormGradients<T> batchnorm_backward(const BasicTensor<T>& x, const BasicBatchNormParams<T>& p,
                                              const BasicTensor<T>& grad_out) {
  BasicBatchNormGradients<T> g;
  g.grad_x = BasicTensor<T>(x.shape());
  g.grad_scale.assign(x.channels(), T{0});
  g.grad_shift.assign(x.channels(), T{0});
  const double count = static_cast<double>(x.batch() * x.rows() * x.cols());
  for (std::size_t c = 0; c < x.channels(); ++c) {
    double mean = 0.0;
    double var = 0.0;
    detail::channel_stats(x, c, mean, var);
    const double inv_std = 1.0 / std::sqrt(var + p.epsilon);
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (std::size_t n = 0; n < x.batch(); ++n)
      for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t q = 0; q < x.cols(); ++q) {
          const double go = grad_out.at(n, c, r, q);
          sum_g += go;
          sum_gx += go * (x.at(n, c, r, q) - mean) * inv_std;
        }
    g.grad_shift[c] = static_cast<T>(sum_g);
    g.grad_scale[c] = static_cast<T>(sum_gx);
    const double s = p.scale[c] * inv_std;
    for (std::size_t n = 0; n < x.batch(); ++n)
      for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t q = 0; q < x.cols(); ++q) {
          const double xhat = (x.at(n, c, r, q) - mean) * inv_std;
          g.grad_x.at(n, c, r, q) =
              static_cast<T>(s * (grad_out.at(n, c, r, q) - sum_g / count - xhat * sum_gx / count));
        }
  }
  return g;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> y(x.shape());
  for (std::size_t j = 0; j < x.size(); ++j) y.data()[j] = x.data()[j] > T{0} ? x.data()[j] : T{0};
  return y;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& grad_out) {
  BasicTensor<T> g(x.shape());
  for (std::size_t j = 0; j < x.size(); ++j) g.data()[j] = x.data()[j] > T{0} ? grad_out.data()[j] : T{0};
  return g;
}

template <typename T>
BasicTensor<T> grouped_softmax(const BasicTensor<T>& logits, const ChannelGroups& groups) {
  validate_groups(groups, logits.channels());
  BasicTensor<T> y = logits;
  for (std::size_t n = 0; n < logits.batch(); ++n)
    for (std::size_t r = 0; r < logits.rows(); ++r)
      for (std::size_t q = 0; q < logits.cols(); ++q)
        for (const auto& group : groups) {
          double mx = logits.at(n, group.front(), r, q);
          for (std::size_t c : group) mx = std::max<double>(mx, logits.at(n, c, r, q));
          double sum = 0.0;
          for (std::size_t c : group) sum += std::exp(static_cast<double>(logits.at(n, c, r, q)) - mx);
          for (std::size_t c : group)
            y.at(n, c, r, q) = static_cast<T>(std::exp(static_cast<double>(logits.at(n, c, r, q)) - mx) / sum);
        }
  return y;
}

template <typename T>
BasicTensor<T> grouped_softmax_backward(const BasicTensor<T>& probs, const BasicTensor<T>& grad_probs,
                                        const ChannelGroups& groups) {
  BasicTensor<T> g = grad_probs;
  for (std::size_t n = 0; n < probs.batch(); ++n)
    for (std::size_t r = 0; r < probs.rows(); ++r)
      for (std::size_t q = 0; q < probs.cols(); ++q)
        for (const auto& group : groups) {
          double dot = 0.0;
          for (std::size_t c : group)
            dot += static_cast<double>(probs.at(n, c, r, q)) * static_cast<double>(grad_probs.at(n, c, r, q));
          for (std::size_t c : group)
            g.at(n, c, r, q) = static_cast<T>(probs.at(n, c, r, q) * (grad_probs.at(n, c, r, q) - dot));
        }
  return g;
}

template <typename T>
void sgd_step(std::span<T> params, std::span<const T> grads, double lr, double weight_decay) {
  for (std::size_t j = 0; j < params.size(); ++j)
    params[j] = static_cast<T>(params[j] - lr * (grads[j] + weight_decay * params[j]));
}

}  // namespace cmr::reference
