#include "cmr/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace cmr::kernels {
namespace {

constexpr std::size_t kOutBlock = 4;   // output channels sharing one input load
constexpr std::size_t kColTile = 16;   // columns held in registers per output channel
constexpr std::size_t kLanes = 32;     // independent partial sums in reductions

// Weights reordered to [in][ky][kx][out_padded] in double so the inner loop
// broadcasts contiguous values. Products of two floats are exact in double,
// which makes the result independent of FMA contraction.
struct PackedWeights {
  std::vector<double> values;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t out_padded = 0;
  std::size_t kernel = 0;
};

PackedWeights pack_forward(const ConvLayerParams& p) {
  PackedWeights pw;
  pw.in_channels = p.in_channels();
  pw.out_channels = p.out_channels();
  pw.out_padded = (pw.out_channels + kOutBlock - 1) / kOutBlock * kOutBlock;
  pw.kernel = p.kernel();
  const std::size_t k = pw.kernel;
  pw.values.assign(pw.in_channels * k * k * pw.out_padded, 0.0);
  for (std::size_t o = 0; o < pw.out_channels; ++o)
    for (std::size_t i = 0; i < pw.in_channels; ++i)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx)
          pw.values[((i * k + ky) * k + kx) * pw.out_padded + o] = p.weights.at(o, i, ky, kx);
  return pw;
}

// Transposed and spatially flipped weights: the input gradient is a valid
// convolution of the zero-padded output gradient with these.
PackedWeights pack_transposed(const ConvLayerParams& p) {
  PackedWeights pw;
  pw.in_channels = p.out_channels();
  pw.out_channels = p.in_channels();
  pw.out_padded = (pw.out_channels + kOutBlock - 1) / kOutBlock * kOutBlock;
  pw.kernel = p.kernel();
  const std::size_t k = pw.kernel;
  pw.values.assign(pw.in_channels * k * k * pw.out_padded, 0.0);
  for (std::size_t o = 0; o < p.out_channels(); ++o)
    for (std::size_t i = 0; i < p.in_channels(); ++i)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx)
          pw.values[((o * k + (k - 1 - ky)) * k + (k - 1 - kx)) * pw.out_padded + i] = p.weights.at(o, i, ky, kx);
  return pw;
}

template <std::size_t Width>
void conv_tile(const float* in_n, std::size_t in_plane, std::size_t in_cols, const PackedWeights& pw,
               std::size_t dilation, std::size_t o0, std::size_t row, std::size_t x0, std::size_t width,
               double (&acc)[kOutBlock][kColTile]) {
  const std::size_t k = pw.kernel;
  for (auto& a : acc)
    for (double& v : a) v = 0.0;
  for (std::size_t i = 0; i < pw.in_channels; ++i) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      const float* src_row = in_n + i * in_plane + (row + ky * dilation) * in_cols + x0;
      for (std::size_t kx = 0; kx < k; ++kx) {
        const float* src = src_row + kx * dilation;
        const double* w = pw.values.data() + ((i * k + ky) * k + kx) * pw.out_padded + o0;
        double v[kColTile];
        if constexpr (Width == kColTile) {
          for (std::size_t l = 0; l < kColTile; ++l) v[l] = src[l];
        } else {
          for (std::size_t l = 0; l < kColTile; ++l) v[l] = l < width ? src[l] : 0.0;
        }
        for (std::size_t b = 0; b < kOutBlock; ++b) {
          const double wb = w[b];
#pragma omp simd
          for (std::size_t l = 0; l < kColTile; ++l) acc[b][l] += wb * v[l];
        }
      }
    }
  }
}

// y[n, o] = bias[o] + sum_i sum_ky sum_kx w * x, summed in (i, ky, kx) order.
void conv_valid(const Tensor& x, const PackedWeights& pw, std::size_t dilation, const std::vector<float>* bias,
                Tensor& y) {
  const std::size_t batch = x.batch();
  const std::size_t rows = y.rows();
  const std::size_t cols = y.cols();
  const std::size_t blocks = pw.out_padded / kOutBlock;
  const std::size_t in_plane = x.rows() * x.cols();
  const auto tasks = static_cast<std::ptrdiff_t>(batch * blocks * rows);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t task = 0; task < tasks; ++task) {
    const auto t = static_cast<std::size_t>(task);
    const std::size_t row = t % rows;
    const std::size_t ob = (t / rows) % blocks;
    const std::size_t n = t / (rows * blocks);
    const std::size_t o0 = ob * kOutBlock;
    const float* in_n = x.plane(n, 0);
    double acc[kOutBlock][kColTile];
    for (std::size_t x0 = 0; x0 < cols; x0 += kColTile) {
      const std::size_t width = std::min(kColTile, cols - x0);
      if (width == kColTile)
        conv_tile<kColTile>(in_n, in_plane, x.cols(), pw, dilation, o0, row, x0, width, acc);
      else
        conv_tile<0>(in_n, in_plane, x.cols(), pw, dilation, o0, row, x0, width, acc);
      for (std::size_t b = 0; b < kOutBlock && o0 + b < pw.out_channels; ++b) {
        const double bb = bias ? static_cast<double>((*bias)[o0 + b]) : 0.0;
        float* dst = y.plane(n, o0 + b) + row * cols + x0;
        for (std::size_t l = 0; l < width; ++l) dst[l] = static_cast<float>(acc[b][l] + bb);
      }
    }
  }
}

// Deterministic dot product with kLanes independent partial sums.
double dot_lanes(const float* a, const float* b, std::size_t n, double (&lanes)[kLanes]) {
  std::size_t j = 0;
  for (; j + kLanes <= n; j += kLanes) {
#pragma omp simd
    for (std::size_t l = 0; l < kLanes; ++l)
      lanes[l] += static_cast<double>(a[j + l]) * static_cast<double>(b[j + l]);
  }
  double tail = 0.0;
  for (; j < n; ++j) tail += static_cast<double>(a[j]) * static_cast<double>(b[j]);
  return tail;
}

double reduce_lanes(const double (&lanes)[kLanes]) {
  double s = 0.0;
  for (double v : lanes) s += v;
  return s;
}

constexpr std::size_t kMaxKernel = 7;

// Accumulates dW[o0..o0+3][i][ky][0..K) over all batch items and rows.
template <std::size_t K>
void weight_grad_row(const Tensor& x, const Tensor& grad_out, std::size_t o0, std::size_t i, std::size_t ky,
                     std::size_t d, double (&sums)[kOutBlock][kMaxKernel]) {
  constexpr std::size_t kWidth = 8;
  const std::size_t wo = grad_out.cols();
  const std::size_t ho = grad_out.rows();
  const std::size_t out_ch = grad_out.channels();
  double acc[kOutBlock][K][kWidth] = {};
  double tail[kOutBlock][K] = {};
  for (std::size_t n = 0; n < x.batch(); ++n) {
    for (std::size_t r = 0; r < ho; ++r) {
      const float* xr = x.plane(n, i) + (r + ky * d) * x.cols();
      const float* gr[kOutBlock];
      for (std::size_t b = 0; b < kOutBlock; ++b) gr[b] = grad_out.plane(n, std::min(o0 + b, out_ch - 1)) + r * wo;
      std::size_t j = 0;
      for (; j + kWidth <= wo; j += kWidth) {
        double gv[kOutBlock][kWidth];
        for (std::size_t b = 0; b < kOutBlock; ++b)
          for (std::size_t l = 0; l < kWidth; ++l) gv[b][l] = gr[b][j + l];
        for (std::size_t kx = 0; kx < K; ++kx) {
          double xv[kWidth];
          for (std::size_t l = 0; l < kWidth; ++l) xv[l] = xr[j + kx * d + l];
          for (std::size_t b = 0; b < kOutBlock; ++b)
#pragma omp simd
            for (std::size_t l = 0; l < kWidth; ++l) acc[b][kx][l] += gv[b][l] * xv[l];
        }
      }
      for (; j < wo; ++j)
        for (std::size_t b = 0; b < kOutBlock; ++b)
          for (std::size_t kx = 0; kx < K; ++kx)
            tail[b][kx] += static_cast<double>(gr[b][j]) * static_cast<double>(xr[j + kx * d]);
    }
  }
  for (std::size_t b = 0; b < kOutBlock; ++b)
    for (std::size_t kx = 0; kx < K; ++kx) {
      double s = 0.0;
      for (std::size_t l = 0; l < kWidth; ++l) s += acc[b][kx][l];
      sums[b][kx] = s + tail[b][kx];
    }
}

void weight_grad_generic(const Tensor& x, const Tensor& grad_out, std::size_t o0, std::size_t i, std::size_t ky,
                         std::size_t k, std::size_t d, double (&sums)[kOutBlock][kMaxKernel]) {
  const std::size_t wo = grad_out.cols();
  for (std::size_t b = 0; b < kOutBlock && o0 + b < grad_out.channels(); ++b)
    for (std::size_t kx = 0; kx < k; ++kx) {
      double lanes[kLanes] = {};
      double tail = 0.0;
      for (std::size_t n = 0; n < x.batch(); ++n)
        for (std::size_t r = 0; r < grad_out.rows(); ++r)
          tail += dot_lanes(grad_out.plane(n, o0 + b) + r * wo, x.plane(n, i) + (r + ky * d) * x.cols() + kx * d,
                            wo, lanes);
      sums[b][kx] = reduce_lanes(lanes) + tail;
    }
}

struct ChannelMoments {
  double mean = 0.0;
  double var = 0.0;
};

ChannelMoments channel_moments(const Tensor& x, std::size_t c) {
  const std::size_t plane = x.rows() * x.cols();
  const double count = static_cast<double>(x.batch() * plane);
  double lanes[kLanes] = {};
  double tail = 0.0;
  for (std::size_t n = 0; n < x.batch(); ++n) {
    const float* p = x.plane(n, c);
    std::size_t j = 0;
    for (; j + kLanes <= plane; j += kLanes) {
#pragma omp simd
      for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += p[j + l];
    }
    for (; j < plane; ++j) tail += p[j];
  }
  ChannelMoments m;
  m.mean = (reduce_lanes(lanes) + tail) / count;
  double sq[kLanes] = {};
  tail = 0.0;
  for (std::size_t n = 0; n < x.batch(); ++n) {
    const float* p = x.plane(n, c);
    std::size_t j = 0;
    for (; j + kLanes <= plane; j += kLanes) {
#pragma omp simd
      for (std::size_t l = 0; l < kLanes; ++l) {
        const double dv = p[j + l] - m.mean;
        sq[l] += dv * dv;
      }
    }
    for (; j < plane; ++j) {
      const double dv = p[j] - m.mean;
      tail += dv * dv;
    }
  }
  m.var = (reduce_lanes(sq) + tail) / count;
  return m;
}

}  // namespace

std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n <= 1) return 0;
  const std::ptrdiff_t period = 2 * (n - 1);
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

Tensor reflect_pad(const Tensor& x, std::size_t pad) {
  const std::size_t rows = x.rows() + 2 * pad;
  const std::size_t cols = x.cols() + 2 * pad;
  Tensor y({x.batch(), x.channels(), rows, cols});
  const auto h = static_cast<std::ptrdiff_t>(x.rows());
  const auto w = static_cast<std::ptrdiff_t>(x.cols());
  const auto p = static_cast<std::ptrdiff_t>(pad);
  std::vector<std::size_t> col_src(cols);
  for (std::size_t c = 0; c < cols; ++c) col_src[c] = static_cast<std::size_t>(reflect_index(static_cast<std::ptrdiff_t>(c) - p, w));
  const auto planes = static_cast<std::ptrdiff_t>(x.batch() * x.channels());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pl = 0; pl < planes; ++pl) {
    const float* src = x.data() + static_cast<std::size_t>(pl) * x.rows() * x.cols();
    float* dst = y.data() + static_cast<std::size_t>(pl) * rows * cols;
    for (std::size_t r = 0; r < rows; ++r) {
      const auto sr = static_cast<std::size_t>(reflect_index(static_cast<std::ptrdiff_t>(r) - p, h));
      const float* s = src + sr * x.cols();
      float* d = dst + r * cols;
      for (std::size_t c = 0; c < cols; ++c) d[c] = s[col_src[c]];
    }
  }
  return y;
}

Tensor conv2d_forward(const Tensor& x, const ConvLayerParams& p) {
  if (x.channels() != p.in_channels())
    throw InputError("conv2d: input has " + std::to_string(x.channels()) + " channels, layer expects " +
                     std::to_string(p.in_channels()));
  if (p.bias.size() != p.out_channels()) throw InputError("conv2d: bias length mismatch");
  const std::size_t ho = conv_output_extent(x.rows(), p.kernel(), p.dilation);
  const std::size_t wo = conv_output_extent(x.cols(), p.kernel(), p.dilation);
  Tensor y({x.batch(), p.out_channels(), ho, wo});
  conv_valid(x, pack_forward(p), p.dilation, &p.bias, y);
  return y;
}

ConvGradients conv2d_backward(const Tensor& x, const ConvLayerParams& p, const Tensor& grad_out, bool need_grad_x) {
  const std::size_t k = p.kernel();
  const std::size_t d = p.dilation;
  const std::size_t ho = conv_output_extent(x.rows(), k, d);
  const std::size_t wo = conv_output_extent(x.cols(), k, d);
  require_same_shape(grad_out.shape(), Shape4{x.batch(), p.out_channels(), ho, wo}, "conv2d_backward grad_out");
  if (x.channels() != p.in_channels()) throw InputError("conv2d_backward: channel mismatch");

  ConvGradients g;
  g.grad_w = Tensor(p.weights.shape());
  g.grad_b.assign(p.out_channels(), 0.0f);
  const std::size_t out_ch = p.out_channels();
  const std::size_t in_ch = p.in_channels();
  const std::size_t plane_out = ho * wo;
  if (k > kMaxKernel) throw InputError("conv2d_backward: kernel larger than 7 unsupported");

  // Bias: per-channel sum of the output gradient.
  const auto n_out = static_cast<std::ptrdiff_t>(out_ch);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t oo = 0; oo < n_out; ++oo) {
    const auto o = static_cast<std::size_t>(oo);
    double lanes[kLanes] = {};
    double tail = 0.0;
    for (std::size_t n = 0; n < x.batch(); ++n) {
      const float* gp = grad_out.plane(n, o);
      std::size_t j = 0;
      for (; j + kLanes <= plane_out; j += kLanes) {
#pragma omp simd
        for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += gp[j + l];
      }
      for (; j < plane_out; ++j) tail += gp[j];
    }
    g.grad_b[o] = static_cast<float>(reduce_lanes(lanes) + tail);
  }

  // Weights: correlation of the input with the output gradient.
  const std::size_t blocks = (out_ch + kOutBlock - 1) / kOutBlock;
  const auto n_tasks = static_cast<std::ptrdiff_t>(blocks * in_ch * k);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t task = 0; task < n_tasks; ++task) {
    const auto t = static_cast<std::size_t>(task);
    const std::size_t ky = t % k;
    const std::size_t i = (t / k) % in_ch;
    const std::size_t o0 = t / (k * in_ch) * kOutBlock;
    double sums[kOutBlock][kMaxKernel] = {};
    if (k == 3)
      weight_grad_row<3>(x, grad_out, o0, i, ky, d, sums);
    else if (k == 1)
      weight_grad_row<1>(x, grad_out, o0, i, ky, d, sums);
    else
      weight_grad_generic(x, grad_out, o0, i, ky, k, d, sums);
    for (std::size_t b = 0; b < kOutBlock && o0 + b < out_ch; ++b)
      for (std::size_t kx = 0; kx < k; ++kx) g.grad_w.at(o0 + b, i, ky, kx) = static_cast<float>(sums[b][kx]);
  }

  if (need_grad_x) {
    const std::size_t reach = d * (k - 1);
    Tensor padded({grad_out.batch(), out_ch, ho + 2 * reach, wo + 2 * reach});
    for (std::size_t n = 0; n < grad_out.batch(); ++n)
      for (std::size_t o = 0; o < out_ch; ++o)
        for (std::size_t r = 0; r < ho; ++r)
          std::copy_n(grad_out.plane(n, o) + r * wo, wo, padded.plane(n, o) + (r + reach) * padded.cols() + reach);
    g.grad_x = Tensor(x.shape());
    conv_valid(padded, pack_transposed(p), d, nullptr, g.grad_x);
  }
  return g;
}

namespace {

void normalize_channel(const Tensor& x, Tensor& y, std::size_t c, const BatchNormParams& p, double mean, double var) {
  const std::size_t plane = x.rows() * x.cols();
  const double a = p.scale[c] / std::sqrt(var + p.epsilon);
  const double b = p.shift[c] - mean * a;
  for (std::size_t n = 0; n < x.batch(); ++n) {
    const float* src = x.plane(n, c);
    float* dst = y.plane(n, c);
#pragma omp simd
    for (std::size_t j = 0; j < plane; ++j) dst[j] = static_cast<float>(src[j] * a + b);
  }
}

}  // namespace

Tensor batchnorm_forward(const Tensor& x, BatchNormParams& p, BatchNormMode mode) {
  if (mode == BatchNormMode::kEval) return batchnorm_inference(x, p);
  if (x.channels() != p.channels()) throw InputError("batchnorm: channel mismatch");
  Tensor y(x.shape());
  const double count = static_cast<double>(x.batch() * x.rows() * x.cols());
  const auto channels = static_cast<std::ptrdiff_t>(x.channels());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t cc = 0; cc < channels; ++cc) {
    const auto c = static_cast<std::size_t>(cc);
    const ChannelMoments m = channel_moments(x, c);
    const double unbiased = count > 1 ? m.var * count / (count - 1) : m.var;
    p.running_mean[c] = static_cast<float>(p.momentum * p.running_mean[c] + (1 - p.momentum) * m.mean);
    p.running_var[c] = static_cast<float>(p.momentum * p.running_var[c] + (1 - p.momentum) * unbiased);
    normalize_channel(x, y, c, p, m.mean, m.var);
  }
  return y;
}

Tensor batchnorm_inference(const Tensor& x, const BatchNormParams& p) {
  if (x.channels() != p.channels()) throw InputError("batchnorm: channel mismatch");
  Tensor y(x.shape());
  const auto channels = static_cast<std::ptrdiff_t>(x.channels());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t cc = 0; cc < channels; ++cc) {
    const auto c = static_cast<std::size_t>(cc);
    normalize_channel(x, y, c, p, p.running_mean[c], p.running_var[c]);
  }
  return y;
}

BatchNormGradients batchnorm_backward(const Tensor& x, const BatchNormParams& p, const Tensor& grad_out) {
  require_same_shape(x.shape(), grad_out.shape(), "batchnorm_backward grad_out");
  BatchNormGradients g;
  g.grad_x = Tensor(x.shape());
  g.grad_scale.assign(x.channels(), 0.0f);
  g.grad_shift.assign(x.channels(), 0.0f);
  const std::size_t plane = x.rows() * x.cols();
  const double count = static_cast<double>(x.batch() * plane);
  const auto channels = static_cast<std::ptrdiff_t>(x.channels());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t cc = 0; cc < channels; ++cc) {
    const auto c = static_cast<std::size_t>(cc);
    const ChannelMoments m = channel_moments(x, c);
    const double inv_std = 1.0 / std::sqrt(m.var + p.epsilon);
    double lg[kLanes] = {};
    double lgx[kLanes] = {};
    double tg = 0.0;
    double tgx = 0.0;
    for (std::size_t n = 0; n < x.batch(); ++n) {
      const float* xs = x.plane(n, c);
      const float* gs = grad_out.plane(n, c);
      std::size_t j = 0;
      for (; j + kLanes <= plane; j += kLanes) {
#pragma omp simd
        for (std::size_t l = 0; l < kLanes; ++l) {
          lg[l] += gs[j + l];
          lgx[l] += gs[j + l] * (xs[j + l] - m.mean);
        }
      }
      for (; j < plane; ++j) {
        tg += gs[j];
        tgx += gs[j] * (xs[j] - m.mean);
      }
    }
    const double sum_g = reduce_lanes(lg) + tg;
    const double sum_gx = (reduce_lanes(lgx) + tgx) * inv_std;
    g.grad_shift[c] = static_cast<float>(sum_g);
    g.grad_scale[c] = static_cast<float>(sum_gx);
    const double s = p.scale[c] * inv_std;
    const double mean_g = sum_g / count;
    const double mean_gx = sum_gx / count;
    for (std::size_t n = 0; n < x.batch(); ++n) {
      const float* xs = x.plane(n, c);
      const float* gs = grad_out.plane(n, c);
      float* dst = g.grad_x.plane(n, c);
#pragma omp simd
      for (std::size_t j = 0; j < plane; ++j) {
        const double xhat = (xs[j] - m.mean) * inv_std;
        dst[j] = static_cast<float>(s * (gs[j] - mean_g - xhat * mean_gx));
      }
    }
  }
  return g;
}

Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  const float* src = x.data();
  float* dst = y.data();
  const auto n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for simd schedule(static)
  for (std::ptrdiff_t j = 0; j < n; ++j) dst[j] = src[j] > 0.0f ? src[j] : 0.0f;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  require_same_shape(x.shape(), grad_out.shape(), "relu_backward grad_out");
  Tensor g(x.shape());
  const float* src = x.data();
  const float* go = grad_out.data();
  float* dst = g.data();
  const auto n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for simd schedule(static)
  for (std::ptrdiff_t j = 0; j < n; ++j) dst[j] = src[j] > 0.0f ? go[j] : 0.0f;
  return g;
}

Tensor grouped_softmax(const Tensor& logits, const ChannelGroups& groups) {
  validate_groups(groups, logits.channels());
  Tensor y = logits;
  const std::size_t plane = logits.rows() * logits.cols();
  const auto tasks = static_cast<std::ptrdiff_t>(logits.batch() * plane);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t task = 0; task < tasks; ++task) {
    const auto t = static_cast<std::size_t>(task);
    const std::size_t n = t / plane;
    const std::size_t j = t % plane;
    for (const auto& group : groups) {
      double mx = logits.plane(n, group.front())[j];
      for (std::size_t c : group) mx = std::max<double>(mx, logits.plane(n, c)[j]);
      double sum = 0.0;
      for (std::size_t c : group) sum += std::exp(static_cast<double>(logits.plane(n, c)[j]) - mx);
      for (std::size_t c : group)
        y.plane(n, c)[j] = static_cast<float>(std::exp(static_cast<double>(logits.plane(n, c)[j]) - mx) / sum);
    }
  }
  return y;
}

Tensor grouped_softmax_backward(const Tensor& probs, const Tensor& grad_probs, const ChannelGroups& groups) {
  require_same_shape(probs.shape(), grad_probs.shape(), "grouped_softmax_backward");
  validate_groups(groups, probs.channels());
  Tensor g = grad_probs;
  const std::size_t plane = probs.rows() * probs.cols();
  const auto tasks = static_cast<std::ptrdiff_t>(probs.batch() * plane);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t task = 0; task < tasks; ++task) {
    const auto t = static_cast<std::size_t>(task);
    const std::size_t n = t / plane;
    const std::size_t j = t % plane;
    for (const auto& group : groups) {
      double dot = 0.0;
      for (std::size_t c : group)
        dot += static_cast<double>(probs.plane(n, c)[j]) * static_cast<double>(grad_probs.plane(n, c)[j]);
      for (std::size_t c : group)
        g.plane(n, c)[j] = static_cast<float>(probs.plane(n, c)[j] * (grad_probs.plane(n, c)[j] - dot));
    }
  }
  return g;
}

void sgd_step(std::span<float> params, std::span<const float> grads, double lr, double weight_decay) {
  if (params.size() != grads.size()) throw InputError("sgd_step: parameter/gradient length mismatch");
  float* p = params.data();
  const float* g = grads.data();
  const auto n = static_cast<std::ptrdiff_t>(params.size());
#pragma omp parallel for simd schedule(static)
  for (std::ptrdiff_t j = 0; j < n; ++j) p[j] = static_cast<float>(p[j] - lr * (g[j] + weight_decay * p[j]));
}

}  // namespace cmr::kernels
