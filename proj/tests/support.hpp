#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "cmr/layers.hpp"
#include "cmr/tensor.hpp"

namespace cmr::test {

template <typename T>
BasicTensor<T> random_tensor(Shape4 shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  BasicTensor<T> t(shape);
  std::uniform_real_distribution<double> u(lo, hi);
  for (T& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

template <typename T>
std::vector<T> random_vector(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<T> v(n);
  std::uniform_real_distribution<double> u(lo, hi);
  for (T& x : v) x = static_cast<T>(u(rng));
  return v;
}

template <typename T>
BasicConvParams<T> random_conv(std::size_t in, std::size_t out, std::size_t k, std::size_t dilation,
                               std::mt19937_64& rng) {
  BasicConvParams<T> p;
  p.weights = random_tensor<T>({out, in, k, k}, rng, -0.5, 0.5);
  p.bias = random_vector<T>(out, rng, -0.2, 0.2);
  p.dilation = dilation;
  return p;
}

/// |a - b| relative to the larger magnitude; entries smaller than `floor`
/// in both are compared absolutely against it.
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central difference of f() with respect to x, restoring x afterwards.
template <typename F>
double central_difference(F&& f, double& x, double h = 1e-6) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2 * h);
}

/// One-hot reference for 8 channels in two groups of 4.
template <typename T>
BasicTensor<T> random_onehot(std::size_t batch, std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  BasicTensor<T> r({batch, 8, rows, cols});
  std::uniform_int_distribution<int> pick(0, 3);
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t g = 0; g < 2; ++g)
      for (std::size_t y = 0; y < rows; ++y)
        for (std::size_t x = 0; x < cols; ++x) r.at(n, g * 4 + static_cast<std::size_t>(pick(rng)), y, x) = T{1};
  return r;
}

}  // namespace cmr::test
