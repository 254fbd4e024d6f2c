#include "doctest.h"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "cmr/kernels.hpp"
#include "cmr/reference_kernels.hpp"
#include "cmr/segnet.hpp"
#include "support.hpp"

using namespace cmr;

namespace {

double max_abs(std::span<const float> v) {
  double m = 0;
  for (float x : v) m = std::max(m, static_cast<double>(std::abs(x)));
  return m;
}

// Largest elementwise difference relative to the largest reference magnitude.
double scaled_diff(std::span<const float> fast, std::span<const float> ref) {
  REQUIRE(fast.size() == ref.size());
  double d = 0;
  for (std::size_t i = 0; i < fast.size(); ++i)
    d = std::max(d, std::abs(static_cast<double>(fast[i]) - static_cast<double>(ref[i])));
  return d / std::max(max_abs(ref), 1e-12);
}

template <typename F>
auto with_threads(int n, F&& f) {
  const int saved = omp_get_max_threads();
  omp_set_num_threads(n);
  auto result = f();
  omp_set_num_threads(saved);
  return result;
}

}  // namespace

TEST_CASE("parallel convolution matches the serial reference") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t in = 1 + seed % 5, out = 1 + (seed * 7) % 6, dil = 1 + seed % 4;
    const std::size_t k = seed % 4 == 3 ? 1 : 3;
    const auto p = test::random_conv<float>(in, out, k, dil, rng);
    const std::size_t extent = (k - 1) * dil + 1 + seed % 9;
    const auto x = test::random_tensor<float>({1 + seed % 3, in, extent, extent + seed % 2}, rng);
    const Tensor y = kernels::conv2d_forward(x, p);
    const Tensor yr = reference::conv2d_forward(x, p);
    REQUIRE(y.shape() == yr.shape());
    CHECK(scaled_diff(y.values(), yr.values()) < 1e-6);

    const auto g = test::random_tensor<float>(y.shape(), rng);
    const auto gf = kernels::conv2d_backward(x, p, g);
    const auto gr = reference::conv2d_backward(x, p, g);
    CHECK(scaled_diff(gf.grad_x.values(), gr.grad_x.values()) < 1e-5);
    CHECK(scaled_diff(gf.grad_w.values(), gr.grad_w.values()) < 1e-5);
    CHECK(scaled_diff(gf.grad_b, gr.grad_b) < 1e-5);
    CHECK(kernels::conv2d_backward(x, p, g, false).grad_x.empty());
  }
}

TEST_CASE("parallel batch norm, ReLU and softmax match the serial reference") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t c = 1 + seed % 6;
    const auto x = test::random_tensor<float>({2 + seed % 2, c, 5, 4 + seed % 3}, rng, -2, 3);
    BatchNormParams p(c);
    p.scale = test::random_vector<float>(c, rng, 0.5, 1.5);
    p.shift = test::random_vector<float>(c, rng, -0.5, 0.5);
    BatchNormParams pr = p;
    const Tensor y = kernels::batchnorm_forward(x, p, BatchNormMode::kTrain);
    const Tensor yr = reference::batchnorm_forward(x, pr, BatchNormMode::kTrain);
    CHECK(scaled_diff(y.values(), yr.values()) < 1e-5);
    CHECK(scaled_diff(p.running_mean, pr.running_mean) < 1e-5);
    CHECK(scaled_diff(p.running_var, pr.running_var) < 1e-5);

    BatchNormParams pe = p;
    const Tensor ye = kernels::batchnorm_inference(x, p);
    CHECK(scaled_diff(ye.values(), reference::batchnorm_forward(x, pe, BatchNormMode::kEval).values()) < 1e-5);
    CHECK(pe == p);
    CHECK(kernels::batchnorm_forward(x, pe, BatchNormMode::kEval) == ye);

    const auto g = test::random_tensor<float>(x.shape(), rng);
    const auto gb = kernels::batchnorm_backward(x, p, g);
    const auto gbr = reference::batchnorm_backward(x, p, g);
    CHECK(scaled_diff(gb.grad_x.values(), gbr.grad_x.values()) < 1e-4);
    CHECK(scaled_diff(gb.grad_scale, gbr.grad_scale) < 1e-5);
    CHECK(scaled_diff(gb.grad_shift, gbr.grad_shift) < 1e-5);

    CHECK(kernels::relu(x) == reference::relu(x));
    CHECK(kernels::relu_backward(x, g) == reference::relu_backward(x, g));

    const auto logits = test::random_tensor<float>({2, 8, 3, 4}, rng, -4, 4);
    const Tensor sm = kernels::grouped_softmax(logits, phase_groups());
    CHECK(scaled_diff(sm.values(), reference::grouped_softmax(logits, phase_groups()).values()) < 1e-6);
    const auto gp = test::random_tensor<float>(sm.shape(), rng);
    CHECK(scaled_diff(kernels::grouped_softmax_backward(sm, gp, phase_groups()).values(),
                      reference::grouped_softmax_backward(sm, gp, phase_groups()).values()) < 1e-5);

    std::vector<float> a = test::random_vector<float>(50, rng);
    std::vector<float> b = a;
    const auto grads = test::random_vector<float>(50, rng);
    kernels::sgd_step(a, grads, 0.1, 5e-4);
    reference::sgd_step<float>(b, grads, 0.1, 5e-4);
    CHECK(a == b);
  }
}

TEST_CASE("softmax groups sum to one and pass other channels through") {
  std::mt19937_64 rng(5);
  const auto logits = test::random_tensor<float>({1, 9, 2, 2}, rng, -30, 30);
  const ChannelGroups groups{{0, 2, 4}, {1, 3}};
  const Tensor p = kernels::grouped_softmax(logits, groups);
  for (std::size_t i = 0; i < 4; ++i) {
    for (const auto& grp : groups) {
      double s = 0;
      for (std::size_t c : grp) s += p.plane(0, c)[i];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
    for (std::size_t c : {5, 6, 7, 8}) CHECK(p.plane(0, c)[i] == logits.plane(0, c)[i]);
  }
  CHECK_THROWS_AS(kernels::grouped_softmax(logits, {{0, 1}, {1, 2}}), InputError);
  CHECK_THROWS_AS(kernels::grouped_softmax(logits, {{0, 9}}), InputError);
}

TEST_CASE("reflect padding mirrors without repeating the edge") {
  CHECK(kernels::reflect_index(-1, 5) == 1);
  CHECK(kernels::reflect_index(-4, 5) == 4);
  CHECK(kernels::reflect_index(5, 5) == 3);
  CHECK(kernels::reflect_index(-5, 5) == 3);  // folds twice
  CHECK(kernels::reflect_index(2, 1) == 0);
  Tensor x({1, 1, 1, 3});
  x.values()[0] = 1;
  x.values()[1] = 2;
  x.values()[2] = 3;
  const Tensor p = kernels::reflect_pad(x, 2);
  REQUIRE(p.shape() == Shape4{1, 1, 5, 7});
  const std::vector<float> row{3, 2, 1, 2, 3, 2, 1};
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 7; ++c) CHECK(p.at(0, 0, r, c) == row[c]);
}

TEST_CASE("kernel results do not depend on the thread count") {
  std::mt19937_64 rng(77);
  const auto p = test::random_conv<float>(6, 5, 3, 2, rng);
  const auto x = test::random_tensor<float>({3, 6, 23, 19}, rng);
  const Tensor one = with_threads(1, [&] { return kernels::conv2d_forward(x, p); });
  const auto g = test::random_tensor<float>(one.shape(), rng);
  const auto gone = with_threads(1, [&] { return kernels::conv2d_backward(x, p, g); });
  BatchNormParams bn(6);
  const Tensor bone = with_threads(1, [&] {
    BatchNormParams q = bn;
    return kernels::batchnorm_forward(x, q, BatchNormMode::kTrain);
  });
  for (int threads : {2, 3, 4, 7}) {
    CHECK(with_threads(threads, [&] { return kernels::conv2d_forward(x, p); }) == one);
    const auto gn = with_threads(threads, [&] { return kernels::conv2d_backward(x, p, g); });
    CHECK(gn.grad_x == gone.grad_x);
    CHECK(gn.grad_w == gone.grad_w);
    CHECK(gn.grad_b == gone.grad_b);
    CHECK(with_threads(threads, [&] {
            BatchNormParams q = bn;
            return kernels::batchnorm_forward(x, q, BatchNormMode::kTrain);
          }) == bone);
  }

  SegNetConfig c;
  c.dilations = {1, 2, 4};
  c.hidden_width = 6;
  c.input_extent = 40;
  const Model m = build(c);
  const auto in = test::random_tensor<float>({2, 2, 30, 30}, rng, 0, 1);
  const Tensor ref = with_threads(1, [&] { return forward(m, in); });
  CHECK(with_threads(4, [&] { return forward(m, in); }) == ref);
}
