// Finite-difference checks of every layer and of the whole network, in double
// through the serial reference kernels, plus agreement of the parallel float
// kernels with the reference.

#include "doctest.h"

#include <random>

#include "cmr/kernels.hpp"
#include "cmr/reference_kernels.hpp"
#include "cmr/segnet.hpp"
#include "cmr/trainer.hpp"
#include "support.hpp"

using namespace cmr;
using test::central_difference;
using test::rel_err;

namespace {

constexpr int kSeeds = 100;
constexpr double kTol = 1e-3;

// Fixed random projection so that d(loss)/d(out) is non-trivial.
double project(const BasicTensor<double>& y, const BasicTensor<double>& w) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * w.data()[i];
  return s;
}

struct ConvCase {
  std::size_t batch, in, out, k, d, rows, cols;
};

ConvCase random_case(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> small(1, 3);
  ConvCase c{};
  c.batch = small(rng) > 2 ? 2 : 1;
  c.in = small(rng);
  c.out = small(rng);
  c.k = small(rng) == 1 ? 1 : 3;
  c.d = small(rng);
  const std::size_t reach = c.d * (c.k - 1);
  c.rows = reach + small(rng) + 1;
  c.cols = reach + small(rng);
  return c;
}

}  // namespace

TEST_CASE("dilated conv gradients match central differences") {
  int checked = 0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    const ConvCase c = random_case(rng);
    auto x = test::random_tensor<double>({c.batch, c.in, c.rows, c.cols}, rng);
    auto p = test::random_conv<double>(c.in, c.out, c.k, c.d, rng);
    const auto y0 = reference::conv2d_forward(x, p);
    const auto w = test::random_tensor<double>(y0.shape(), rng);
    const auto g = reference::conv2d_backward(x, p, w);
    auto loss = [&] { return project(reference::conv2d_forward(x, p), w); };
    for (std::size_t i = 0; i < x.size(); ++i)
      REQUIRE(rel_err(g.grad_x.data()[i], central_difference(loss, x.data()[i])) < kTol);
    for (std::size_t i = 0; i < p.weights.size(); ++i)
      REQUIRE(rel_err(g.grad_w.data()[i], central_difference(loss, p.weights.data()[i])) < kTol);
    for (std::size_t o = 0; o < c.out; ++o) REQUIRE(rel_err(g.grad_b[o], central_difference(loss, p.bias[o])) < kTol);
    ++checked;
  }
  CHECK(checked == kSeeds);
}

TEST_CASE("batch-norm training gradients match central differences") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(1000 + static_cast<std::uint64_t>(seed));
    std::uniform_int_distribution<std::size_t> small(1, 3);
    const std::size_t b = small(rng), ch = small(rng), h = small(rng) + 1, wd = small(rng) + 1;
    auto x = test::random_tensor<double>({b, ch, h, wd}, rng, -2, 2);
    BasicBatchNormParams<double> p(ch);
    p.scale = test::random_vector<double>(ch, rng, 0.5, 1.5);
    p.shift = test::random_vector<double>(ch, rng);
    auto stats = p;
    const auto w = test::random_tensor<double>(x.shape(), rng);
    const auto g = reference::batchnorm_backward(x, p, w);
    auto loss = [&] {
      auto q = stats;
      q.scale = p.scale;
      q.shift = p.shift;
      return project(reference::batchnorm_forward(x, q, BatchNormMode::kTrain), w);
    };
    for (std::size_t i = 0; i < x.size(); ++i)
      REQUIRE(rel_err(g.grad_x.data()[i], central_difference(loss, x.data()[i]), 1e-5) < kTol);
    for (std::size_t c = 0; c < ch; ++c) {
      REQUIRE(rel_err(g.grad_scale[c], central_difference(loss, p.scale[c])) < kTol);
      REQUIRE(rel_err(g.grad_shift[c], central_difference(loss, p.shift[c])) < kTol);
    }
  }
}

TEST_CASE("ReLU gradient matches central differences away from the kink") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(2000 + static_cast<std::uint64_t>(seed));
    auto x = test::random_tensor<double>({1, 2, 3, 3}, rng);
    for (double& v : x.values())
      if (std::abs(v) < 1e-3) v = 0.5;
    const auto w = test::random_tensor<double>(x.shape(), rng);
    const auto g = reference::relu_backward(x, w);
    auto loss = [&] { return project(reference::relu(x), w); };
    for (std::size_t i = 0; i < x.size(); ++i)
      REQUIRE(rel_err(g.data()[i], central_difference(loss, x.data()[i])) < kTol);
  }
}

TEST_CASE("grouped softmax composed with the Dice loss matches central differences") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(3000 + static_cast<std::uint64_t>(seed));
    const bool factor2 = seed % 2 == 1;
    auto logits = test::random_tensor<double>({1 + static_cast<std::size_t>(seed % 2), 8, 6, 6}, rng, -3, 3);
    const auto refs = test::random_onehot<double>(logits.batch(), 6, 6, rng);
    const DiceOptions opt{factor2, kDiceEpsilon};
    const auto probs = reference::grouped_softmax(logits, phase_groups());
    const auto dl = dice_loss(probs, refs, opt);
    const auto g = reference::grouped_softmax_backward(probs, dl.grad, phase_groups());
    auto loss = [&] { return dice_loss(reference::grouped_softmax(logits, phase_groups()), refs, opt).loss; };
    for (std::size_t i = 0; i < logits.size(); ++i)
      REQUIRE(rel_err(g.data()[i], central_difference(loss, logits.data()[i]), 1e-7) < kTol);
  }
}

TEST_CASE("Dice loss gradient with respect to probabilities matches central differences") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(4000 + static_cast<std::uint64_t>(seed));
    auto probs = test::random_tensor<double>({1, 8, 6, 6}, rng, 0.0, 1.0);
    const auto refs = test::random_onehot<double>(1, 6, 6, rng);
    const auto dl = dice_loss(probs, refs);
    auto loss = [&] { return dice_loss(probs, refs).loss; };
    for (std::size_t i = 0; i < probs.size(); ++i)
      REQUIRE(rel_err(dl.grad.data()[i], central_difference(loss, probs.data()[i]), 1e-7) < kTol);
  }
}

namespace {

// The network rebuilt in double from the reference kernels.
struct ReferenceNet {
  std::vector<BasicConvParams<double>> convs;
  std::vector<BasicBatchNormParams<double>> bns;
  BasicConvParams<double> out;

  explicit ReferenceNet(const Model& m) {
    for (const auto& l : m.hidden) {
      BasicConvParams<double> c;
      c.weights = l.conv.weights.cast<double>();
      c.bias.assign(l.conv.bias.begin(), l.conv.bias.end());
      c.dilation = l.conv.dilation;
      convs.push_back(c);
      BasicBatchNormParams<double> b(l.bn.channels());
      b.scale.assign(l.bn.scale.begin(), l.bn.scale.end());
      b.shift.assign(l.bn.shift.begin(), l.bn.shift.end());
      b.epsilon = l.bn.epsilon;
      b.momentum = l.bn.momentum;
      bns.push_back(b);
    }
    out.weights = m.output.weights.cast<double>();
    out.bias.assign(m.output.bias.begin(), m.output.bias.end());
  }

  double loss(const BasicTensor<double>& x, const BasicTensor<double>& refs) const {
    BasicTensor<double> a = x;
    for (std::size_t l = 0; l < convs.size(); ++l) {
      auto bn = bns[l];
      a = reference::relu(reference::batchnorm_forward(reference::conv2d_forward(a, convs[l]), bn, BatchNormMode::kTrain));
    }
    return dice_loss(reference::grouped_softmax(reference::conv2d_forward(a, out), phase_groups()), refs).loss;
  }

  struct Grads {
    std::vector<BasicConvGradients<double>> conv;
    std::vector<BasicBatchNormGradients<double>> bn;
    BasicConvGradients<double> out;
  };

  Grads backward(const BasicTensor<double>& x, const BasicTensor<double>& refs) const {
    std::vector<BasicTensor<double>> inputs{x}, pre_bn, pre_relu;
    for (std::size_t l = 0; l < convs.size(); ++l) {
      auto bn = bns[l];
      pre_bn.push_back(reference::conv2d_forward(inputs.back(), convs[l]));
      pre_relu.push_back(reference::batchnorm_forward(pre_bn.back(), bn, BatchNormMode::kTrain));
      inputs.push_back(reference::relu(pre_relu.back()));
    }
    const auto probs = reference::grouped_softmax(reference::conv2d_forward(inputs.back(), out), phase_groups());
    const auto dl = dice_loss(probs, refs);
    Grads g;
    g.out = reference::conv2d_backward(inputs.back(), out,
                                       reference::grouped_softmax_backward(probs, dl.grad, phase_groups()));
    auto grad = g.out.grad_x;
    g.conv.resize(convs.size());
    g.bn.resize(convs.size());
    for (std::size_t l = convs.size(); l-- > 0;) {
      g.bn[l] = reference::batchnorm_backward(pre_bn[l], bns[l], reference::relu_backward(pre_relu[l], grad));
      g.conv[l] = reference::conv2d_backward(inputs[l], convs[l], g.bn[l].grad_x);
      grad = g.conv[l].grad_x;
    }
    return g;
  }
};

SegNetConfig tiny_config(std::uint64_t seed) {
  SegNetConfig c;
  c.dilations = {1, 2, 1};
  c.hidden_width = 3;
  c.input_extent = 13;
  c.init_seed = seed;
  return c;
}

}  // namespace

TEST_CASE("whole-network gradients: reference composition vs central differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(5000 + seed);
    const Model m = build(tiny_config(seed));
    ReferenceNet net(m);
    const auto x = test::random_tensor<double>({2, 2, 11, 12}, rng);
    const auto refs = test::random_onehot<double>(2, 11 - 8, 12 - 8, rng);
    const auto g = net.backward(x, refs);
    auto loss = [&] { return net.loss(x, refs); };
    for (std::size_t l = 0; l < net.convs.size(); ++l) {
      for (std::size_t i = 0; i < net.convs[l].weights.size(); i += 3)
        REQUIRE(rel_err(g.conv[l].grad_w.data()[i], central_difference(loss, net.convs[l].weights.data()[i]), 1e-7) <
                kTol);
      for (std::size_t c = 0; c < net.bns[l].channels(); ++c) {
        REQUIRE(rel_err(g.bn[l].grad_scale[c], central_difference(loss, net.bns[l].scale[c]), 1e-7) < kTol);
        REQUIRE(rel_err(g.bn[l].grad_shift[c], central_difference(loss, net.bns[l].shift[c]), 1e-7) < kTol);
      }
    }
    for (std::size_t i = 0; i < net.out.weights.size(); ++i)
      REQUIRE(rel_err(g.out.grad_w.data()[i], central_difference(loss, net.out.weights.data()[i]), 1e-7) < kTol);
    for (std::size_t o = 0; o < net.out.bias.size(); ++o)
      REQUIRE(rel_err(g.out.grad_b[o], central_difference(loss, net.out.bias[o]), 1e-7) < kTol);
  }
}

TEST_CASE("segnet backward (parallel float kernels) agrees with the double reference") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(6000 + seed);
    Model m = build(tiny_config(seed));
    const ReferenceNet net(m);
    const auto xd = test::random_tensor<double>({2, 2, 15, 14}, rng);
    const auto refs_d = test::random_onehot<double>(2, 7, 6, rng);
    const auto ref = net.backward(xd, refs_d);

    ForwardTrace trace;
    const Tensor probs = forward(m, xd.cast<float>(), BatchNormMode::kTrain, &trace);
    const auto dl = dice_loss(probs, refs_d.cast<float>());
    const ModelGradients g = backward(m, trace, dl.grad);

    // compare against the overall gradient scale of each tensor
    auto close = [](std::span<const float> a, std::span<const double> b) {
      double scale = 1e-12;
      for (double v : b) scale = std::max(scale, std::abs(v));
      for (std::size_t i = 0; i < a.size(); ++i)
        if (std::abs(a[i] - b[i]) > 1e-3 * scale) return false;
      return true;
    };
    for (std::size_t l = 0; l < m.hidden.size(); ++l) {
      CHECK(close(g.hidden_conv[l].grad_w.values(), ref.conv[l].grad_w.values()));
      CHECK(close(g.hidden_bn[l].grad_scale, ref.bn[l].grad_scale));
      CHECK(close(g.hidden_bn[l].grad_shift, ref.bn[l].grad_shift));
    }
    CHECK(close(g.output.grad_w.values(), ref.out.grad_w.values()));
    CHECK(close(g.output.grad_b, ref.out.grad_b));
  }
}
