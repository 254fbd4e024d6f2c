#include "doctest.h"

#include <algorithm>
#include <numeric>
#include <random>

#include "cmr/inference.hpp"
#include "cmr/kernels.hpp"
#include "support.hpp"

using namespace cmr;

namespace {

// Iterative min-label relaxation over face neighbours until nothing changes;
// then the component with most voxels (ties: smallest minimal index) is kept.
Mask relaxation_oracle(const Mask& m) {
  const std::size_t nz = m.slices(), ny = m.rows(), nx = m.cols();
  const std::size_t none = m.size();
  std::vector<std::size_t> label(m.size(), none);
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m.values()[i]) label[i] = i;
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t z = 0; z < nz; ++z)
      for (std::size_t y = 0; y < ny; ++y)
        for (std::size_t x = 0; x < nx; ++x) {
          const std::size_t i = m.index(z, y, x);
          if (label[i] == none) continue;
          const std::size_t nb[6] = {z > 0 ? m.index(z - 1, y, x) : none, z + 1 < nz ? m.index(z + 1, y, x) : none,
                                     y > 0 ? m.index(z, y - 1, x) : none, y + 1 < ny ? m.index(z, y + 1, x) : none,
                                     x > 0 ? m.index(z, y, x - 1) : none, x + 1 < nx ? m.index(z, y, x + 1) : none};
          for (std::size_t j : nb)
            if (j != none && label[j] != none && label[j] < label[i]) {
              label[i] = label[j];
              changed = true;
            }
        }
  }
  std::vector<std::size_t> size(m.size() + 1, 0);
  for (std::size_t l : label)
    if (l != none) ++size[l];
  std::size_t best = none;
  for (std::size_t l = 0; l < m.size(); ++l)
    if (size[l] > 0 && (best == none || size[l] > size[best])) best = l;
  Mask out(nz, ny, nx);
  for (std::size_t i = 0; i < m.size(); ++i) out.values()[i] = best != none && label[i] == best;
  return out;
}

ProbabilityVolume random_probs(std::size_t slices, std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  auto t = test::random_tensor<float>({slices, 4, rows, cols}, rng, 0.01, 1.0);
  for (std::size_t s = 0; s < slices; ++s)
    for (std::size_t i = 0; i < rows * cols; ++i) {
      float sum = 0;
      for (std::size_t c = 0; c < 4; ++c) sum += t.plane(s, c)[i];
      for (std::size_t c = 0; c < 4; ++c) t.plane(s, c)[i] /= sum;
    }
  return t;
}

CineStudy small_study(std::mt19937_64& rng, std::size_t slices, std::size_t rows, std::size_t cols) {
  CineStudy s;
  s.patient_id = "p";
  s.weight_kg = 70;
  s.height_cm = 170;
  for (Phase ph : {Phase::kED, Phase::kES}) {
    CineVolume v;
    v.phase = ph;
    v.spacing_mm = {10, 1.4, 1.4};
    v.data = Grid3<float>(slices, rows, cols);
    std::uniform_real_distribution<float> u(0, 1);
    for (float& x : v.data.values()) x = u(rng);
    (ph == Phase::kED ? s.ed : s.es) = v;
  }
  return s;
}

Model small_model(std::uint64_t seed) {
  SegNetConfig c;
  c.dilations = {1, 2, 1};
  c.hidden_width = 4;
  c.input_extent = 64;
  c.init_seed = seed;
  Model m = build(c);
  // non-trivial running statistics
  std::mt19937_64 rng(seed);
  for (auto& l : m.hidden) {
    l.bn.running_mean = test::random_vector<float>(l.bn.channels(), rng, -0.2, 0.2);
    l.bn.running_var = test::random_vector<float>(l.bn.channels(), rng, 0.5, 1.5);
  }
  return m;
}

}  // namespace

TEST_CASE("largest_cc_6 matches the relaxation oracle on random 16^3 grids") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    std::mt19937_64 rng(seed);
    const double density = 0.2 + 0.6 * static_cast<double>(seed) / 199.0;
    Mask m(16, 16, 16);
    std::bernoulli_distribution on(density);
    for (auto& v : m.values()) v = on(rng);
    REQUIRE(largest_cc_6(m) == relaxation_oracle(m));
  }
}

TEST_CASE("largest_cc_6 examples") {
  Mask m(3, 8, 8);
  CHECK(largest_cc_6(m) == m);  // empty stays empty

  for (std::size_t x = 0; x < 5; ++x) m.at(1, 1, x) = 1;  // size 5
  for (std::size_t x = 0; x < 3; ++x) m.at(1, 5, x) = 1;  // size 3
  Mask five(3, 8, 8);
  for (std::size_t x = 0; x < 5; ++x) five.at(1, 1, x) = 1;
  CHECK(largest_cc_6(m) == five);
  CHECK(largest_cc_6(five) == five);

  Mask diag(1, 4, 4);
  diag.at(0, 0, 0) = 1;
  diag.at(0, 1, 1) = 1;
  Mask first(1, 4, 4);
  first.at(0, 0, 0) = 1;
  CHECK(largest_cc_6(diag) == first);  // diagonal neighbours are separate; tie keeps the first
}

TEST_CASE("postprocess_largest_cc drops detached satellites") {
  LabelMap lm;
  lm.spacing_mm = {10, 1.4, 1.4};
  lm.labels = Grid3<std::uint8_t>(2, 8, 8);
  for (std::size_t y = 2; y < 5; ++y)
    for (std::size_t x = 2; x < 5; ++x) lm.labels.at(0, y, x) = kLabelLV;
  lm.labels.at(1, 7, 7) = kLabelLV;  // satellite
  lm.labels.at(1, 0, 0) = kLabelRV;
  lm.labels.at(0, 6, 0) = kLabelMyo;
  const LabelMap out = postprocess_largest_cc(lm);
  CHECK(out.labels.at(1, 7, 7) == kLabelBackground);
  LabelMap expected = lm;
  expected.labels.at(1, 7, 7) = kLabelBackground;
  CHECK(out == expected);
  CHECK(postprocess_largest_cc(expected) == expected);

  LabelMap bg = lm;
  std::fill(bg.labels.values().begin(), bg.labels.values().end(), kLabelBackground);
  CHECK(postprocess_largest_cc(bg) == bg);
}

TEST_CASE("post-processing leaves one component per class") {
  std::mt19937_64 rng(9);
  LabelMap lm;
  lm.labels = Grid3<std::uint8_t>(4, 12, 12);
  std::uniform_int_distribution<int> pick(0, 3);
  for (auto& v : lm.labels.values()) v = static_cast<std::uint8_t>(pick(rng));
  const LabelMap out = postprocess_largest_cc(lm);
  for (std::uint8_t label : {kLabelRV, kLabelMyo, kLabelLV}) {
    const Mask m = class_mask(out, label);
    CHECK(largest_cc_6(m) == m);
  }
}

TEST_CASE("average_probs") {
  std::mt19937_64 rng(1);
  const auto a = random_probs(2, 3, 3, rng);
  CHECK(average_probs({a}) == a);
  CHECK(average_probs({a, a, a}) == a);

  ProbabilityVolume p({1, 4, 1, 1});
  ProbabilityVolume q({1, 4, 1, 1});
  p.values()[0] = 0.2f;
  p.values()[1] = 0.8f;
  q.values()[0] = 0.8f;
  q.values()[1] = 0.2f;
  const auto m = average_probs({p, q});
  CHECK(m.values()[0] == 0.5f);
  CHECK(m.values()[1] == 0.5f);

  const auto b = random_probs(2, 3, 3, rng);
  const auto mean = average_probs({a, b});
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t i = 0; i < 9; ++i) {
      double sum = 0;
      for (std::size_t c = 0; c < 4; ++c) sum += mean.plane(s, c)[i];
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    }
  CHECK_THROWS_AS(average_probs({}), InputError);
}

TEST_CASE("argmax ties go to the lowest class index") {
  ProbabilityVolume p({1, 4, 1, 2});
  p.at(0, 1, 0, 0) = 0.5f;
  p.at(0, 3, 0, 0) = 0.5f;
  p.at(0, 2, 0, 1) = 1.0f;
  const LabelMap l = argmax_labels(p, {});
  CHECK(l.labels.at(0, 0, 0) == 1);
  CHECK(l.labels.at(0, 0, 1) == 2);
}

TEST_CASE("segment_study: grid, ensemble identities and order invariance") {
  std::mt19937_64 rng(3);
  const CineStudy study = small_study(rng, 3, 20, 17);
  const Model a = small_model(1);
  Model b = small_model(2);
  b.iteration = 200;
  Model c = small_model(3);
  c.iteration = 100;

  const Segmentation single = segment_study({a}, study);
  CHECK(single.labels.ed.labels.shape() == study.ed.data.shape());
  CHECK(single.probs_es.shape() == Shape4{3, 4, 20, 17});

  // the one-member ensemble is the model's own argmax (before post-processing)
  const std::size_t half = (receptive_field(a.config) - 1) / 2;
  Tensor pair({1, 2, 20, 17});
  std::copy(study.ed.data.slice_data(1), study.ed.data.slice_data(1) + 340, pair.plane(0, 0));
  std::copy(study.es.data.slice_data(1), study.es.data.slice_data(1) + 340, pair.plane(0, 1));
  const Tensor direct = forward(a, kernels::reflect_pad(pair, half));
  for (std::size_t ch = 0; ch < 4; ++ch)
    for (std::size_t i = 0; i < 340; ++i) CHECK(single.probs_ed.plane(1, ch)[i] == direct.plane(0, ch)[i]);

  const Segmentation dup = segment_study({a, a, a, a, a, a}, study);
  CHECK(dup.labels.ed == single.labels.ed);
  CHECK(dup.labels.es == single.labels.es);
  CHECK(dup.probs_ed == single.probs_ed);

  const Segmentation abc = segment_study({a, b, c}, study);
  const Segmentation cab = segment_study({c, a, b}, study);
  const Segmentation bca = segment_study({b, c, a}, study);
  CHECK(abc.probs_ed == cab.probs_ed);
  CHECK(abc.probs_es == bca.probs_es);
  CHECK(abc.labels.ed == bca.labels.ed);

  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t i = 0; i < 340; ++i) {
      double sum = 0;
      for (std::size_t ch = 0; ch < 4; ++ch) sum += abc.probs_es.plane(s, ch)[i];
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    }

  SegNetConfig other = a.config;
  other.hidden_width = 5;
  CHECK_THROWS_AS(segment_study({a, build(other)}, study), InputError);
  CHECK_THROWS_AS(segment_study({}, study), InputError);
}
