#include "doctest.h"

#include <cmath>
#include <limits>
#include <random>

#include "cmr/metrics.hpp"

using namespace cmr;

namespace {

Mask random_mask(std::size_t nz, std::size_t ny, std::size_t nx, double density, std::mt19937_64& rng) {
  Mask m(nz, ny, nx);
  std::bernoulli_distribution on(density);
  for (auto& v : m.values()) v = on(rng) ? 1 : 0;
  return m;
}

// Every boundary voxel of one mask against every boundary voxel of the other.
double brute_force_hausdorff(const Mask& a, const Mask& b, const Spacing& s) {
  const auto pa = boundary_voxels(a);
  const auto pb = boundary_voxels(b);
  auto dist = [&](const std::array<std::size_t, 3>& p, const std::array<std::size_t, 3>& q) {
    const double dz = (static_cast<double>(p[0]) - static_cast<double>(q[0])) * s.z;
    const double dy = (static_cast<double>(p[1]) - static_cast<double>(q[1])) * s.y;
    const double dx = (static_cast<double>(p[2]) - static_cast<double>(q[2])) * s.x;
    return dz * dz + dy * dy + dx * dx;
  };
  auto directed = [&](const auto& from, const auto& to) {
    double worst = 0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) best = std::min(best, dist(p, q));
      worst = std::max(worst, best);
    }
    return worst;
  };
  return std::sqrt(std::max(directed(pa, pb), directed(pb, pa)));
}

LabelMap filled(std::size_t count, std::uint8_t label, Spacing s) {
  LabelMap m;
  m.spacing_mm = s;
  m.labels = Grid3<std::uint8_t>(1, 10, 100, kLabelBackground);
  for (std::size_t i = 0; i < count; ++i) m.labels.values()[i] = label;
  return m;
}

}  // namespace

TEST_CASE("hausdorff_mm equals the all-pairs oracle on random mask pairs") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t nz = 2 + seed % 4, ny = 6 + seed % 7, nx = 5 + seed % 9;
    std::uniform_real_distribution<double> dens(0.05, 0.6);
    Mask a = random_mask(nz, ny, nx, dens(rng), rng);
    Mask b = random_mask(nz, ny, nx, dens(rng), rng);
    a.values()[0] = 1;
    b.values().back() = 1;
    const Spacing s{1.0 + static_cast<double>(seed % 3) * 4.5, 1.4, 1.25};
    CHECK(hausdorff_mm(a, b, s) == doctest::Approx(brute_force_hausdorff(a, b, s)).epsilon(1e-12));
  }
}

TEST_CASE("hausdorff basics") {
  Mask a(1, 5, 5);
  a.at(0, 2, 1) = 1;
  Mask b(1, 5, 5);
  b.at(0, 2, 4) = 1;
  CHECK(hausdorff_mm(a, a, {1, 1, 1}) == 0.0);
  CHECK(hausdorff_mm(a, b, {1, 2, 1.5}) == doctest::Approx(4.5));
  CHECK_THROWS_AS(hausdorff_mm(a, Mask(1, 5, 5), {1, 1, 1}), NumericalError);
  CHECK_THROWS_AS(hausdorff_mm(a, Mask(1, 4, 5), {1, 1, 1}), InputError);
}

TEST_CASE("dice_coef") {
  Mask a(1, 2, 2);
  Mask b(1, 2, 2);
  CHECK(dice_coef(a, b) == 1.0);
  a.values() = {1, 1, 0, 0};
  b.values() = {1, 0, 1, 0};
  CHECK(dice_coef(a, b) == 0.5);
  CHECK(dice_coef(a, a) == 1.0);
}

TEST_CASE("volume, ejection fraction and mass arithmetic") {
  const Spacing s{5.0, 1.4, 1.4};
  const LabelMap lv = filled(1000, kLabelLV, s);
  CHECK(volume_ml(lv, kLabelLV) == 9.8);
  CHECK(volume_ml(lv, kLabelRV) == 0.0);
  CHECK(ejection_fraction(100, 50) == 50.0);
  CHECK_THROWS_AS(ejection_fraction(0, 0), NumericalError);

  LabelMap ed = filled(1000, kLabelLV, s);
  LabelMap es = filled(500, kLabelLV, s);
  for (std::size_t i = 0; i < 200; ++i) {
    ed.labels.values()[999 - i] = kLabelMyo;
    es.labels.values()[999 - i] = kLabelMyo;
    ed.labels.values()[998 - 200 - i] = kLabelRV;
    es.labels.values()[400 - i] = kLabelRV;
  }
  const auto q = quantify(ed, es);
  CHECK(q.myo_mass_ed == q.myo_edv * 1.05);
  CHECK(q.lv_ef == 100.0 * (q.lv_edv - q.lv_esv) / q.lv_edv);
  CHECK_FALSE(q.ef_flagged);
  const auto flipped = quantify(es, ed);
  CHECK(flipped.ef_flagged);
  CHECK(flipped.lv_ef < 0);
}

TEST_CASE("Bland-Altman uses the sample standard deviation") {
  const std::vector<std::pair<double, double>> pairs{{10, 11}, {20, 19}, {30, 33}, {40, 41}};
  const BlandAltman ba = bland_altman(pairs);
  // differences 1, -1, 3, 1: mean 1, sample sd sqrt(8/3)
  CHECK(ba.bias == doctest::Approx(1.0));
  CHECK(ba.sd == doctest::Approx(std::sqrt(8.0 / 3.0)));
  CHECK(ba.loa_high - ba.bias == doctest::Approx(1.96 * ba.sd));
  CHECK(ba.n == 4);
  CHECK_THROWS_AS(bland_altman({}), InputError);
}

TEST_CASE("pearson") {
  const std::vector<double> x{1, 2, 3, 4};
  const std::vector<double> y{2, 4, 6, 8};
  const std::vector<double> z{8, 6, 4, 2};
  CHECK(pearson(x, y) == doctest::Approx(1.0));
  CHECK(pearson(x, z) == doctest::Approx(-1.0));
  const std::vector<double> flat{3, 3, 3, 3};
  CHECK_THROWS_AS(pearson(x, flat), NumericalError);
}

TEST_CASE("confusion matrix is indexed [true][predicted]") {
  const std::vector<std::size_t> t{0, 0, 1, 2};
  const std::vector<std::size_t> p{0, 1, 1, 0};
  const auto r = confusion_and_accuracy(t, p, 3);
  CHECK(r.matrix[0][1] == 1);
  CHECK(r.matrix[2][0] == 1);
  CHECK(r.accuracy == 0.5);
}

TEST_CASE("score_segmentation: identical maps give Dice 1 and Hausdorff 0") {
  LabelMap m;
  m.spacing_mm = {10, 1.4, 1.4};
  m.labels = Grid3<std::uint8_t>(2, 6, 6);
  m.labels.at(0, 1, 1) = kLabelLV;
  m.labels.at(1, 2, 2) = kLabelRV;
  m.labels.at(1, 3, 3) = kLabelMyo;
  PhaseLabels p{m, m};
  for (const auto& s : score_segmentation(p, p)) {
    CHECK(s.dice == 1.0);
    CHECK(s.hausdorff_mm == 0.0);
  }
}
