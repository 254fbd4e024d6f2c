#include "cmr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

namespace cmr {
namespace {

using Point = std::array<double, 3>;

std::vector<Point> scaled_points(const std::vector<std::array<std::size_t, 3>>& voxels, const Spacing& s) {
  std::vector<Point> pts;
  pts.reserve(voxels.size());
  for (const auto& v : voxels)
    pts.push_back({static_cast<double>(v[0]) * s.z, static_cast<double>(v[1]) * s.y, static_cast<double>(v[2]) * s.x});
  return pts;
}

double squared_distance(const Point& a, const Point& b) {
  const double dz = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dx = a[2] - b[2];
  return dz * dz + dy * dy + dx * dx;
}

// max over a of min over b of |a - b|^2, with the early-break scan: once a
// point of `from` has a neighbour closer than the running maximum it cannot
// raise the result. Random visiting order keeps the expected scan short;
// the result is exactly the brute-force value.
double directed_hausdorff_sq(const std::vector<Point>& from, const std::vector<Point>& to) {
  std::vector<std::size_t> order_from(from.size());
  std::vector<std::size_t> order_to(to.size());
  std::iota(order_from.begin(), order_from.end(), 0);
  std::iota(order_to.begin(), order_to.end(), 0);
  std::mt19937_64 rng(0x5eedULL);
  std::shuffle(order_from.begin(), order_from.end(), rng);
  std::shuffle(order_to.begin(), order_to.end(), rng);

  double result = 0.0;
  const auto n = static_cast<std::ptrdiff_t>(from.size());
#pragma omp parallel
  {
    double local_max = 0.0;
#pragma omp for schedule(dynamic, 64)
    for (std::ptrdiff_t ia = 0; ia < n; ++ia) {
      const Point& a = from[order_from[static_cast<std::size_t>(ia)]];
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t ib : order_to) {
        const double d = squared_distance(a, to[ib]);
        if (d < best) {
          best = d;
          if (best < local_max) break;
        }
      }
      local_max = std::max(local_max, best);
    }
#pragma omp critical
    result = std::max(result, local_max);
  }
  return result;
}

}  // namespace

Mask class_mask(const LabelMap& labels, std::uint8_t label) {
  Mask m(labels.labels.slices(), labels.labels.rows(), labels.labels.cols());
  const auto& src = labels.labels.values();
  auto& dst = m.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] == label ? 1 : 0;
  return m;
}

double dice_coef(const Mask& a, const Mask& b) {
  if (a.shape() != b.shape()) throw InputError("dice: mask shapes differ");
  std::size_t inter = 0;
  std::size_t na = 0;
  std::size_t nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool fa = a.values()[i] != 0;
    const bool fb = b.values()[i] != 0;
    na += fa;
    nb += fb;
    inter += fa && fb;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

std::vector<std::array<std::size_t, 3>> boundary_voxels(const Mask& m) {
  std::vector<std::array<std::size_t, 3>> out;
  const std::size_t nz = m.slices();
  const std::size_t ny = m.rows();
  const std::size_t nx = m.cols();
  for (std::size_t z = 0; z < nz; ++z)
    for (std::size_t y = 0; y < ny; ++y)
      for (std::size_t x = 0; x < nx; ++x) {
        if (!m.at(z, y, x)) continue;
        const bool edge = z == 0 || y == 0 || x == 0 || z + 1 == nz || y + 1 == ny || x + 1 == nx;
        if (edge || !m.at(z - 1, y, x) || !m.at(z + 1, y, x) || !m.at(z, y - 1, x) || !m.at(z, y + 1, x) ||
            !m.at(z, y, x - 1) || !m.at(z, y, x + 1))
          out.push_back({z, y, x});
      }
  return out;
}

double hausdorff_mm(const Mask& a, const Mask& b, const Spacing& spacing) {
  if (a.shape() != b.shape()) throw InputError("hausdorff: mask shapes differ");
  const auto pa = scaled_points(boundary_voxels(a), spacing);
  const auto pb = scaled_points(boundary_voxels(b), spacing);
  if (pa.empty() || pb.empty()) throw NumericalError("hausdorff: undefined for an empty mask");
  return std::sqrt(std::max(directed_hausdorff_sq(pa, pb), directed_hausdorff_sq(pb, pa)));
}

double volume_ml(const LabelMap& labels, std::uint8_t label) {
  const auto count = static_cast<double>(std::count(labels.labels.values().begin(), labels.labels.values().end(), label));
  // left to right: count * z * y * x, then mm3 -> ml
  return count * labels.spacing_mm.z * labels.spacing_mm.y * labels.spacing_mm.x / 1000.0;
}

double ejection_fraction(double edv, double esv) {
  if (!(edv > 0)) throw NumericalError("ejection fraction undefined: end-diastolic volume is zero");
  return 100.0 * (edv - esv) / edv;
}

StructureQuantification quantify(const LabelMap& ed, const LabelMap& es, double density) {
  StructureQuantification q;
  q.lv_edv = volume_ml(ed, kLabelLV);
  q.lv_esv = volume_ml(es, kLabelLV);
  q.rv_edv = volume_ml(ed, kLabelRV);
  q.rv_esv = volume_ml(es, kLabelRV);
  q.myo_edv = volume_ml(ed, kLabelMyo);
  q.myo_esv = volume_ml(es, kLabelMyo);
  q.myo_mass_ed = q.myo_edv * density;
  q.myo_mass_es = q.myo_esv * density;
  q.lv_ef = ejection_fraction(q.lv_edv, q.lv_esv);
  q.rv_ef = ejection_fraction(q.rv_edv, q.rv_esv);
  q.ef_flagged = q.lv_esv > q.lv_edv || q.rv_esv > q.rv_edv;
  return q;
}

BlandAltman bland_altman(std::span<const std::pair<double, double>> pairs) {
  BlandAltman ba;
  ba.n = pairs.size();
  if (pairs.empty()) throw InputError("bland_altman: no pairs");
  double sum = 0.0;
  for (const auto& [ref, aut] : pairs) sum += aut - ref;
  ba.bias = sum / static_cast<double>(pairs.size());
  if (pairs.size() > 1) {
    double ss = 0.0;
    for (const auto& [ref, aut] : pairs) {
      const double d = (aut - ref) - ba.bias;
      ss += d * d;
    }
    ba.sd = std::sqrt(ss / static_cast<double>(pairs.size() - 1));
  }
  ba.loa_low = ba.bias - 1.96 * ba.sd;
  ba.loa_high = ba.bias + 1.96 * ba.sd;
  return ba;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) throw InputError("pearson: series must be non-empty and of equal length");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0) || !(syy > 0)) throw NumericalError("pearson: undefined for a zero-variance series");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

ConfusionResult confusion_and_accuracy(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                       std::size_t classes) {
  if (truth.size() != predicted.size()) throw InputError("confusion: label vectors differ in length");
  ConfusionResult r;
  r.matrix.assign(classes, std::vector<std::size_t>(classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= classes || predicted[i] >= classes) throw InputError("confusion: class index out of range");
    ++r.matrix[truth[i]][predicted[i]];
    correct += truth[i] == predicted[i];
  }
  r.accuracy = truth.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(truth.size());
  return r;
}

std::string_view structure_name(std::uint8_t label) {
  switch (label) {
    case kLabelBackground: return "BG";
    case kLabelRV: return "RV";
    case kLabelMyo: return "Myo";
    case kLabelLV: return "LV";
    default: return "?";
  }
}

std::vector<StructureScore> score_segmentation(const PhaseLabels& predicted, const PhaseLabels& reference) {
  std::vector<StructureScore> scores;
  for (Phase phase : {Phase::kED, Phase::kES}) {
    const LabelMap& p = phase == Phase::kED ? predicted.ed : predicted.es;
    const LabelMap& r = phase == Phase::kED ? reference.ed : reference.es;
    if (p.labels.shape() != r.labels.shape())
      throw InputError("score_segmentation: predicted and reference grids differ");
    for (std::uint8_t label : {kLabelLV, kLabelRV, kLabelMyo}) {
      const Mask mp = class_mask(p, label);
      const Mask mr = class_mask(r, label);
      StructureScore s;
      s.label = label;
      s.phase = phase;
      s.dice = dice_coef(mp, mr);
      try {
        s.hausdorff_mm = hausdorff_mm(mp, mr, r.spacing_mm);
      } catch (const NumericalError&) {
        s.hausdorff_mm = std::numeric_limits<double>::quiet_NaN();
      }
      scores.push_back(s);
    }
  }
  return scores;
}

}  // namespace cmr
