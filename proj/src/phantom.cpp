#include <cstdio>
#include "cmr/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cmr::phantom {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kJitterMm = 4.0;

double draw(const Range& r, std::mt19937_64& rng) {
  if (r.hi == r.lo) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

void check_range(const Range& r, const char* what, double min_lo, double max_hi) {
  if (!(r.lo <= r.hi) || r.lo < min_lo || r.hi > max_hi)
    throw InputError(std::string("phantom preset: inconsistent range for ") + what);
}

// Per-slice radius factor, 1 at the base falling to apex_taper at the apex.
double taper(const PhantomPreset& p, std::size_t slice) {
  if (p.slices <= 1) return 1.0;
  const double t = static_cast<double>(slice) / static_cast<double>(p.slices - 1);
  return 1.0 - (1.0 - p.apex_taper) * t * t;
}

struct SliceShape {
  double lv = 0;   // cavity radius
  double epi = 0;  // epicardial radius
  double rv = 0;   // RV disk radius
  double rv_distance = 0;
};

SliceShape slice_shape(const PhantomPreset& p, const PhantomGeometry& g, std::size_t slice, Phase phase) {
  const double f = taper(p, slice);
  SliceShape s;
  const double lv_ed = g.lv_radius_ed * f;
  const double epi_ed = lv_ed + g.myo_thickness_ed;
  if (phase == Phase::kED) {
    s.lv = lv_ed;
    s.epi = epi_ed;
    s.rv = g.rv_radius_ed * f;
  } else {
    s.lv = g.lv_radius_es * f;
    // wall area is preserved between phases
    s.epi = std::sqrt(s.lv * s.lv + epi_ed * epi_ed - lv_ed * lv_ed);
    s.rv = g.rv_radius_es * f;
  }
  s.rv_distance = s.epi + g.rv_offset * s.rv;
  return s;
}

}  // namespace

PhantomPreset preset_for(DiseaseClass disease) {
  PhantomPreset p;
  p.disease = disease;
  p.rv_offset = {0.25, 0.40};
  switch (disease) {
    case DiseaseClass::kNormal:
      p.lv_radius_ed_mm = {23, 27};
      p.lv_ef = {0.55, 0.68};
      p.myo_thickness_ed_mm = {7.5, 9.5};
      p.rv_radius_ed_mm = {24, 28};
      p.rv_ef = {0.45, 0.60};
      break;
    case DiseaseClass::kDCM:
      p.lv_radius_ed_mm = {31, 35};
      p.lv_ef = {0.10, 0.24};
      p.myo_thickness_ed_mm = {5.0, 6.5};
      p.rv_radius_ed_mm = {24, 28};
      p.rv_ef = {0.30, 0.45};
      break;
    case DiseaseClass::kHCM:
      p.lv_radius_ed_mm = {20, 24};
      p.lv_ef = {0.74, 0.85};
      p.myo_thickness_ed_mm = {13, 17};
      p.rv_radius_ed_mm = {21, 25};
      p.rv_ef = {0.50, 0.62};
      break;
    case DiseaseClass::kMINF:
      p.lv_radius_ed_mm = {28, 32};
      p.lv_ef = {0.30, 0.42};
      p.myo_thickness_ed_mm = {7.0, 9.0};
      p.rv_radius_ed_mm = {24, 28};
      p.rv_ef = {0.35, 0.50};
      break;
    case DiseaseClass::kRVA:
      p.lv_radius_ed_mm = {22, 26};
      p.lv_ef = {0.55, 0.68};
      p.myo_thickness_ed_mm = {7.0, 9.0};
      p.rv_radius_ed_mm = {34, 40};
      p.rv_ef = {0.20, 0.38};
      break;
  }
  return p;
}

void validate(const PhantomPreset& p) {
  check_range(p.lv_radius_ed_mm, "LV radius", 1e-3, 1e6);
  check_range(p.lv_ef, "LV contraction", 0.0, 0.99);
  check_range(p.myo_thickness_ed_mm, "myocardial thickness", 1e-3, 1e6);
  check_range(p.rv_radius_ed_mm, "RV radius", 1e-3, 1e6);
  check_range(p.rv_ef, "RV contraction", 0.0, 0.99);
  check_range(p.rv_offset, "RV offset", 0.0, 0.95);
  if (!(p.noise_sd >= 0)) throw InputError("phantom preset: noise sd must be >= 0");
  if (p.slices == 0 || p.rows == 0 || p.cols == 0) throw InputError("phantom preset: empty grid");
  if (!(p.apex_taper > 0 && p.apex_taper <= 1)) throw InputError("phantom preset: apex taper must be in (0, 1]");
  if (!(p.spacing_mm.z > 0 && p.spacing_mm.y > 0 && p.spacing_mm.x > 0))
    throw InputError("phantom preset: spacing must be positive");
  // Worst-case extent: epicardium on one side, far edge of the RV on the other.
  const double epi = p.lv_radius_ed_mm.hi + p.myo_thickness_ed_mm.hi;
  const double rv_far = epi + p.rv_offset.hi * p.rv_radius_ed_mm.hi + p.rv_radius_ed_mm.hi;
  const double reach = 0.5 * (epi + rv_far) + kJitterMm * std::sqrt(2.0);
  double room = 0.5 * std::min(p.rows * p.spacing_mm.y, p.cols * p.spacing_mm.x);
  if (p.wall_radius_mm > 0) room = std::min(room, p.wall_radius_mm);
  if (!(p.wall_radius_mm >= 0)) throw InputError("phantom preset: wall radius must be >= 0");
  if (reach > room)
    throw InputError("phantom preset: heart reaches " + std::to_string(reach) + " mm from the centre, only " +
                     std::to_string(room) + " mm available");
}

PhantomGeometry sample_geometry(const PhantomPreset& p, std::mt19937_64& rng) {
  validate(p);
  PhantomGeometry g;
  g.lv_radius_ed = draw(p.lv_radius_ed_mm, rng);
  g.lv_radius_es = g.lv_radius_ed * std::sqrt(1.0 - draw(p.lv_ef, rng));
  g.myo_thickness_ed = draw(p.myo_thickness_ed_mm, rng);
  g.rv_radius_ed = draw(p.rv_radius_ed_mm, rng);
  g.rv_radius_es = g.rv_radius_ed * std::sqrt(1.0 - draw(p.rv_ef, rng));
  g.rv_offset = draw(p.rv_offset, rng);
  g.rv_angle_rad = kPi + draw({-0.25, 0.25}, rng);
  // Centre the LV/RV pair in the field of view, with a few mm of jitter.
  const double epi = g.lv_radius_ed + g.myo_thickness_ed;
  const double rv_far = epi + g.rv_offset * g.rv_radius_ed + g.rv_radius_ed;
  const double fov_y = p.rows * p.spacing_mm.y;
  const double fov_x = p.cols * p.spacing_mm.x;
  const double shift = 0.5 * (rv_far - epi);
  g.center_y_mm = 0.5 * fov_y - shift * std::sin(g.rv_angle_rad) + draw({-kJitterMm, kJitterMm}, rng);
  g.center_x_mm = 0.5 * fov_x - shift * std::cos(g.rv_angle_rad) + draw({-kJitterMm, kJitterMm}, rng);
  return g;
}

double disk_overlap_area(double r1, double r2, double d) {
  if (d >= r1 + r2) return 0.0;
  const double rmin = std::min(r1, r2);
  if (d <= std::abs(r1 - r2)) return kPi * rmin * rmin;
  const double a1 = std::acos(std::clamp((d * d + r1 * r1 - r2 * r2) / (2 * d * r1), -1.0, 1.0));
  const double a2 = std::acos(std::clamp((d * d + r2 * r2 - r1 * r1) / (2 * d * r2), -1.0, 1.0));
  const double k = (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2);
  return r1 * r1 * a1 + r2 * r2 * a2 - 0.5 * std::sqrt(std::max(k, 0.0));
}

StructureVolumes analytic_volumes(const PhantomPreset& p, const PhantomGeometry& g) {
  StructureVolumes v;
  const double to_ml = p.spacing_mm.z / 1000.0;
  for (std::size_t s = 0; s < p.slices; ++s) {
    for (Phase phase : {Phase::kED, Phase::kES}) {
      const SliceShape sh = slice_shape(p, g, s, phase);
      const double lv = kPi * sh.lv * sh.lv * to_ml;
      const double myo = kPi * (sh.epi * sh.epi - sh.lv * sh.lv) * to_ml;
      const double rv = (kPi * sh.rv * sh.rv - disk_overlap_area(sh.rv, sh.epi, sh.rv_distance)) * to_ml;
      if (phase == Phase::kED) {
        v.lv_edv += lv;
        v.myo_edv += myo;
        v.rv_edv += rv;
      } else {
        v.lv_esv += lv;
        v.myo_esv += myo;
        v.rv_esv += rv;
      }
    }
  }
  return v;
}

CineStudy render_study(const PhantomPreset& p, const PhantomGeometry& g, std::mt19937_64& rng,
                       const std::string& patient_id, double weight_kg, double height_cm) {
  validate(p);
  CineStudy study;
  study.patient_id = patient_id;
  study.weight_kg = weight_kg;
  study.height_cm = height_cm;
  study.diagnosis = p.disease;
  study.analytic_volumes = analytic_volumes(p, g);
  PhaseLabels labels;
  std::normal_distribution<double> noise(0.0, p.noise_sd);
  const double fov_y = p.rows * p.spacing_mm.y;
  const double fov_x = p.cols * p.spacing_mm.x;
  for (Phase phase : {Phase::kED, Phase::kES}) {
    CineVolume vol;
    vol.phase = phase;
    vol.spacing_mm = p.spacing_mm;
    vol.data = Grid3<float>(p.slices, p.rows, p.cols);
    LabelMap lm;
    lm.spacing_mm = p.spacing_mm;
    lm.labels = Grid3<std::uint8_t>(p.slices, p.rows, p.cols);
    for (std::size_t s = 0; s < p.slices; ++s) {
      const SliceShape sh = slice_shape(p, g, s, phase);
      const double rv_cy = g.center_y_mm + sh.rv_distance * std::sin(g.rv_angle_rad);
      const double rv_cx = g.center_x_mm + sh.rv_distance * std::cos(g.rv_angle_rad);
      for (std::size_t r = 0; r < p.rows; ++r) {
        const double y = (static_cast<double>(r) + 0.5) * p.spacing_mm.y;
        for (std::size_t c = 0; c < p.cols; ++c) {
          const double x = (static_cast<double>(c) + 0.5) * p.spacing_mm.x;
          const double rho = std::hypot(y - g.center_y_mm, x - g.center_x_mm);
          std::uint8_t label = kLabelBackground;
          if (rho < sh.lv)
            label = kLabelLV;
          else if (rho < sh.epi)
            label = kLabelMyo;
          else if (std::hypot(y - rv_cy, x - rv_cx) < sh.rv)
            label = kLabelRV;
          lm.labels.at(s, r, c) = label;
          float base = label == kLabelBackground ? kBackgroundIntensity
                       : label == kLabelMyo      ? kMyocardiumIntensity
                                                 : kCavityIntensity;
          if (label == kLabelBackground && p.wall_radius_mm > 0 &&
              std::hypot(y - 0.5 * fov_y, x - 0.5 * fov_x) >= p.wall_radius_mm)
            base = kWallIntensity;
          vol.data.at(s, r, c) = p.noise_sd > 0 ? static_cast<float>(base + noise(rng)) : base;
        }
      }
    }
    if (phase == Phase::kED) {
      study.ed = std::move(vol);
      labels.ed = std::move(lm);
    } else {
      study.es = std::move(vol);
      labels.es = std::move(lm);
    }
  }
  study.reference_labels = std::move(labels);
  return study;
}

CineStudy generate_study(const PhantomPreset& preset, std::mt19937_64& rng, const std::string& patient_id) {
  const PhantomGeometry g = sample_geometry(preset, rng);
  const double weight = std::clamp(std::normal_distribution<double>(75.0, 12.0)(rng), 45.0, 120.0);
  const double height = std::clamp(std::normal_distribution<double>(172.0, 9.0)(rng), 150.0, 200.0);
  return render_study(preset, g, rng, patient_id, weight, height);
}

std::vector<CineStudy> generate_cohort(std::size_t n_per_class, std::uint64_t seed) {
  std::vector<CineStudy> cohort;
  cohort.reserve(n_per_class * kDiseaseClassCount);
  std::size_t index = 0;
  for (std::size_t c = 0; c < kDiseaseClassCount; ++c) {
    const PhantomPreset preset = preset_for(static_cast<DiseaseClass>(c));
    for (std::size_t i = 0; i < n_per_class; ++i, ++index) {
      std::mt19937_64 rng(derive_seed(seed, index));
      char id[32];
      std::snprintf(id, sizeof(id), "phantom%03zu", index + 1);
      cohort.push_back(generate_study(preset, rng, id));
    }
  }
  return cohort;
}

}  // namespace cmr::phantom
