#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cmr/random.hpp"
#include "cmr/volume.hpp"

// Synthetic short-axis cine studies: per slice an LV disk, a concentric
// myocardial annulus and an RV crescent hugging the epicardium. Geometry is
// invented; the class presets only reproduce qualitative group differences
// (low LV EF for DCM/MINF, thick wall for HCM, large RV for RVA).
namespace cmr::phantom {

struct Range {
  double lo = 0;
  double hi = 0;
};

struct PhantomPreset {
  DiseaseClass disease = DiseaseClass::kNormal;
  Range lv_radius_ed_mm;     // basal LV cavity radius at ED
  Range lv_ef;               // LV contraction fraction; ES radius = ED radius * sqrt(1 - ef)
  Range myo_thickness_ed_mm; // ES thickness follows from constant wall area
  Range rv_radius_ed_mm;     // basal radius of the disk the RV crescent is cut from
  Range rv_ef;
  Range rv_offset;           // RV disk centre sits at epicardial radius + offset * RV radius
  double noise_sd = 0.05;
  std::size_t slices = 8;
  std::size_t rows = 112;
  std::size_t cols = 112;
  Spacing spacing_mm{10.0, 1.4, 1.4};
  /// Apex radius as a fraction of the basal radius.
  double apex_taper = 0.6;
  /// Bright background tissue outside this distance from the field-of-view
  /// centre (0 disables). Keeps the 95th intensity percentile on a bright
  /// level even when the cavities are small.
  double wall_radius_mm = 72.0;
};

/// Default preset for a class.
PhantomPreset preset_for(DiseaseClass disease);

/// Throws InputError for empty/inverted ranges or geometry that cannot fit.
void validate(const PhantomPreset& preset);

inline constexpr float kBackgroundIntensity = 0.1f;
inline constexpr float kMyocardiumIntensity = 0.4f;
inline constexpr float kCavityIntensity = 0.8f;
inline constexpr float kWallIntensity = 1.0f;

/// Concrete geometry drawn from a preset.
struct PhantomGeometry {
  double lv_radius_ed = 0;
  double lv_radius_es = 0;
  double myo_thickness_ed = 0;
  double rv_radius_ed = 0;
  double rv_radius_es = 0;
  double rv_offset = 0;
  double rv_angle_rad = 0;
  double center_y_mm = 0;
  double center_x_mm = 0;
};

PhantomGeometry sample_geometry(const PhantomPreset& preset, std::mt19937_64& rng);

/// Exact disk-stack volumes of the geometry (ml).
StructureVolumes analytic_volumes(const PhantomPreset& preset, const PhantomGeometry& g);

/// Renders a labelled study. The result carries reference labels, the
/// preset's diagnosis and the analytic volumes.
CineStudy render_study(const PhantomPreset& preset, const PhantomGeometry& g, std::mt19937_64& rng,
                       const std::string& patient_id, double weight_kg, double height_cm);

CineStudy generate_study(const PhantomPreset& preset, std::mt19937_64& rng, const std::string& patient_id);

/// n_per_class studies per class, class-major order (NOR, DCM, HCM, MINF,
/// RVA); each study is drawn from its own seed derived from `seed`.
std::vector<CineStudy> generate_cohort(std::size_t n_per_class, std::uint64_t seed);

/// Area of intersection of two disks with radii r1, r2 and centre distance d.
double disk_overlap_area(double r1, double r2, double d);

}  // namespace cmr::phantom
