#include "cmr/volume.hpp"

#include <cmath>

namespace cmr {
namespace {

void validate_spacing(const Spacing& s, const std::string& what) {
  if (!(s.z > 0 && s.y > 0 && s.x > 0) || !std::isfinite(s.z) || !std::isfinite(s.y) || !std::isfinite(s.x))
    throw InputError(what + ": spacing components must be positive and finite");
}

}  // namespace

std::string_view phase_name(Phase p) { return p == Phase::kED ? "ED" : "ES"; }

std::string_view disease_name(DiseaseClass c) {
  switch (c) {
    case DiseaseClass::kNormal: return "NOR";
    case DiseaseClass::kDCM: return "DCM";
    case DiseaseClass::kHCM: return "HCM";
    case DiseaseClass::kMINF: return "MINF";
    case DiseaseClass::kRVA: return "RVA";
  }
  return "?";
}

DiseaseClass parse_disease(std::string_view tag) {
  for (std::size_t c = 0; c < kDiseaseClassCount; ++c) {
    const auto cls = static_cast<DiseaseClass>(c);
    if (disease_name(cls) == tag) return cls;
  }
  throw InputError("unknown diagnosis tag '" + std::string(tag) + "' (expected NOR, DCM, HCM, MINF or RVA)");
}

void validate(const CineVolume& v) {
  const std::string what = std::string(phase_name(v.phase)) + " volume";
  if (v.data.slices() == 0 || v.data.rows() == 0 || v.data.cols() == 0)
    throw InputError(what + ": every dimension must be >= 1");
  validate_spacing(v.spacing_mm, what);
  for (float value : v.data.values())
    if (!std::isfinite(value)) throw InputError(what + ": non-finite intensity");
}

void validate(const LabelMap& m) {
  if (m.labels.slices() == 0 || m.labels.rows() == 0 || m.labels.cols() == 0)
    throw InputError("label map: every dimension must be >= 1");
  validate_spacing(m.spacing_mm, "label map");
  const auto& values = m.labels.values();
  for (std::size_t i = 0; i < values.size(); ++i)
    if (values[i] >= kLabelCount)
      throw InputError("label map: invalid label value " + std::to_string(values[i]) + " at voxel " +
                       std::to_string(i) + " (allowed 0..3)");
}

void validate(const CineStudy& s) {
  const std::string who = "study '" + s.patient_id + "'";
  validate(s.ed);
  validate(s.es);
  if (s.ed.phase != Phase::kED || s.es.phase != Phase::kES) throw InputError(who + ": phase tags out of order");
  if (s.ed.data.shape() != s.es.data.shape()) throw InputError(who + ": ED and ES grids differ in shape");
  if (!(s.ed.spacing_mm == s.es.spacing_mm)) throw InputError(who + ": ED and ES spacing differ");
  if (!(s.weight_kg > 0) || !std::isfinite(s.weight_kg)) throw InputError(who + ": weight_kg must be positive");
  if (!(s.height_cm > 0) || !std::isfinite(s.height_cm)) throw InputError(who + ": height_cm must be positive");
  if (s.reference_labels) {
    validate(s.reference_labels->ed);
    validate(s.reference_labels->es);
    if (s.reference_labels->ed.labels.shape() != s.ed.data.shape() ||
        s.reference_labels->es.labels.shape() != s.es.data.shape())
      throw InputError(who + ": reference labels do not match the volume grid");
  }
}

}  // namespace cmr
