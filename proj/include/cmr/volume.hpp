#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cmr/error.hpp"

namespace cmr {

/// Dense 3-D grid in C order [slice, row, col].
template <typename T>
class Grid3 {
 public:
  Grid3() = default;
  Grid3(std::size_t slices, std::size_t rows, std::size_t cols, T fill = T{})
      : slices_(slices), rows_(rows), cols_(cols), values_(slices * rows * cols, fill) {}

  [[nodiscard]] std::size_t slices() const { return slices_; }
  [[nodiscard]] std::size_t rows() const { return rows_; }
  [[nodiscard]] std::size_t cols() const { return cols_; }
  [[nodiscard]] std::size_t size() const { return values_.size(); }
  [[nodiscard]] std::size_t plane() const { return rows_ * cols_; }
  [[nodiscard]] std::array<std::size_t, 3> shape() const { return {slices_, rows_, cols_}; }

  [[nodiscard]] std::size_t index(std::size_t z, std::size_t y, std::size_t x) const {
    return (z * rows_ + y) * cols_ + x;
  }
  T& at(std::size_t z, std::size_t y, std::size_t x) { return values_[index(z, y, x)]; }
  const T& at(std::size_t z, std::size_t y, std::size_t x) const { return values_[index(z, y, x)]; }

  T* slice_data(std::size_t z) { return values_.data() + z * plane(); }
  const T* slice_data(std::size_t z) const { return values_.data() + z * plane(); }

  std::vector<T>& values() { return values_; }
  const std::vector<T>& values() const { return values_; }

  friend bool operator==(const Grid3&, const Grid3&) = default;

 private:
  std::size_t slices_ = 0;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> values_;
};

/// Voxel spacing in millimetres along (slice, row, col).
struct Spacing {
  double z = 1.0;
  double y = 1.0;
  double x = 1.0;

  [[nodiscard]] double voxel_mm3() const { return z * y * x; }
  friend bool operator==(const Spacing&, const Spacing&) = default;
};

enum class Phase : std::uint8_t { kED, kES };
std::string_view phase_name(Phase p);

struct CineVolume {
  Grid3<float> data;
  Spacing spacing_mm;
  Phase phase = Phase::kED;

  friend bool operator==(const CineVolume&, const CineVolume&) = default;
};

/// Labels: 0 = background, 1 = RV cavity, 2 = myocardium, 3 = LV cavity.
struct LabelMap {
  Grid3<std::uint8_t> labels;
  Spacing spacing_mm;

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

inline constexpr std::uint8_t kLabelBackground = 0;
inline constexpr std::uint8_t kLabelRV = 1;
inline constexpr std::uint8_t kLabelMyo = 2;
inline constexpr std::uint8_t kLabelLV = 3;
inline constexpr std::uint8_t kLabelCount = 4;

struct PhaseLabels {
  LabelMap ed;
  LabelMap es;
  friend bool operator==(const PhaseLabels&, const PhaseLabels&) = default;
};

/// The five diagnostic groups, in classifier output order.
enum class DiseaseClass : std::uint8_t { kNormal = 0, kDCM = 1, kHCM = 2, kMINF = 3, kRVA = 4 };
inline constexpr std::size_t kDiseaseClassCount = 5;
std::string_view disease_name(DiseaseClass c);
/// Accepts the short tags NOR, DCM, HCM, MINF, RVA.
DiseaseClass parse_disease(std::string_view tag);

/// Cavity and wall volumes in millilitres.
struct StructureVolumes {
  double lv_edv = 0;
  double lv_esv = 0;
  double rv_edv = 0;
  double rv_esv = 0;
  double myo_edv = 0;
  double myo_esv = 0;
  friend bool operator==(const StructureVolumes&, const StructureVolumes&) = default;
};

struct CineStudy {
  std::string patient_id;
  CineVolume ed;
  CineVolume es;
  double weight_kg = 0;
  double height_cm = 0;
  std::optional<PhaseLabels> reference_labels;
  /// Known diagnosis, when the study carries one (training cohorts).
  std::optional<DiseaseClass> diagnosis;
  /// Exact volumes of a synthetic study's geometry.
  std::optional<StructureVolumes> analytic_volumes;

  friend bool operator==(const CineStudy&, const CineStudy&) = default;
};

/// Throws InputError describing the first violated invariant.
void validate(const CineVolume& v);
void validate(const LabelMap& m);
void validate(const CineStudy& s);

}  // namespace cmr
