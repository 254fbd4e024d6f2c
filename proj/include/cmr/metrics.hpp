#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "cmr/volume.hpp"

namespace cmr {

/// Binary mask: nonzero = foreground.
using Mask = Grid3<std::uint8_t>;

Mask class_mask(const LabelMap& labels, std::uint8_t label);

/// 2|A∩B| / (|A| + |B|); 1 when both masks are empty.
double dice_coef(const Mask& a, const Mask& b);

/// Foreground voxels with at least one background face neighbour; voxels on
/// the grid edge count as boundary.
std::vector<std::array<std::size_t, 3>> boundary_voxels(const Mask& m);

/// Symmetric Hausdorff distance in mm between the boundary voxel centres of
/// two masks. Throws NumericalError if either mask is empty.
double hausdorff_mm(const Mask& a, const Mask& b, const Spacing& spacing);

inline constexpr double kMyocardialDensity = 1.05;  // g/ml

struct StructureQuantification {
  double lv_edv = 0;
  double lv_esv = 0;
  double rv_edv = 0;
  double rv_esv = 0;
  double myo_edv = 0;
  double myo_esv = 0;
  double myo_mass_ed = 0;
  double myo_mass_es = 0;
  double lv_ef = 0;
  double rv_ef = 0;
  /// Set when a ventricle's ESV exceeds its EDV (negative EF).
  bool ef_flagged = false;
};

double volume_ml(const LabelMap& labels, std::uint8_t label);

/// 100 * (EDV - ESV) / EDV; throws NumericalError when EDV is zero.
double ejection_fraction(double edv, double esv);

StructureQuantification quantify(const LabelMap& ed, const LabelMap& es, double density = kMyocardialDensity);

struct BlandAltman {
  double bias = 0;
  double loa_low = 0;
  double loa_high = 0;
  double sd = 0;
  std::size_t n = 0;
};

/// Differences are automatic - reference; limits are bias ± 1.96 sd with
/// the n-1 sample standard deviation. Pairs are (reference, automatic).
BlandAltman bland_altman(std::span<const std::pair<double, double>> pairs);

/// Throws NumericalError when either series has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

struct ConfusionResult {
  /// matrix[true][predicted]
  std::vector<std::vector<std::size_t>> matrix;
  double accuracy = 0;
};

ConfusionResult confusion_and_accuracy(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                       std::size_t classes);

/// Dice and Hausdorff for one structure at one phase. `hausdorff_mm` is NaN
/// when either mask is empty.
struct StructureScore {
  std::uint8_t label = 0;
  Phase phase = Phase::kED;
  double dice = 0;
  double hausdorff_mm = 0;
};

/// Scores RV, Myo and LV at both phases. The grids must match.
std::vector<StructureScore> score_segmentation(const PhaseLabels& predicted, const PhaseLabels& reference);

std::string_view structure_name(std::uint8_t label);

}  // namespace cmr
