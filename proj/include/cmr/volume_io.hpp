#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "cmr/volume.hpp"

namespace cmr {

inline constexpr int kStudyFormatVersion = 1;
inline constexpr double kTargetSpacingMm = 1.4;

/// Study directory: meta.json plus little-endian raw files
/// (float32 volumes, uint8 label maps) in [slice, row, col] order.
void save_study(const CineStudy& study, const std::filesystem::path& dir);
CineStudy load_study(const std::filesystem::path& dir);

/// Sorted subdirectories of `root` that contain a meta.json.
std::vector<std::filesystem::path> list_study_dirs(const std::filesystem::path& root);

/// Bilinear in-plane resampling to `target_mm`; the slice axis is untouched.
/// Output rows = round(rows * y_spacing / target_mm), cols likewise.
CineVolume resample_inplane(const CineVolume& vol, double target_mm = kTargetSpacingMm);
/// Nearest-neighbour counterpart for label maps.
LabelMap resample_labels_inplane(const LabelMap& labels, double target_mm = kTargetSpacingMm);

/// Linear-interpolation percentile at rank q/100 * (n - 1) of the sorted values.
double percentile(std::span<const float> values, double q);

/// clamp((v - p5) / (p95 - p5), 0, 1) over the whole volume; all zeros when
/// p95 == p5.
CineVolume normalize_intensity(const CineVolume& vol);

/// Resampling of both phases (and reference labels) followed by per-volume
/// intensity normalization.
CineStudy preprocess_study(const CineStudy& study, double target_mm = kTargetSpacingMm);

/// Writes a float32 [slices, 4, rows, cols] probability raster.
void write_probability_raw(const std::filesystem::path& path, std::span<const float> values);

}  // namespace cmr
