#pragma once

#include <optional>
#include <vector>

#include "cmr/metrics.hpp"
#include "cmr/segnet.hpp"
#include "cmr/volume.hpp"

namespace cmr {

/// Per-phase class probabilities, [slices, 4, rows, cols].
using ProbabilityVolume = Tensor;

/// Element-wise mean, accumulated in double in the given order.
ProbabilityVolume average_probs(const std::vector<ProbabilityVolume>& maps);

/// Keeps the largest face-connected component. Among equally large
/// components the one whose first voxel in (z, y, x) order comes first wins.
Mask largest_cc_6(const Mask& mask);

/// largest_cc_6 on RV, Myo and LV separately; dropped voxels become background.
LabelMap postprocess_largest_cc(const LabelMap& labels);

/// Lowest class index wins ties.
LabelMap argmax_labels(const ProbabilityVolume& probs, const Spacing& spacing);

struct Segmentation {
  PhaseLabels labels;
  ProbabilityVolume probs_ed;
  ProbabilityVolume probs_es;
};

/// Ensemble segmentation of a preprocessed study. Snapshots are visited in
/// (iteration, content hash) order so the result does not depend on the
/// order they are passed in.
Segmentation segment_study(const std::vector<Model>& snapshots, const CineStudy& study);

}  // namespace cmr
