#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cmr/metrics.hpp"
#include "cmr/volume.hpp"

namespace cmr {

inline constexpr std::size_t kFeatureCount = 14;
using FeatureVector = std::array<double, kFeatureCount>;

/// Column names in feature order.
const std::array<std::string_view, kFeatureCount>& feature_names();

/// Patient metadata plus volumes, EFs and RV/LV, Myo/LV ratios. Throws
/// InputError naming the patient when the LV is empty at either phase.
FeatureVector extract_features(const CineStudy& study, const LabelMap& ed, const LabelMap& es);

/// Features from the study's own reference labels.
FeatureVector reference_features(const CineStudy& study);

struct TreeNode {
  static constexpr std::int32_t kLeaf = -1;
  std::int32_t feature = kLeaf;
  double threshold = 0;  // go left when x[feature] <= threshold
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  std::vector<double> class_counts;  // bootstrap counts reaching the node
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // root at 0
  /// Total Gini decrease (count-weighted) per feature.
  std::vector<double> impurity_decrease;
  friend bool operator==(const DecisionTree&, const DecisionTree&) = default;
};

struct ForestConfig {
  std::size_t n_trees = 1000;
  /// Features tried per split; 0 = floor(sqrt(feature count)).
  std::size_t mtry = 0;
  std::uint64_t seed = 0;
  std::size_t n_classes = kDiseaseClassCount;
};

struct Forest {
  std::size_t n_classes = 0;
  std::size_t n_features = 0;
  std::uint64_t seed = 0;
  std::vector<DecisionTree> trees;
  friend bool operator==(const Forest&, const Forest&) = default;
};

/// Bootstrap-trained Gini trees grown until pure or no split improves. Each
/// node draws mtry candidates from the features that vary at that node and
/// falls back to the remaining varying features if none of them improves.
Forest rf_train(const std::vector<std::vector<double>>& samples, const std::vector<std::size_t>& labels,
                const ForestConfig& config);

struct DiagnosisReport {
  std::vector<double> posterior;
  std::size_t predicted_class = 0;
  double entropy_nats = 0;
  double entropy_normalized = 0;  // entropy / ln(classes)
};

/// Soft voting: mean of the normalized leaf class counts.
DiagnosisReport rf_predict(const Forest& forest, std::span<const double> x);

/// -sum p ln p over the non-zero entries.
double entropy_nats(std::span<const double> p);

/// Mean decrease in impurity, normalized per tree, averaged and renormalized.
/// All zeros when no tree ever split.
std::vector<double> feature_importance(const Forest& forest);

inline constexpr std::uint32_t kForestVersion = 1;
std::vector<std::uint8_t> serialize_forest(const Forest& forest);
Forest deserialize_forest(std::span<const std::uint8_t> bytes);
void save_forest(const Forest& forest, const std::filesystem::path& path);
Forest load_forest(const std::filesystem::path& path);

/// k disjoint folds; each holds floor or ceil(n_c / k) members of every
/// class, sorted ascending. Throws InputError when k exceeds the size of the
/// smallest class present.
std::vector<std::vector<std::size_t>> stratified_kfold(const std::vector<std::size_t>& labels, std::size_t k,
                                                       std::uint64_t seed);

struct CrossValResult {
  ConfusionResult confusion;
  std::vector<std::size_t> fold_of;  // per sample
  std::vector<DiagnosisReport> reports;  // per sample, from the forest that did not see it
  std::vector<double> importance;  // mean over the fold forests
};

/// Per fold: forest on the out-of-fold samples, predictions for the fold.
/// The fold forest seed is derived from `seed` and the fold index.
CrossValResult cross_validate(const std::vector<std::vector<double>>& samples, const std::vector<std::size_t>& labels,
                              std::size_t k, std::uint64_t seed, const ForestConfig& forest_config);

struct LabeledFeatures {
  std::string patient_id;
  FeatureVector features{};
  std::optional<DiseaseClass> diagnosis;
};

/// patient_id, the 14 named columns, label (class tag or empty).
void write_features_csv(const std::filesystem::path& path, const std::vector<LabeledFeatures>& rows);
std::vector<LabeledFeatures> read_features_csv(const std::filesystem::path& path);

}  // namespace cmr
