#include "cmr/diagnosis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "cmr/binary_io.hpp"
#include "cmr/random.hpp"

namespace cmr {

const std::array<std::string_view, kFeatureCount>& feature_names() {
  static const std::array<std::string_view, kFeatureCount> names{
      "weight_kg", "height_cm", "lv_edv",          "lv_esv",          "rv_edv",           "rv_esv",
      "myo_edv",   "myo_esv",   "lv_ef",           "rv_ef",           "rv_lv_ratio_ed",   "rv_lv_ratio_es",
      "myo_lv_ratio_ed", "myo_lv_ratio_es"};
  return names;
}

FeatureVector extract_features(const CineStudy& study, const LabelMap& ed, const LabelMap& es) {
  const StructureQuantification q = [&] {
    try {
      return quantify(ed, es);
    } catch (const NumericalError& e) {
      throw InputError("features for patient '" + study.patient_id + "': " + e.what());
    }
  }();
  if (!(q.lv_edv > 0) || !(q.lv_esv > 0))
    throw InputError("features for patient '" + study.patient_id + "': LV volume is zero at " +
                     (q.lv_edv > 0 ? "ES" : "ED"));
  FeatureVector f{study.weight_kg,    study.height_cm,     q.lv_edv,           q.lv_esv,
                  q.rv_edv,           q.rv_esv,            q.myo_edv,          q.myo_esv,
                  q.lv_ef,            q.rv_ef,             q.rv_edv / q.lv_edv, q.rv_esv / q.lv_esv,
                  q.myo_edv / q.lv_edv, q.myo_esv / q.lv_esv};
  for (double v : f)
    if (!std::isfinite(v)) throw NumericalError("features for patient '" + study.patient_id + "' are not finite");
  return f;
}

FeatureVector reference_features(const CineStudy& study) {
  if (!study.reference_labels)
    throw InputError("features for patient '" + study.patient_id + "': no reference labels");
  return extract_features(study, study.reference_labels->ed, study.reference_labels->es);
}

namespace {

double gini_weighted(const std::vector<double>& counts, double n) {
  // n * gini = n - sum c^2 / n
  if (n <= 0) return 0;
  double sq = 0;
  for (double c : counts) sq += c * c;
  return n - sq / n;
}

struct SplitChoice {
  bool found = false;
  std::size_t feature = 0;
  double threshold = 0;
  double decrease = 0;
};

constexpr double kMinDecrease = 1e-12;

class TreeBuilder {
 public:
  TreeBuilder(const std::vector<std::vector<double>>& x, const std::vector<std::size_t>& y, std::size_t classes,
              std::size_t mtry, std::uint64_t seed)
      : x_(x), y_(y), classes_(classes), mtry_(mtry), rng_(seed) {}

  DecisionTree build() {
    const std::size_t n = x_.size();
    std::vector<std::size_t> sample(n);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (auto& s : sample) s = pick(rng_);
    std::sort(sample.begin(), sample.end());

    DecisionTree tree;
    tree.impurity_decrease.assign(x_.front().size(), 0.0);
    struct Pending {
      std::uint32_t node;
      std::vector<std::size_t> members;
    };
    std::vector<Pending> stack;
    tree.nodes.emplace_back();
    stack.push_back({0, std::move(sample)});
    while (!stack.empty()) {
      Pending job = std::move(stack.back());
      stack.pop_back();
      std::vector<double> counts(classes_, 0.0);
      for (std::size_t i : job.members) counts[y_[i]] += 1.0;
      tree.nodes[job.node].class_counts = counts;
      const auto nonzero = std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0; });
      if (nonzero <= 1) continue;

      const SplitChoice split = choose_split(job.members, counts);
      if (!split.found) continue;
      std::vector<std::size_t> left;
      std::vector<std::size_t> right;
      for (std::size_t i : job.members) (x_[i][split.feature] <= split.threshold ? left : right).push_back(i);
      const auto left_id = static_cast<std::uint32_t>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      TreeNode& node = tree.nodes[job.node];
      node.feature = static_cast<std::int32_t>(split.feature);
      node.threshold = split.threshold;
      node.left = left_id;
      node.right = left_id + 1;
      tree.impurity_decrease[split.feature] += split.decrease;
      // right pushed first so the left subtree is grown first
      stack.push_back({left_id + 1, std::move(right)});
      stack.push_back({left_id, std::move(left)});
    }
    return tree;
  }

 private:
  SplitChoice choose_split(const std::vector<std::size_t>& members, const std::vector<double>& counts) {
    const double n = static_cast<double>(members.size());
    const double parent = gini_weighted(counts, n);
    std::vector<std::size_t> varying;
    for (std::size_t f = 0; f < x_.front().size(); ++f) {
      const double first = x_[members.front()][f];
      if (std::any_of(members.begin(), members.end(), [&](std::size_t i) { return x_[i][f] != first; }))
        varying.push_back(f);
    }
    SplitChoice best;
    for (std::size_t i = 0; i < varying.size(); ++i) {
      const std::size_t j = std::uniform_int_distribution<std::size_t>(i, varying.size() - 1)(rng_);
      std::swap(varying[i], varying[j]);
      evaluate(varying[i], members, parent, best);
      if (i + 1 >= mtry_ && best.found) break;
    }
    return best;
  }

  void evaluate(std::size_t f, const std::vector<std::size_t>& members, double parent, SplitChoice& best) {
    std::vector<std::size_t> order = members;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x_[a][f] < x_[b][f]; });
    std::vector<double> left(classes_, 0.0);
    std::vector<double> right(classes_, 0.0);
    for (std::size_t i : order) right[y_[i]] += 1.0;
    const double n = static_cast<double>(order.size());
    for (std::size_t k = 0; k + 1 < order.size(); ++k) {
      left[y_[order[k]]] += 1.0;
      right[y_[order[k]]] -= 1.0;
      const double a = x_[order[k]][f];
      const double b = x_[order[k + 1]][f];
      if (!(a < b)) continue;
      const double nl = static_cast<double>(k + 1);
      const double decrease = parent - gini_weighted(left, nl) - gini_weighted(right, n - nl);
      if (decrease > kMinDecrease && decrease > best.decrease) {
        double t = a + 0.5 * (b - a);
        if (!(t < b)) t = a;
        best = {true, f, t, decrease};
      }
    }
  }

  const std::vector<std::vector<double>>& x_;
  const std::vector<std::size_t>& y_;
  std::size_t classes_;
  std::size_t mtry_;
  std::mt19937_64 rng_;
};

const TreeNode& leaf_for(const DecisionTree& tree, std::span<const double> x) {
  std::size_t id = 0;
  while (tree.nodes[id].feature != TreeNode::kLeaf) {
    const TreeNode& node = tree.nodes[id];
    id = x[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left : node.right;
  }
  return tree.nodes[id];
}

}  // namespace

Forest rf_train(const std::vector<std::vector<double>>& samples, const std::vector<std::size_t>& labels,
                const ForestConfig& config) {
  if (samples.empty()) throw InputError("rf_train: empty training set");
  if (samples.size() != labels.size()) throw InputError("rf_train: samples and labels differ in length");
  if (config.n_trees == 0) throw InputError("rf_train: need at least one tree");
  if (config.n_classes == 0) throw InputError("rf_train: need at least one class");
  const std::size_t p = samples.front().size();
  if (p == 0) throw InputError("rf_train: samples have no features");
  for (const auto& s : samples) {
    if (s.size() != p) throw InputError("rf_train: ragged feature vectors");
    for (double v : s)
      if (!std::isfinite(v)) throw InputError("rf_train: non-finite feature value");
  }
  for (std::size_t y : labels)
    if (y >= config.n_classes) throw InputError("rf_train: label out of range");

  Forest forest;
  forest.n_classes = config.n_classes;
  forest.n_features = p;
  forest.seed = config.seed;
  forest.trees.resize(config.n_trees);
  const std::size_t mtry =
      config.mtry ? config.mtry : std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(p))));
  const auto trees = static_cast<std::ptrdiff_t>(config.n_trees);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t t = 0; t < trees; ++t) {
    TreeBuilder builder(samples, labels, config.n_classes, mtry,
                        derive_seed(config.seed, static_cast<std::uint64_t>(t)));
    forest.trees[static_cast<std::size_t>(t)] = builder.build();
  }
  return forest;
}

double entropy_nats(std::span<const double> p) {
  double h = 0;
  for (double v : p)
    if (v > 0) h -= v * std::log(v);
  return std::max(h, 0.0);
}

DiagnosisReport rf_predict(const Forest& forest, std::span<const double> x) {
  if (forest.trees.empty()) throw InputError("rf_predict: forest has no trees");
  if (x.size() != forest.n_features)
    throw InputError("rf_predict: expected " + std::to_string(forest.n_features) + " features, got " +
                     std::to_string(x.size()));
  DiagnosisReport r;
  r.posterior.assign(forest.n_classes, 0.0);
  for (const DecisionTree& tree : forest.trees) {
    const TreeNode& leaf = leaf_for(tree, x);
    const double total = std::accumulate(leaf.class_counts.begin(), leaf.class_counts.end(), 0.0);
    for (std::size_t c = 0; c < forest.n_classes; ++c) r.posterior[c] += leaf.class_counts[c] / total;
  }
  for (double& v : r.posterior) v /= static_cast<double>(forest.trees.size());
  r.predicted_class = static_cast<std::size_t>(std::max_element(r.posterior.begin(), r.posterior.end()) -
                                               r.posterior.begin());
  r.entropy_nats = entropy_nats(r.posterior);
  r.entropy_normalized = forest.n_classes > 1 ? r.entropy_nats / std::log(static_cast<double>(forest.n_classes)) : 0;
  return r;
}

std::vector<double> feature_importance(const Forest& forest) {
  std::vector<double> imp(forest.n_features, 0.0);
  for (const DecisionTree& tree : forest.trees) {
    const double total = std::accumulate(tree.impurity_decrease.begin(), tree.impurity_decrease.end(), 0.0);
    if (!(total > 0)) continue;
    for (std::size_t f = 0; f < imp.size(); ++f) imp[f] += tree.impurity_decrease[f] / total;
  }
  const double sum = std::accumulate(imp.begin(), imp.end(), 0.0);
  if (sum > 0)
    for (double& v : imp) v /= sum;
  return imp;
}

namespace {
constexpr char kForestMagic[8] = {'C', 'M', 'R', 'F', 'R', 'S', 'T', '\0'};
}

std::vector<std::uint8_t> serialize_forest(const Forest& forest) {
  binary::Writer w;
  w.raw(std::string_view(kForestMagic, sizeof(kForestMagic)));
  w.u32(kForestVersion);
  w.u32(static_cast<std::uint32_t>(forest.n_classes));
  w.u32(static_cast<std::uint32_t>(forest.n_features));
  w.u64(forest.seed);
  w.u64(forest.trees.size());
  for (const DecisionTree& tree : forest.trees) {
    w.u64(tree.nodes.size());
    for (const TreeNode& node : tree.nodes) {
      w.u32(static_cast<std::uint32_t>(node.feature));
      w.f64(node.threshold);
      w.u32(node.left);
      w.u32(node.right);
      for (double c : node.class_counts) w.f64(c);
    }
    for (double d : tree.impurity_decrease) w.f64(d);
  }
  w.u64(binary::fnv1a(w.bytes()));
  return w.take();
}

Forest deserialize_forest(std::span<const std::uint8_t> bytes) {
  binary::Reader r(bytes, "forest");
  if (r.raw(sizeof(kForestMagic)) != std::string(kForestMagic, sizeof(kForestMagic)))
    throw FormatError("forest: bad magic bytes (not a forest file)");
  const std::uint32_t version = r.u32();
  if (version != kForestVersion)
    throw FormatError("forest: unsupported format version " + std::to_string(version) + " (expected " +
                      std::to_string(kForestVersion) + ")");
  Forest f;
  f.n_classes = r.u32();
  f.n_features = r.u32();
  f.seed = r.u64();
  const std::uint64_t trees = r.u64();
  if (f.n_classes == 0 || f.n_features == 0 || trees == 0) throw FormatError("forest: empty header fields");
  // every node needs at least 20 bytes, so sizes beyond the buffer are corrupt
  if (trees > r.remaining()) throw FormatError("forest: implausible tree count");
  f.trees.resize(trees);
  for (DecisionTree& tree : f.trees) {
    const std::uint64_t nodes = r.u64();
    if (nodes == 0 || nodes > r.remaining()) throw FormatError("forest: implausible node count");
    tree.nodes.resize(nodes);
    for (TreeNode& node : tree.nodes) {
      node.feature = static_cast<std::int32_t>(r.u32());
      node.threshold = r.f64();
      node.left = r.u32();
      node.right = r.u32();
      node.class_counts.resize(f.n_classes);
      for (double& c : node.class_counts) c = r.f64();
    }
    for (const TreeNode& node : tree.nodes) {
      if (node.feature == TreeNode::kLeaf) {
        if (!(std::accumulate(node.class_counts.begin(), node.class_counts.end(), 0.0) > 0))
          throw FormatError("forest: empty leaf");
        continue;
      }
      if (node.feature < 0 || static_cast<std::size_t>(node.feature) >= f.n_features || node.left >= nodes ||
          node.right >= nodes)
        throw FormatError("forest: node references out of range");
    }
    tree.impurity_decrease.resize(f.n_features);
    for (double& d : tree.impurity_decrease) d = r.f64();
  }
  const std::size_t body = r.position();
  if (r.u64() != binary::fnv1a(bytes.first(body))) throw FormatError("forest: checksum mismatch (corrupted file)");
  if (r.remaining() != 0) throw FormatError("forest: trailing bytes after checksum");
  return f;
}

void save_forest(const Forest& forest, const std::filesystem::path& path) {
  binary::write_file(path, serialize_forest(forest));
}

Forest load_forest(const std::filesystem::path& path) { return deserialize_forest(binary::read_file(path)); }

std::vector<std::vector<std::size_t>> stratified_kfold(const std::vector<std::size_t>& labels, std::size_t k,
                                                       std::uint64_t seed) {
  if (k == 0) throw InputError("stratified_kfold: k must be >= 1");
  if (labels.empty()) throw InputError("stratified_kfold: no samples");
  const std::size_t classes = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  for (std::size_t c = 0; c < classes; ++c)
    if (!by_class[c].empty() && by_class[c].size() < k)
      throw InputError("stratified_kfold: k = " + std::to_string(k) + " exceeds the " +
                       std::to_string(by_class[c].size()) + " samples of class " + std::to_string(c));
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t offset = 0;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t j = 0; j < members.size(); ++j) folds[(offset + j) % k].push_back(members[j]);
    // rotate so the folds that got an extra member of this class come last next time
    offset = (offset + members.size()) % k;
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

CrossValResult cross_validate(const std::vector<std::vector<double>>& samples, const std::vector<std::size_t>& labels,
                              std::size_t k, std::uint64_t seed, const ForestConfig& forest_config) {
  if (samples.size() != labels.size()) throw InputError("cross_validate: samples and labels differ in length");
  const auto folds = stratified_kfold(labels, k, seed);
  CrossValResult out;
  out.fold_of.assign(samples.size(), 0);
  out.reports.resize(samples.size());
  std::vector<std::size_t> predicted(samples.size(), 0);
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<bool> held(samples.size(), false);
    for (std::size_t i : folds[f]) held[i] = true;
    std::vector<std::vector<double>> x;
    std::vector<std::size_t> y;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (!held[i] || folds.size() == 1) {
        x.push_back(samples[i]);
        y.push_back(labels[i]);
      }
    ForestConfig cfg = forest_config;
    cfg.seed = derive_seed(seed, f);
    const Forest forest = rf_train(x, y, cfg);
    const auto imp = feature_importance(forest);
    if (out.importance.empty()) out.importance.assign(imp.size(), 0.0);
    for (std::size_t j = 0; j < imp.size(); ++j) out.importance[j] += imp[j] / static_cast<double>(folds.size());
    for (std::size_t i : folds[f]) {
      out.fold_of[i] = f;
      out.reports[i] = rf_predict(forest, samples[i]);
      predicted[i] = out.reports[i].predicted_class;
    }
  }
  out.confusion = confusion_and_accuracy(labels, predicted, forest_config.n_classes);
  return out;
}

void write_features_csv(const std::filesystem::path& path, const std::vector<LabeledFeatures>& rows) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write features file " + path.string());
  out << "patient_id";
  for (auto name : feature_names()) out << ',' << name;
  out << ",label\n";
  for (const auto& row : rows) {
    out << row.patient_id;
    for (double v : row.features) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << ',' << buf;
    }
    out << ',' << (row.diagnosis ? disease_name(*row.diagnosis) : std::string_view{}) << '\n';
  }
  if (!out) throw InputError("failed writing features file " + path.string());
}

std::vector<LabeledFeatures> read_features_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open features file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("features file " + path.string() + " is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() != kFeatureCount + 2 || header.front() != "patient_id" || header.back() != "label")
    throw FormatError("features file " + path.string() + ": unexpected header");
  for (std::size_t i = 0; i < kFeatureCount; ++i)
    if (header[i + 1] != feature_names()[i])
      throw FormatError("features file " + path.string() + ": column " + std::to_string(i + 2) + " is '" +
                        header[i + 1] + "', expected '" + std::string(feature_names()[i]) + "'");
  std::vector<LabeledFeatures> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      cells.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (cells.size() != kFeatureCount + 2)
      throw FormatError("features file line " + std::to_string(line_no) + ": expected " +
                        std::to_string(kFeatureCount + 2) + " fields");
    LabeledFeatures row;
    row.patient_id = cells[0];
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
      const std::string& c = cells[i + 1];
      char* end = nullptr;
      row.features[i] = std::strtod(c.c_str(), &end);
      if (c.empty() || end != c.c_str() + c.size() || !std::isfinite(row.features[i]))
        throw FormatError("features file line " + std::to_string(line_no) + ": bad number '" + c + "'");
    }
    if (!cells.back().empty()) row.diagnosis = parse_disease(cells.back());
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace cmr
