// cmr: phantom generation, training, segmentation, evaluation and diagnosis
// of short-axis cine MR studies.

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cmr/diagnosis.hpp"
#include "cmr/inference.hpp"
#include "cmr/metrics.hpp"
#include "cmr/phantom.hpp"
#include "cmr/random.hpp"
#include "cmr/trainer.hpp"
#include "cmr/volume_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace cmr;

namespace {

constexpr const char* kToolVersion = "1.0.0";

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw InputError("cannot write " + path.string());
}

// Resolved configuration for a run, stored next to its outputs.
void write_run_config(const fs::path& path, const std::string& command, const json& args) {
  json j;
  j["tool"] = "cmr";
  j["version"] = kToolVersion;
  j["command"] = command;
  j["args"] = args;
  write_json(path, j);
}

fs::path config_next_to(const fs::path& file) {
  fs::path p = file;
  p += ".config.json";
  return p;
}

std::vector<fs::path> require_studies(const fs::path& root) {
  if (!fs::is_directory(root)) throw InputError("data directory not found: " + root.string());
  auto dirs = list_study_dirs(root);
  if (dirs.empty()) throw InputError("no studies (subdirectories with meta.json) in " + root.string());
  return dirs;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// ---------------------------------------------------------------- phantom

struct PhantomArgs {
  std::string out;
  std::size_t per_class = 5;
  std::uint64_t seed = 0;
  double noise = -1;
};

void run_phantom(const PhantomArgs& a) {
  fs::create_directories(a.out);
  std::size_t index = 0;
  for (std::size_t c = 0; c < kDiseaseClassCount; ++c) {
    phantom::PhantomPreset preset = phantom::preset_for(static_cast<DiseaseClass>(c));
    if (a.noise >= 0) preset.noise_sd = a.noise;
    for (std::size_t i = 0; i < a.per_class; ++i, ++index) {
      std::mt19937_64 rng(derive_seed(a.seed, index));
      char id[32];
      std::snprintf(id, sizeof(id), "phantom%03zu", index + 1);
      save_study(phantom::generate_study(preset, rng, id), fs::path(a.out) / id);
    }
  }
  write_run_config(fs::path(a.out) / "run_config.json", "phantom",
                   {{"out", a.out}, {"per_class", a.per_class}, {"seed", a.seed}, {"noise", a.noise}});
  std::cout << "wrote " << index << " studies to " << a.out << "\n";
}

// ---------------------------------------------------------------- training

struct TrainArgs {
  std::size_t iters = 150000;
  std::size_t cycle = 10000;
  double lr0 = 0.2;
  std::size_t batch = 4;
  std::uint64_t seed = 0;
  bool dice_factor2 = false;
  std::size_t patch = 151;
  std::size_t width = 32;
  double weight_decay = 5e-4;
  std::size_t snapshots_kept = 6;
  std::size_t log_interval = 1;
};

void add_train_options(CLI::App* cmd, TrainArgs& t) {
  cmd->add_option("--iters", t.iters, "Total SGD iterations")->capture_default_str();
  cmd->add_option("--cycle", t.cycle, "Learning-rate cycle length M")->capture_default_str();
  cmd->add_option("--lr0", t.lr0, "Learning rate at the start of each cycle")->capture_default_str();
  cmd->add_option("--batch", t.batch, "Minibatch size")->capture_default_str();
  cmd->add_option("--dice-factor2", t.dice_factor2, "Use 2*overlap in the soft Dice (true/false)")
      ->capture_default_str();
  cmd->add_option("--patch", t.patch, "Training patch size (output voxels)")->capture_default_str();
  cmd->add_option("--width", t.width, "Feature maps per hidden layer")->capture_default_str();
  cmd->add_option("--weight-decay", t.weight_decay)->capture_default_str();
  cmd->add_option("--snapshots-kept", t.snapshots_kept)->capture_default_str();
  cmd->add_option("--log-interval", t.log_interval)->capture_default_str();
}

json train_args_json(const TrainArgs& t) {
  return {{"iters", t.iters},   {"cycle", t.cycle},         {"lr0", t.lr0},
          {"batch", t.batch},   {"seed", t.seed},           {"dice_factor2", t.dice_factor2},
          {"patch", t.patch},   {"width", t.width},         {"weight_decay", t.weight_decay},
          {"snapshots_kept", t.snapshots_kept}, {"log_interval", t.log_interval}};
}

std::pair<SegNetConfig, TrainConfig> resolve_train(const TrainArgs& t) {
  SegNetConfig net;
  net.hidden_width = t.width;
  net.init_seed = derive_seed(t.seed, 0x5e9);
  TrainConfig tc;
  tc.total_iters = t.iters;
  tc.cycle_m = t.cycle;
  tc.alpha0 = t.lr0;
  tc.batch_size = t.batch;
  tc.patch = t.patch;
  tc.pad_to = t.patch + receptive_field(net) - 1;
  tc.weight_decay = t.weight_decay;
  tc.snapshots_kept = t.snapshots_kept;
  tc.rng_seed = t.seed;
  tc.dice_factor2 = t.dice_factor2;
  tc.log_interval = t.log_interval;
  net.input_extent = tc.pad_to;
  return {net, tc};
}

std::vector<CineStudy> load_preprocessed(const std::vector<fs::path>& dirs) {
  std::vector<CineStudy> studies;
  for (const auto& d : dirs) studies.push_back(preprocess_study(load_study(d)));
  return studies;
}

std::vector<Model> train_models(const std::vector<CineStudy>& studies, const TrainArgs& t, const fs::path& log) {
  auto [net, tc] = resolve_train(t);
  tc.log_path = log;
  validate(tc, net);
  return train(studies, net, tc);
}

std::string snapshot_name(const Model& m) {
  char name[48];
  std::snprintf(name, sizeof(name), "snapshot_%08llu.bin", static_cast<unsigned long long>(m.iteration));
  return name;
}

void run_train(const std::string& data, const std::string& out, const TrainArgs& t) {
  const auto dirs = require_studies(data);
  {
    // fail on bad flags before loading data
    auto [net, tc] = resolve_train(t);
    validate(tc, net);
  }
  const auto studies = load_preprocessed(dirs);
  fs::create_directories(out);
  json args = train_args_json(t);
  args["data"] = data;
  args["out"] = out;
  write_run_config(fs::path(out) / "run_config.json", "train", args);
  const auto snaps = train_models(studies, t, fs::path(out) / "train_log.csv");
  for (const Model& m : snaps) save_snapshot(m, fs::path(out) / snapshot_name(m));
  std::cout << "trained on " << studies.size() << " studies, wrote " << snaps.size() << " snapshots to " << out
            << "\n";
}

// ---------------------------------------------------------------- segmentation

std::vector<Model> load_snapshots(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InputError("model directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".bin" && e.path().filename().string().rfind("snapshot", 0) == 0)
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw InputError("no snapshot_*.bin files in " + dir.string());
  std::vector<Model> models;
  for (const auto& f : files) models.push_back(load_snapshot(f));
  return models;
}

// Stored as a study directory on the resampled grid with the predicted labels.
void save_segmentation(const CineStudy& pre, const Segmentation& seg, const fs::path& dir, bool dump_probs) {
  CineStudy out;
  out.patient_id = pre.patient_id;
  out.weight_kg = pre.weight_kg;
  out.height_cm = pre.height_cm;
  out.ed = pre.ed;
  out.es = pre.es;
  out.reference_labels = seg.labels;
  save_study(out, dir);
  if (dump_probs) {
    write_probability_raw(dir / "ed_probs.raw", seg.probs_ed.values());
    write_probability_raw(dir / "es_probs.raw", seg.probs_es.values());
  }
}

void run_segment(const std::string& model_dir, const std::string& data, const std::string& out, bool dump_probs) {
  const auto snaps = load_snapshots(model_dir);
  const auto dirs = require_studies(data);
  fs::create_directories(out);
  write_run_config(fs::path(out) / "run_config.json", "segment",
                   {{"model_dir", model_dir}, {"data", data}, {"out", out}, {"dump_probs", dump_probs},
                    {"snapshots", snaps.size()}});
  for (const auto& d : dirs) {
    const CineStudy pre = preprocess_study(load_study(d));
    const Segmentation seg = segment_study(snaps, pre);
    save_segmentation(pre, seg, fs::path(out) / d.filename(), dump_probs);
  }
  std::cout << "segmented " << dirs.size() << " studies with " << snaps.size() << " snapshots\n";
}

// ---------------------------------------------------------------- evaluation

std::map<std::string, fs::path> by_name(const std::vector<fs::path>& dirs) {
  std::map<std::string, fs::path> m;
  for (const auto& d : dirs) m[d.filename().string()] = d;
  return m;
}

void check_same_patients(const std::map<std::string, fs::path>& a, const std::map<std::string, fs::path>& b,
                         const std::string& what_a, const std::string& what_b) {
  std::string only_a;
  std::string only_b;
  for (const auto& [k, v] : a)
    if (!b.count(k)) only_a += " " + k;
  for (const auto& [k, v] : b)
    if (!a.count(k)) only_b += " " + k;
  if (!only_a.empty() || !only_b.empty())
    throw InputError("patient sets differ; only in " + what_a + ":" + (only_a.empty() ? " -" : only_a) + "; only in " +
                     what_b + ":" + (only_b.empty() ? " -" : only_b));
}

json quantification_json(const StructureQuantification& q) {
  return {{"lv_edv_ml", q.lv_edv},   {"lv_esv_ml", q.lv_esv},   {"rv_edv_ml", q.rv_edv},
          {"rv_esv_ml", q.rv_esv},   {"myo_edv_ml", q.myo_edv}, {"myo_esv_ml", q.myo_esv},
          {"myo_mass_ed_g", q.myo_mass_ed}, {"lv_ef_pct", q.lv_ef}, {"rv_ef_pct", q.rv_ef},
          {"ef_flagged", q.ef_flagged}};
}

// Quantification that tolerates an empty ventricle (EF then NaN).
StructureQuantification quantify_lenient(const LabelMap& ed, const LabelMap& es) {
  StructureQuantification q;
  try {
    q = quantify(ed, es);
  } catch (const NumericalError&) {
    q.lv_edv = volume_ml(ed, kLabelLV);
    q.lv_esv = volume_ml(es, kLabelLV);
    q.rv_edv = volume_ml(ed, kLabelRV);
    q.rv_esv = volume_ml(es, kLabelRV);
    q.myo_edv = volume_ml(ed, kLabelMyo);
    q.myo_esv = volume_ml(es, kLabelMyo);
    q.myo_mass_ed = q.myo_edv * kMyocardialDensity;
    q.myo_mass_es = q.myo_esv * kMyocardialDensity;
    q.lv_ef = q.lv_edv > 0 ? ejection_fraction(q.lv_edv, q.lv_esv) : std::nan("");
    q.rv_ef = q.rv_edv > 0 ? ejection_fraction(q.rv_edv, q.rv_esv) : std::nan("");
  }
  return q;
}

json mean_sd(const std::vector<double>& v) {
  std::vector<double> f;
  for (double x : v)
    if (std::isfinite(x)) f.push_back(x);
  json j;
  j["n"] = f.size();
  if (f.empty()) {
    j["mean"] = nullptr;
    j["sd"] = nullptr;
    return j;
  }
  double m = 0;
  for (double x : f) m += x;
  m /= static_cast<double>(f.size());
  double ss = 0;
  for (double x : f) ss += (x - m) * (x - m);
  j["mean"] = m;
  j["sd"] = f.size() > 1 ? json(std::sqrt(ss / static_cast<double>(f.size() - 1))) : json(nullptr);
  return j;
}

void run_evaluate(const std::string& pred, const std::string& ref, const std::string& out) {
  const auto pm = by_name(require_studies(pred));
  const auto rm = by_name(require_studies(ref));
  check_same_patients(pm, rm, pred, ref);

  json patients = json::array();
  std::map<std::string, std::vector<double>> dice;
  std::map<std::string, std::vector<double>> hd;
  struct Quantity {
    const char* name;
    double StructureQuantification::*field;
  };
  const Quantity quantities[] = {{"lv_edv", &StructureQuantification::lv_edv}, {"lv_esv", &StructureQuantification::lv_esv},
                                 {"rv_edv", &StructureQuantification::rv_edv}, {"rv_esv", &StructureQuantification::rv_esv},
                                 {"myo_edv", &StructureQuantification::myo_edv}, {"lv_ef", &StructureQuantification::lv_ef},
                                 {"rv_ef", &StructureQuantification::rv_ef}};
  std::map<std::string, std::vector<std::pair<double, double>>> pairs;
  fs::path csv_path = out;
  csv_path.replace_extension(".volumes.csv");
  if (csv_path.has_parent_path()) fs::create_directories(csv_path.parent_path());
  std::ofstream csv(csv_path);
  csv << "patient_id,quantity,reference,automatic\n";

  for (const auto& [name, pdir] : pm) {
    const CineStudy p = load_study(pdir);
    const CineStudy r = preprocess_study(load_study(rm.at(name)));
    if (!p.reference_labels) throw InputError("prediction " + pdir.string() + " has no label maps");
    if (!r.reference_labels) throw InputError("reference " + rm.at(name).string() + " has no label maps");
    const auto scores = score_segmentation(*p.reference_labels, *r.reference_labels);
    json pj;
    pj["patient_id"] = name;
    json sj = json::array();
    for (const auto& s : scores) {
      const std::string key = std::string(structure_name(s.label)) + "_" + std::string(phase_name(s.phase));
      dice[key].push_back(s.dice);
      hd[key].push_back(s.hausdorff_mm);
      sj.push_back({{"structure", structure_name(s.label)},
                    {"phase", phase_name(s.phase)},
                    {"dice", s.dice},
                    {"hausdorff_mm", number_or_null(s.hausdorff_mm)}});
    }
    pj["scores"] = sj;
    const auto qa = quantify_lenient(p.reference_labels->ed, p.reference_labels->es);
    const auto qr = quantify_lenient(r.reference_labels->ed, r.reference_labels->es);
    pj["automatic"] = quantification_json(qa);
    pj["reference"] = quantification_json(qr);
    for (const auto& q : quantities) {
      const double a = qa.*q.field;
      const double b = qr.*q.field;
      if (std::isfinite(a) && std::isfinite(b)) pairs[q.name].emplace_back(b, a);
      char line[160];
      std::snprintf(line, sizeof(line), "%s,%s,%.10g,%.10g\n", name.c_str(), q.name, b, a);
      csv << line;
    }
    patients.push_back(pj);
  }

  json summary;
  for (const auto& [key, v] : dice) summary[key] = {{"dice", mean_sd(v)}, {"hausdorff_mm", mean_sd(hd[key])}};
  json agreement;
  for (const auto& q : quantities) {
    const auto& v = pairs[q.name];
    json a;
    if (v.empty()) {
      agreement[q.name] = nullptr;
      continue;
    }
    const BlandAltman ba = bland_altman(v);
    a["n"] = ba.n;
    a["bias"] = ba.bias;
    a["sd"] = ba.sd;
    a["loa_low"] = ba.loa_low;
    a["loa_high"] = ba.loa_high;
    std::vector<double> x;
    std::vector<double> y;
    for (const auto& [r, p] : v) {
      x.push_back(r);
      y.push_back(p);
    }
    try {
      a["pearson_r"] = pearson(x, y);
    } catch (const NumericalError&) {
      a["pearson_r"] = nullptr;
    }
    agreement[q.name] = a;
  }
  json report;
  report["version"] = kToolVersion;
  report["patients"] = patients;
  report["summary"] = summary;
  report["agreement"] = agreement;
  write_json(out, report);
  write_run_config(config_next_to(out), "evaluate", {{"pred", pred}, {"ref", ref}, {"out", out}});
  for (const auto& [key, v] : dice) {
    const json s = mean_sd(v);
    std::printf("%-8s dice %.4f\n", key.c_str(), s["mean"].is_null() ? 0.0 : s["mean"].get<double>());
  }
}

// ---------------------------------------------------------------- features / diagnosis

std::vector<LabeledFeatures> features_from_dirs(const std::string& data, const std::string& labels) {
  const auto dm = by_name(require_studies(data));
  std::map<std::string, fs::path> lm;
  if (!labels.empty()) {
    lm = by_name(require_studies(labels));
    check_same_patients(dm, lm, data, labels);
  }
  std::vector<LabeledFeatures> rows;
  for (const auto& [name, dir] : dm) {
    const CineStudy study = load_study(dir);
    LabeledFeatures row;
    row.patient_id = study.patient_id;
    row.diagnosis = study.diagnosis;
    if (labels.empty()) {
      row.features = reference_features(preprocess_study(study));
    } else {
      const CineStudy seg = load_study(lm.at(name));
      if (!seg.reference_labels) throw InputError("segmentation " + lm.at(name).string() + " has no label maps");
      row.features = extract_features(study, seg.reference_labels->ed, seg.reference_labels->es);
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<std::size_t> top_features(const std::vector<double>& importance, std::size_t n) {
  std::vector<std::size_t> idx(importance.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return importance[a] > importance[b]; });
  idx.resize(std::min(n, idx.size()));
  return idx;
}

json importance_json(const std::vector<double>& importance) {
  json all;
  for (std::size_t i = 0; i < importance.size(); ++i) all[std::string(feature_names()[i])] = importance[i];
  json top = json::array();
  for (std::size_t i : top_features(importance, 3))
    top.push_back({{"feature", feature_names()[i]}, {"importance", importance[i]}});
  return {{"top3", top}, {"all", all}};
}

json report_json(const DiagnosisReport& r) {
  json post;
  for (std::size_t c = 0; c < r.posterior.size(); ++c)
    post[std::string(disease_name(static_cast<DiseaseClass>(c)))] = r.posterior[c];
  return {{"posterior", post},
          {"predicted_class", disease_name(static_cast<DiseaseClass>(r.predicted_class))},
          {"entropy_nats", r.entropy_nats},
          {"entropy_normalized", r.entropy_normalized}};
}

void run_features(const std::string& data, const std::string& labels, const std::string& out) {
  const auto rows = features_from_dirs(data, labels);
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  write_features_csv(out, rows);
  write_run_config(config_next_to(out), "features", {{"data", data}, {"labels", labels}, {"out", out}});
  std::cout << "wrote features for " << rows.size() << " patients\n";
}

void run_forest(const std::string& features, const std::string& out, std::size_t trees, std::uint64_t seed) {
  const auto rows = read_features_csv(features);
  std::vector<std::vector<double>> x;
  std::vector<std::size_t> y;
  for (const auto& r : rows) {
    if (!r.diagnosis) throw InputError("features row '" + r.patient_id + "' has no label");
    x.emplace_back(r.features.begin(), r.features.end());
    y.push_back(static_cast<std::size_t>(*r.diagnosis));
  }
  if (x.empty()) throw InputError("no training rows in " + features);
  ForestConfig cfg;
  cfg.n_trees = trees;
  cfg.seed = seed;
  const Forest forest = rf_train(x, y, cfg);
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  save_forest(forest, out);
  write_run_config(config_next_to(out), "forest",
                   {{"features", features}, {"out", out}, {"trees", trees}, {"seed", seed},
                    {"importance", importance_json(feature_importance(forest))}});
  std::cout << "trained " << trees << " trees on " << x.size() << " patients\n";
}

void run_diagnose(const std::string& features, const std::string& data, const std::string& labels,
                  const std::string& model, const std::string& out) {
  if (features.empty() == data.empty()) throw InputError("diagnose: give either --features or --data (with --labels)");
  const Forest forest = load_forest(model);
  const auto rows = features.empty() ? features_from_dirs(data, labels) : read_features_csv(features);
  json patients = json::array();
  for (const auto& r : rows) {
    json pj = report_json(rf_predict(forest, r.features));
    pj["patient_id"] = r.patient_id;
    if (r.diagnosis) pj["true_class"] = disease_name(*r.diagnosis);
    patients.push_back(pj);
  }
  json report;
  report["version"] = kToolVersion;
  report["class_order"] = {"NOR", "DCM", "HCM", "MINF", "RVA"};
  report["patients"] = patients;
  report["feature_importance"] = importance_json(feature_importance(forest));
  write_json(out, report);
  write_run_config(config_next_to(out), "diagnose",
                   {{"features", features}, {"data", data}, {"labels", labels}, {"model", model}, {"out", out}});
  std::cout << "diagnosed " << rows.size() << " patients\n";
}

// ---------------------------------------------------------------- cross-validation

struct CrossvalArgs {
  std::string data;
  std::string out;
  std::size_t k = 4;
  std::uint64_t seed = 0;
  std::string feature_source = "reference";
  std::string pred;
  std::size_t trees = 1000;
  TrainArgs train;
};

void run_crossval(const CrossvalArgs& a) {
  const auto dirs = require_studies(a.data);
  std::vector<CineStudy> studies;
  for (const auto& d : dirs) studies.push_back(load_study(d));
  std::vector<std::size_t> labels;
  for (const auto& s : studies) {
    if (!s.diagnosis) throw InputError("crossval: study '" + s.patient_id + "' has no diagnosis in meta.json");
    labels.push_back(static_cast<std::size_t>(*s.diagnosis));
  }
  const auto folds = stratified_kfold(labels, a.k, a.seed);

  std::vector<std::vector<double>> x(studies.size());
  if (a.feature_source == "reference") {
    for (std::size_t i = 0; i < studies.size(); ++i) {
      const auto f = reference_features(preprocess_study(studies[i]));
      x[i].assign(f.begin(), f.end());
    }
  } else if (!a.pred.empty()) {
    const auto pm = by_name(require_studies(a.pred));
    check_same_patients(by_name(dirs), pm, a.data, a.pred);
    for (std::size_t i = 0; i < studies.size(); ++i) {
      const CineStudy seg = load_study(pm.at(dirs[i].filename().string()));
      if (!seg.reference_labels) throw InputError("segmentation for '" + studies[i].patient_id + "' has no labels");
      const auto f = extract_features(studies[i], seg.reference_labels->ed, seg.reference_labels->es);
      x[i].assign(f.begin(), f.end());
    }
  } else {
    // one network per fold, trained only on the other folds
    for (std::size_t f = 0; f < folds.size(); ++f) {
      std::vector<bool> held(studies.size(), false);
      for (std::size_t i : folds[f]) held[i] = true;
      std::vector<CineStudy> train_set;
      for (std::size_t i = 0; i < studies.size(); ++i)
        if (!held[i] || folds.size() == 1) train_set.push_back(preprocess_study(studies[i]));
      TrainArgs t = a.train;
      t.seed = derive_seed(a.seed, 1000 + f);
      const auto snaps = train_models(train_set, t, {});
      for (std::size_t i : folds[f]) {
        const CineStudy pre = preprocess_study(studies[i]);
        const Segmentation seg = segment_study(snaps, pre);
        const auto fv = extract_features(pre, seg.labels.ed, seg.labels.es);
        x[i].assign(fv.begin(), fv.end());
      }
      std::cout << "fold " << f + 1 << "/" << folds.size() << " segmented\n";
    }
  }

  ForestConfig cfg;
  cfg.n_trees = a.trees;
  const CrossValResult cv = cross_validate(x, labels, a.k, a.seed, cfg);

  json patients = json::array();
  for (std::size_t i = 0; i < studies.size(); ++i) {
    json pj = report_json(cv.reports[i]);
    pj["patient_id"] = studies[i].patient_id;
    pj["fold"] = cv.fold_of[i];
    pj["true_class"] = disease_name(static_cast<DiseaseClass>(labels[i]));
    patients.push_back(pj);
  }
  json report;
  report["version"] = kToolVersion;
  report["feature_source"] = a.feature_source;
  report["k"] = a.k;
  report["accuracy"] = cv.confusion.accuracy;
  report["class_order"] = {"NOR", "DCM", "HCM", "MINF", "RVA"};
  report["confusion_matrix"] = cv.confusion.matrix;
  report["feature_importance"] = importance_json(cv.importance);
  report["patients"] = patients;
  write_json(a.out, report);

  std::vector<LabeledFeatures> rows;
  for (std::size_t i = 0; i < studies.size(); ++i) {
    LabeledFeatures r;
    r.patient_id = studies[i].patient_id;
    std::copy(x[i].begin(), x[i].end(), r.features.begin());
    r.diagnosis = studies[i].diagnosis;
    rows.push_back(r);
  }
  fs::path csv = a.out;
  csv.replace_extension(".features.csv");
  write_features_csv(csv, rows);

  json args = {{"data", a.data}, {"out", a.out}, {"k", a.k}, {"seed", a.seed}, {"feature_source", a.feature_source},
               {"pred", a.pred}, {"trees", a.trees}};
  if (a.feature_source == "automatic" && a.pred.empty()) args["train"] = train_args_json(a.train);
  write_run_config(config_next_to(a.out), "crossval", args);
  std::printf("accuracy %.4f over %zu patients\n", cv.confusion.accuracy, studies.size());
}

int thread_default() {
  if (const char* env = std::getenv("CMR_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cardiac cine MR segmentation, quantification and diagnosis"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  int threads = thread_default();
  app.add_option("--threads", threads, "Worker threads (0 = OpenMP default; env CMR_THREADS)");

  PhantomArgs ph;
  auto* cmd_ph = app.add_subcommand("phantom", "Generate a synthetic labelled cohort");
  cmd_ph->add_option("--out", ph.out)->required();
  cmd_ph->add_option("--per-class", ph.per_class)->capture_default_str();
  cmd_ph->add_option("--seed", ph.seed)->capture_default_str();
  cmd_ph->add_option("--noise", ph.noise, "Override the preset noise sd");

  std::string tr_data, tr_out;
  TrainArgs tr;
  auto* cmd_tr = app.add_subcommand("train", "Train the network and store the snapshot ensemble");
  cmd_tr->add_option("--data", tr_data)->required();
  cmd_tr->add_option("--out", tr_out)->required();
  cmd_tr->add_option("--seed", tr.seed)->capture_default_str();
  add_train_options(cmd_tr, tr);

  std::string sg_model, sg_data, sg_out;
  bool sg_probs = false;
  auto* cmd_sg = app.add_subcommand("segment", "Ensemble segmentation of studies");
  cmd_sg->add_option("--model-dir", sg_model)->required();
  cmd_sg->add_option("--data", sg_data)->required();
  cmd_sg->add_option("--out", sg_out)->required();
  cmd_sg->add_flag("--dump-probs", sg_probs, "Also write float32 [slices,4,rows,cols] probability rasters");

  std::string ev_pred, ev_ref, ev_out;
  auto* cmd_ev = app.add_subcommand("evaluate", "Dice, Hausdorff and volume agreement against references");
  cmd_ev->add_option("--pred", ev_pred)->required();
  cmd_ev->add_option("--ref", ev_ref)->required();
  cmd_ev->add_option("--out", ev_out)->required();

  std::string ft_data, ft_labels, ft_out;
  auto* cmd_ft = app.add_subcommand("features", "Write the 14-feature table");
  cmd_ft->add_option("--data", ft_data)->required();
  cmd_ft->add_option("--labels", ft_labels, "Segmentation directory (default: reference labels)");
  cmd_ft->add_option("--out", ft_out)->required();

  std::string fo_features, fo_out;
  std::size_t fo_trees = 1000;
  std::uint64_t fo_seed = 0;
  auto* cmd_fo = app.add_subcommand("forest", "Train a random forest on a features table");
  cmd_fo->add_option("--features", fo_features)->required();
  cmd_fo->add_option("--out", fo_out)->required();
  cmd_fo->add_option("--trees", fo_trees)->capture_default_str();
  cmd_fo->add_option("--seed", fo_seed)->capture_default_str();

  std::string dg_features, dg_data, dg_labels, dg_model, dg_out;
  auto* cmd_dg = app.add_subcommand("diagnose", "Classify patients with a trained forest");
  cmd_dg->add_option("--features", dg_features);
  cmd_dg->add_option("--data", dg_data);
  cmd_dg->add_option("--labels", dg_labels);
  cmd_dg->add_option("--model", dg_model)->required();
  cmd_dg->add_option("--out", dg_out)->required();

  CrossvalArgs cv;
  auto* cmd_cv = app.add_subcommand("crossval", "Stratified k-fold diagnosis experiment");
  cmd_cv->add_option("--data", cv.data)->required();
  cmd_cv->add_option("--out", cv.out)->required();
  cmd_cv->add_option("--k", cv.k)->capture_default_str();
  cmd_cv->add_option("--seed", cv.seed)->capture_default_str();
  cmd_cv->add_option("--feature-source", cv.feature_source)
      ->check(CLI::IsMember({"automatic", "reference"}))
      ->capture_default_str();
  cmd_cv->add_option("--pred", cv.pred, "Existing segmentations for automatic features");
  cmd_cv->add_option("--trees", cv.trees)->capture_default_str();
  add_train_options(cmd_cv, cv.train);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (threads > 0) omp_set_num_threads(threads);

  try {
    if (*cmd_ph) run_phantom(ph);
    if (*cmd_tr) run_train(tr_data, tr_out, tr);
    if (*cmd_sg) run_segment(sg_model, sg_data, sg_out, sg_probs);
    if (*cmd_ev) run_evaluate(ev_pred, ev_ref, ev_out);
    if (*cmd_ft) run_features(ft_data, ft_labels, ft_out);
    if (*cmd_fo) run_forest(fo_features, fo_out, fo_trees, fo_seed);
    if (*cmd_dg) run_diagnose(dg_features, dg_data, dg_labels, dg_model, dg_out);
    if (*cmd_cv) run_crossval(cv);
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
