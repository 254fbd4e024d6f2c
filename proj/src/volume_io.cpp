#include "cmr/volume_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include "json.hpp"

#include "cmr/binary_io.hpp"

namespace cmr {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kMetaFile = "meta.json";

std::string raw_name(Phase p) { return p == Phase::kED ? "ed.raw" : "es.raw"; }
std::string label_name(Phase p) { return p == Phase::kED ? "ed_labels.raw" : "es_labels.raw"; }

void write_f32_raw(const fs::path& path, std::span<const float> values) {
  binary::Writer w;
  w.f32s(values);
  binary::write_file(path, w.bytes());
}

std::vector<float> read_f32_raw(const fs::path& path, std::size_t count) {
  if (!fs::exists(path)) throw InputError("missing raw file " + path.string());
  const auto bytes = binary::read_file(path);
  if (bytes.size() != count * sizeof(float))
    throw FormatError(path.string() + ": size mismatch (header implies " + std::to_string(count * sizeof(float)) +
                      " bytes, file has " + std::to_string(bytes.size()) + ")");
  std::vector<float> values(count);
  binary::Reader r(bytes, path.string());
  r.f32s(values);
  return values;
}

std::vector<std::uint8_t> read_u8_raw(const fs::path& path, std::size_t count) {
  if (!fs::exists(path)) throw InputError("missing label file " + path.string());
  auto bytes = binary::read_file(path);
  if (bytes.size() != count)
    throw FormatError(path.string() + ": size mismatch (header implies " + std::to_string(count) +
                      " bytes, file has " + std::to_string(bytes.size()) + ")");
  return bytes;
}

json phase_meta(const CineVolume& v, bool has_labels) {
  json j;
  j["shape"] = {v.data.slices(), v.data.rows(), v.data.cols()};
  j["spacing_mm"] = {v.spacing_mm.z, v.spacing_mm.y, v.spacing_mm.x};
  j["raw"] = raw_name(v.phase);
  if (has_labels) j["labels"] = label_name(v.phase);
  return j;
}

template <typename T>
T get_field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw FormatError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(where + ": field '" + key + "' has the wrong type (" + e.what() + ")");
  }
}

struct PhaseFiles {
  CineVolume volume;
  std::optional<LabelMap> labels;
};

PhaseFiles load_phase(const json& meta, const fs::path& dir, Phase phase) {
  const std::string where = (dir / kMetaFile).string() + " [" + std::string(phase_name(phase)) + "]";
  const char* key = phase == Phase::kED ? "ed" : "es";
  if (!meta.contains(key)) throw FormatError(where + ": missing phase block");
  const json& j = meta.at(key);
  const auto shape = get_field<std::vector<std::int64_t>>(j, "shape", where);
  const auto spacing = get_field<std::vector<double>>(j, "spacing_mm", where);
  if (shape.size() != 3) throw FormatError(where + ": shape must have 3 entries");
  if (spacing.size() != 3) throw FormatError(where + ": spacing_mm must have 3 entries");
  for (auto s : shape)
    if (s < 1) throw InputError(where + ": dimensions must be >= 1");
  for (double s : spacing)
    if (!(s > 0)) throw InputError(where + ": non-positive spacing");
  PhaseFiles out;
  out.volume.phase = phase;
  out.volume.spacing_mm = {spacing[0], spacing[1], spacing[2]};
  out.volume.data = Grid3<float>(static_cast<std::size_t>(shape[0]), static_cast<std::size_t>(shape[1]),
                                 static_cast<std::size_t>(shape[2]));
  out.volume.data.values() = read_f32_raw(dir / get_field<std::string>(j, "raw", where), out.volume.data.size());
  if (j.contains("labels")) {
    LabelMap m;
    m.spacing_mm = out.volume.spacing_mm;
    m.labels = Grid3<std::uint8_t>(out.volume.data.slices(), out.volume.data.rows(), out.volume.data.cols());
    m.labels.values() = read_u8_raw(dir / get_field<std::string>(j, "labels", where), m.labels.size());
    out.labels = std::move(m);
  }
  return out;
}

struct AxisSample {
  std::size_t lo = 0;
  std::size_t hi = 0;
  double frac = 0.0;
  std::size_t nearest = 0;
};

// Output sample j sits at physical centre (j + 0.5) * target; expressed in
// input index units with edge clamping.
std::vector<AxisSample> axis_samples(std::size_t in, double spacing, double target, std::size_t& out) {
  out = static_cast<std::size_t>(std::llround(static_cast<double>(in) * spacing / target));
  out = std::max<std::size_t>(out, 1);
  std::vector<AxisSample> samples(out);
  const double step = target / spacing;
  const double last = static_cast<double>(in - 1);
  for (std::size_t j = 0; j < out; ++j) {
    const double u = std::clamp((static_cast<double>(j) + 0.5) * step - 0.5, 0.0, last);
    AxisSample s;
    s.lo = static_cast<std::size_t>(std::floor(u));
    s.hi = std::min(s.lo + 1, in - 1);
    s.frac = u - static_cast<double>(s.lo);
    s.nearest = std::min(static_cast<std::size_t>(std::floor(u + 0.5)), in - 1);
    samples[j] = s;
  }
  return samples;
}

}  // namespace

void save_study(const CineStudy& study, const fs::path& dir) {
  validate(study);
  fs::create_directories(dir);
  json meta;
  meta["format_version"] = kStudyFormatVersion;
  meta["patient_id"] = study.patient_id;
  meta["weight_kg"] = study.weight_kg;
  meta["height_cm"] = study.height_cm;
  const bool labels = study.reference_labels.has_value();
  meta["ed"] = phase_meta(study.ed, labels);
  meta["es"] = phase_meta(study.es, labels);
  if (study.diagnosis) meta["diagnosis"] = std::string(disease_name(*study.diagnosis));
  if (study.analytic_volumes) {
    const auto& a = *study.analytic_volumes;
    meta["analytic_volumes_ml"] = {{"lv_edv", a.lv_edv},   {"lv_esv", a.lv_esv},   {"rv_edv", a.rv_edv},
                                   {"rv_esv", a.rv_esv},   {"myo_edv", a.myo_edv}, {"myo_esv", a.myo_esv}};
  }
  std::ofstream(dir / kMetaFile) << meta.dump(2) << "\n";
  write_f32_raw(dir / raw_name(Phase::kED), study.ed.data.values());
  write_f32_raw(dir / raw_name(Phase::kES), study.es.data.values());
  if (labels) {
    binary::write_file(dir / label_name(Phase::kED), study.reference_labels->ed.labels.values());
    binary::write_file(dir / label_name(Phase::kES), study.reference_labels->es.labels.values());
  }
}

CineStudy load_study(const fs::path& dir) {
  const fs::path meta_path = dir / kMetaFile;
  if (!fs::exists(meta_path)) throw InputError("missing " + meta_path.string());
  json meta;
  try {
    std::ifstream in(meta_path);
    meta = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(meta_path.string() + ": invalid JSON (" + e.what() + ")");
  }
  const std::string where = meta_path.string();
  const int version = get_field<int>(meta, "format_version", where);
  if (version != kStudyFormatVersion)
    throw FormatError(where + ": unsupported format_version " + std::to_string(version));

  CineStudy s;
  s.patient_id = get_field<std::string>(meta, "patient_id", where);
  s.weight_kg = get_field<double>(meta, "weight_kg", where);
  s.height_cm = get_field<double>(meta, "height_cm", where);
  auto ed = load_phase(meta, dir, Phase::kED);
  auto es = load_phase(meta, dir, Phase::kES);
  s.ed = std::move(ed.volume);
  s.es = std::move(es.volume);
  if (ed.labels.has_value() != es.labels.has_value())
    throw FormatError(where + ": labels must be given for both phases or neither");
  if (ed.labels) s.reference_labels = PhaseLabels{std::move(*ed.labels), std::move(*es.labels)};
  if (meta.contains("diagnosis")) s.diagnosis = parse_disease(get_field<std::string>(meta, "diagnosis", where));
  if (meta.contains("analytic_volumes_ml")) {
    const json& a = meta.at("analytic_volumes_ml");
    StructureVolumes v;
    v.lv_edv = get_field<double>(a, "lv_edv", where);
    v.lv_esv = get_field<double>(a, "lv_esv", where);
    v.rv_edv = get_field<double>(a, "rv_edv", where);
    v.rv_esv = get_field<double>(a, "rv_esv", where);
    v.myo_edv = get_field<double>(a, "myo_edv", where);
    v.myo_esv = get_field<double>(a, "myo_esv", where);
    s.analytic_volumes = v;
  }
  validate(s);
  return s;
}

std::vector<fs::path> list_study_dirs(const fs::path& root) {
  if (!fs::is_directory(root)) throw InputError("not a directory: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && fs::exists(entry.path() / kMetaFile)) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

CineVolume resample_inplane(const CineVolume& vol, double target_mm) {
  if (!(target_mm > 0)) throw InputError("resample: target spacing must be positive");
  std::size_t rows = 0;
  std::size_t cols = 0;
  const auto ys = axis_samples(vol.data.rows(), vol.spacing_mm.y, target_mm, rows);
  const auto xs = axis_samples(vol.data.cols(), vol.spacing_mm.x, target_mm, cols);
  CineVolume out;
  out.phase = vol.phase;
  out.spacing_mm = {vol.spacing_mm.z, target_mm, target_mm};
  out.data = Grid3<float>(vol.data.slices(), rows, cols);
  for (std::size_t z = 0; z < vol.data.slices(); ++z)
    for (std::size_t r = 0; r < rows; ++r) {
      const AxisSample& sy = ys[r];
      for (std::size_t c = 0; c < cols; ++c) {
        const AxisSample& sx = xs[c];
        const double a = vol.data.at(z, sy.lo, sx.lo);
        const double b = vol.data.at(z, sy.lo, sx.hi);
        const double d = vol.data.at(z, sy.hi, sx.lo);
        const double e = vol.data.at(z, sy.hi, sx.hi);
        const double top = a + sx.frac * (b - a);
        const double bottom = d + sx.frac * (e - d);
        out.data.at(z, r, c) = static_cast<float>(top + sy.frac * (bottom - top));
      }
    }
  return out;
}

LabelMap resample_labels_inplane(const LabelMap& labels, double target_mm) {
  if (!(target_mm > 0)) throw InputError("resample: target spacing must be positive");
  std::size_t rows = 0;
  std::size_t cols = 0;
  const auto ys = axis_samples(labels.labels.rows(), labels.spacing_mm.y, target_mm, rows);
  const auto xs = axis_samples(labels.labels.cols(), labels.spacing_mm.x, target_mm, cols);
  LabelMap out;
  out.spacing_mm = {labels.spacing_mm.z, target_mm, target_mm};
  out.labels = Grid3<std::uint8_t>(labels.labels.slices(), rows, cols);
  for (std::size_t z = 0; z < labels.labels.slices(); ++z)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out.labels.at(z, r, c) = labels.labels.at(z, ys[r].nearest, xs[c].nearest);
  return out;
}

double percentile(std::span<const float> values, double q) {
  if (values.empty()) throw InputError("percentile: empty input");
  if (!(q >= 0 && q <= 100)) throw InputError("percentile: q must lie in [0, 100]");
  std::vector<float> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double rank = q / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return sorted[lo] + frac * (static_cast<double>(sorted[hi]) - sorted[lo]);
}

CineVolume normalize_intensity(const CineVolume& vol) {
  CineVolume out = vol;
  const auto& values = vol.data.values();
  if (values.empty()) return out;
  const double p5 = percentile(values, 5.0);
  const double p95 = percentile(values, 95.0);
  auto& dst = out.data.values();
  if (!(p95 > p5)) {
    std::fill(dst.begin(), dst.end(), 0.0f);
    return out;
  }
  const double range = p95 - p5;
  for (std::size_t i = 0; i < values.size(); ++i)
    dst[i] = static_cast<float>(std::clamp((values[i] - p5) / range, 0.0, 1.0));
  return out;
}

CineStudy preprocess_study(const CineStudy& study, double target_mm) {
  CineStudy out = study;
  out.ed = normalize_intensity(resample_inplane(study.ed, target_mm));
  out.es = normalize_intensity(resample_inplane(study.es, target_mm));
  if (study.reference_labels)
    out.reference_labels = PhaseLabels{resample_labels_inplane(study.reference_labels->ed, target_mm),
                                       resample_labels_inplane(study.reference_labels->es, target_mm)};
  return out;
}

void write_probability_raw(const fs::path& path, std::span<const float> values) { write_f32_raw(path, values); }

}  // namespace cmr
