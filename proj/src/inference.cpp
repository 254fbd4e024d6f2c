#include "cmr/inference.hpp"

#include <algorithm>
#include <numeric>
#include <utility>

#include "cmr/binary_io.hpp"
#include "cmr/kernels.hpp"

namespace cmr {

ProbabilityVolume average_probs(const std::vector<ProbabilityVolume>& maps) {
  if (maps.empty()) throw InputError("average_probs: no maps");
  const Shape4 s = maps.front().shape();
  std::vector<double> sum(s.count(), 0.0);
  for (const auto& m : maps) {
    if (m.shape() != s) throw InputError("average_probs: shape mismatch " + to_string(m.shape()) + " vs " + to_string(s));
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += m.data()[i];
  }
  ProbabilityVolume out(s);
  const double n = static_cast<double>(maps.size());
  for (std::size_t i = 0; i < sum.size(); ++i) out.data()[i] = static_cast<float>(sum[i] / n);
  return out;
}

Mask largest_cc_6(const Mask& mask) {
  const std::size_t nz = mask.slices();
  const std::size_t ny = mask.rows();
  const std::size_t nx = mask.cols();
  const std::size_t total = mask.size();
  std::vector<std::uint32_t> comp(total, 0);
  std::vector<std::size_t> queue;
  std::uint32_t best_id = 0;
  std::size_t best_size = 0;
  std::uint32_t next = 0;
  for (std::size_t seed = 0; seed < total; ++seed) {
    if (!mask.values()[seed] || comp[seed]) continue;
    const std::uint32_t id = ++next;
    comp[seed] = id;
    queue.assign(1, seed);
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const std::size_t v = queue[head];
      const std::size_t x = v % nx;
      const std::size_t y = (v / nx) % ny;
      const std::size_t z = v / (nx * ny);
      const auto visit = [&](std::size_t u) {
        if (mask.values()[u] && !comp[u]) {
          comp[u] = id;
          queue.push_back(u);
        }
      };
      if (x > 0) visit(v - 1);
      if (x + 1 < nx) visit(v + 1);
      if (y > 0) visit(v - nx);
      if (y + 1 < ny) visit(v + nx);
      if (z > 0) visit(v - nx * ny);
      if (z + 1 < nz) visit(v + nx * ny);
    }
    // strictly larger only: the earliest seed keeps ties
    if (queue.size() > best_size) {
      best_size = queue.size();
      best_id = id;
    }
  }
  Mask out(nz, ny, nx);
  for (std::size_t i = 0; i < total; ++i) out.values()[i] = best_id != 0 && comp[i] == best_id ? 1 : 0;
  return out;
}

LabelMap postprocess_largest_cc(const LabelMap& labels) {
  LabelMap out = labels;
  for (std::uint8_t label : {kLabelRV, kLabelMyo, kLabelLV}) {
    const Mask keep = largest_cc_6(class_mask(labels, label));
    auto& v = out.labels.values();
    for (std::size_t i = 0; i < v.size(); ++i)
      if (labels.labels.values()[i] == label && !keep.values()[i]) v[i] = kLabelBackground;
  }
  return out;
}

LabelMap argmax_labels(const ProbabilityVolume& probs, const Spacing& spacing) {
  const Shape4 s = probs.shape();
  if (s.channels != kClassesPerPhase) throw InputError("argmax_labels: expected 4 class channels");
  LabelMap out;
  out.spacing_mm = spacing;
  out.labels = Grid3<std::uint8_t>(s.batch, s.rows, s.cols);
  for (std::size_t z = 0; z < s.batch; ++z)
    for (std::size_t i = 0; i < s.plane(); ++i) {
      std::uint8_t best = 0;
      float best_p = probs.plane(z, 0)[i];
      for (std::uint8_t c = 1; c < kClassesPerPhase; ++c) {
        const float p = probs.plane(z, c)[i];
        if (p > best_p) {
          best_p = p;
          best = c;
        }
      }
      out.labels.values()[z * s.plane() + i] = best;
    }
  return out;
}

namespace {

// Runs one snapshot over every slice pair; returns ED and ES probabilities.
std::pair<ProbabilityVolume, ProbabilityVolume> predict_volume(const Model& model, const CineStudy& study) {
  const std::size_t rf = receptive_field(model.config);
  const std::size_t half = (rf - 1) / 2;
  const auto& ed = study.ed.data;
  const std::size_t rows = ed.rows();
  const std::size_t cols = ed.cols();
  ProbabilityVolume ped({ed.slices(), kClassesPerPhase, rows, cols});
  ProbabilityVolume pes({ed.slices(), kClassesPerPhase, rows, cols});
  for (std::size_t s = 0; s < ed.slices(); ++s) {
    Tensor pair({1, 2, rows, cols});
    std::copy(study.ed.data.slice_data(s), study.ed.data.slice_data(s) + rows * cols, pair.plane(0, 0));
    std::copy(study.es.data.slice_data(s), study.es.data.slice_data(s) + rows * cols, pair.plane(0, 1));
    const Tensor probs = forward(model, kernels::reflect_pad(pair, half));
    if (probs.shape() != Shape4{1, 2 * kClassesPerPhase, rows, cols})
      throw InputError("segment: network output " + to_string(probs.shape()) + " does not match the slice grid");
    for (std::size_t c = 0; c < kClassesPerPhase; ++c) {
      std::copy(probs.plane(0, c), probs.plane(0, c) + rows * cols, ped.plane(s, c));
      std::copy(probs.plane(0, c + kClassesPerPhase), probs.plane(0, c + kClassesPerPhase) + rows * cols,
                pes.plane(s, c));
    }
  }
  return {std::move(ped), std::move(pes)};
}

}  // namespace

Segmentation segment_study(const std::vector<Model>& snapshots, const CineStudy& study) {
  if (snapshots.empty()) throw InputError("segment: no snapshots");
  validate(study);
  const SegNetConfig& arch = snapshots.front().config;
  for (const Model& m : snapshots) {
    auto a = m.config;
    auto b = arch;
    a.init_seed = b.init_seed = 0;
    if (!(a == b)) throw InputError("segment: snapshots disagree on the network architecture");
    if (m.config.in_channels != 2 || m.config.out_channels != 2 * kClassesPerPhase)
      throw InputError("segment: snapshot is not a two-phase, eight-class network");
  }

  std::vector<std::pair<std::uint64_t, std::uint64_t>> keys;
  for (const Model& m : snapshots) keys.emplace_back(m.iteration, binary::fnv1a(serialize_snapshot(m)));
  std::vector<std::size_t> order(snapshots.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });

  std::vector<ProbabilityVolume> ed_maps;
  std::vector<ProbabilityVolume> es_maps;
  for (std::size_t i : order) {
    auto [ped, pes] = predict_volume(snapshots[i], study);
    ed_maps.push_back(std::move(ped));
    es_maps.push_back(std::move(pes));
  }
  Segmentation seg;
  seg.probs_ed = average_probs(ed_maps);
  seg.probs_es = average_probs(es_maps);
  seg.labels.ed = postprocess_largest_cc(argmax_labels(seg.probs_ed, study.ed.spacing_mm));
  seg.labels.es = postprocess_largest_cc(argmax_labels(seg.probs_es, study.es.spacing_mm));
  return seg;
}

}  // namespace cmr
