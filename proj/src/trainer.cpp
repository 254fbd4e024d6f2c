#include "cmr/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <numbers>

#include "cmr/kernels.hpp"

namespace cmr {

void validate(const TrainConfig& train, const SegNetConfig& net) {
  if (train.total_iters == 0) throw InputError("train: total_iters must be >= 1");
  if (train.cycle_m == 0) throw InputError("train: cycle length must be >= 1");
  if (train.total_iters % train.cycle_m != 0)
    throw InputError("train: cycle length " + std::to_string(train.cycle_m) + " does not divide total_iters " +
                     std::to_string(train.total_iters));
  if (train.batch_size == 0) throw InputError("train: batch size must be >= 1");
  if (train.patch == 0) throw InputError("train: patch must be >= 1");
  if (!(train.alpha0 > 0) || !std::isfinite(train.alpha0)) throw InputError("train: alpha0 must be positive");
  if (!(train.weight_decay >= 0)) throw InputError("train: weight decay must be >= 0");
  if (train.log_interval == 0) throw InputError("train: log interval must be >= 1");
  const std::size_t rf = receptive_field(net);
  if (train.pad_to != train.patch + rf - 1)
    throw InputError("train: pad_to " + std::to_string(train.pad_to) + " != patch + receptive field - 1 = " +
                     std::to_string(train.patch + rf - 1));
}

template <class T>
double soft_dice(std::span<const T> probs, std::span<const T> reference, const DiceOptions& opt) {
  if (probs.size() != reference.size()) throw InputError("soft_dice: grids differ in size");
  double overlap = 0;
  double sum_r = 0;
  double sum_a = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    overlap += static_cast<double>(reference[i]) * static_cast<double>(probs[i]);
    sum_r += static_cast<double>(reference[i]);
    sum_a += static_cast<double>(probs[i]);
  }
  return (opt.factor2 ? 2.0 : 1.0) * overlap / (sum_r + sum_a + opt.epsilon);
}

template <class T>
DiceLossResult<T> dice_loss(const BasicTensor<T>& probs, const BasicTensor<T>& refs, const DiceOptions& opt) {
  if (probs.shape() != refs.shape()) throw InputError("dice_loss: probs and reference shapes differ");
  const Shape4 s = probs.shape();
  if (s.channels != 8) throw InputError("dice_loss: expected 8 channels, got " + to_string(s));
  const double f = opt.factor2 ? 2.0 : 1.0;
  const std::size_t plane = s.plane();

  DiceLossResult<T> out;
  out.grad = BasicTensor<T>(s);
  double mean = 0;
  for (std::size_t c = 0; c < 8; ++c) {
    double overlap = 0;
    double sum = 0;
    for (std::size_t n = 0; n < s.batch; ++n) {
      const T* a = probs.plane(n, c);
      const T* r = refs.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        overlap += static_cast<double>(r[i]) * static_cast<double>(a[i]);
        sum += static_cast<double>(r[i]) + static_cast<double>(a[i]);
      }
    }
    const double denom = sum + opt.epsilon;
    out.per_class[c] = f * overlap / denom;
    mean += out.per_class[c];
    const double scale = -f / (8.0 * denom * denom);
    for (std::size_t n = 0; n < s.batch; ++n) {
      const T* r = refs.plane(n, c);
      T* g = out.grad.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i)
        g[i] = static_cast<T>(scale * (static_cast<double>(r[i]) * denom - overlap));
    }
  }
  out.loss = 1.0 - mean / 8.0;
  return out;
}

template double soft_dice<float>(std::span<const float>, std::span<const float>, const DiceOptions&);
template double soft_dice<double>(std::span<const double>, std::span<const double>, const DiceOptions&);
template DiceLossResult<float> dice_loss<float>(const BasicTensor<float>&, const BasicTensor<float>&,
                                                const DiceOptions&);
template DiceLossResult<double> dice_loss<double>(const BasicTensor<double>&, const BasicTensor<double>&,
                                                  const DiceOptions&);

double cyclic_lr(std::size_t t, double alpha0, std::size_t cycle_m) {
  if (t == 0) throw InputError("cyclic_lr: iterations start at 1");
  if (cycle_m == 0) throw InputError("cyclic_lr: cycle length must be >= 1");
  const double phase = static_cast<double>((t - 1) % cycle_m) / static_cast<double>(cycle_m);
  return 0.5 * alpha0 * (std::cos(std::numbers::pi * phase) + 1.0);
}

TrainingSet::TrainingSet(const std::vector<CineStudy>& studies, std::size_t patch, std::size_t pad_to)
    : patch_(patch), pad_to_(pad_to) {
  if (studies.empty()) throw InputError("training set: no studies");
  if (patch == 0 || pad_to < patch || (pad_to - patch) % 2 != 0)
    throw InputError("training set: pad_to - patch must be even and non-negative");
  const std::size_t h = (pad_to - patch) / 2;
  for (const CineStudy& study : studies) {
    validate(study);
    if (!study.reference_labels)
      throw InputError("training set: study '" + study.patient_id + "' has no reference labels");
    const auto& ed = study.ed.data;
    const std::size_t rows = std::max(ed.rows(), patch);
    const std::size_t cols = std::max(ed.cols(), patch);
    const std::size_t off_y = (rows - ed.rows()) / 2;
    const std::size_t off_x = (cols - ed.cols()) / 2;
    const std::size_t prow = rows + 2 * h;
    const std::size_t pcol = cols + 2 * h;
    for (std::size_t s = 0; s < ed.slices(); ++s) {
      Slice sl;
      sl.rows = rows;
      sl.cols = cols;
      sl.image.assign(2 * prow * pcol, 0.0f);
      sl.labels.assign(2 * rows * cols, kLabelBackground);
      for (std::size_t ch = 0; ch < 2; ++ch) {
        const Grid3<float>& vol = ch == 0 ? study.ed.data : study.es.data;
        const Grid3<std::uint8_t>& lab = ch == 0 ? study.reference_labels->ed.labels : study.reference_labels->es.labels;
        for (std::size_t y = 0; y < vol.rows(); ++y)
          for (std::size_t x = 0; x < vol.cols(); ++x)
            sl.labels[(ch * rows + y + off_y) * cols + x + off_x] = lab.at(s, y, x);
        for (std::size_t py = 0; py < prow; ++py) {
          const auto ey = static_cast<std::size_t>(
              kernels::reflect_index(static_cast<std::ptrdiff_t>(py) - static_cast<std::ptrdiff_t>(h),
                                     static_cast<std::ptrdiff_t>(rows)));
          if (ey < off_y || ey >= off_y + vol.rows()) continue;
          for (std::size_t px = 0; px < pcol; ++px) {
            const auto ex = static_cast<std::size_t>(
                kernels::reflect_index(static_cast<std::ptrdiff_t>(px) - static_cast<std::ptrdiff_t>(h),
                                       static_cast<std::ptrdiff_t>(cols)));
            if (ex < off_x || ex >= off_x + vol.cols()) continue;
            sl.image[(ch * prow + py) * pcol + px] = vol.at(s, ey - off_y, ex - off_x);
          }
        }
      }
      slices_.push_back(std::move(sl));
    }
  }
}

Tensor rotate90(const Tensor& x, unsigned k) {
  const Shape4 s = x.shape();
  if (s.rows != s.cols) throw InputError("rotate90: planes must be square");
  k %= 4;
  if (k == 0) return x;
  const std::size_t n = s.rows;
  Tensor out(s);
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t c = 0; c < s.channels; ++c) {
      const float* src = x.plane(b, c);
      float* dst = out.plane(b, c);
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t xx = 0; xx < n; ++xx) {
          std::size_t sy = y;
          std::size_t sx = xx;
          // counter-clockwise: out(y, x) = in(x, n - 1 - y)
          for (unsigned r = 0; r < k; ++r) {
            const std::size_t ty = sx;
            sx = n - 1 - sy;
            sy = ty;
          }
          dst[y * n + xx] = src[sy * n + sx];
        }
    }
  return out;
}

Minibatch sample_minibatch(const TrainingSet& data, std::size_t batch_size, std::mt19937_64& rng) {
  if (data.size() == 0) throw InputError("sample_minibatch: empty dataset");
  const std::size_t patch = data.patch();
  const std::size_t pad_to = data.pad_to();
  const std::size_t h = (pad_to - patch) / 2;
  Minibatch mb;
  mb.input = Tensor({batch_size, 2, pad_to, pad_to});
  mb.reference = Tensor({batch_size, 8, patch, patch});
  std::vector<unsigned> turns(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const std::size_t idx = std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng);
    const TrainingSet::Slice& sl = data.slice(idx);
    const std::size_t y0 = std::uniform_int_distribution<std::size_t>(0, sl.rows - patch)(rng);
    const std::size_t x0 = std::uniform_int_distribution<std::size_t>(0, sl.cols - patch)(rng);
    turns[b] = static_cast<unsigned>(std::uniform_int_distribution<int>(0, 3)(rng));
    const std::size_t pcol = sl.cols + 2 * h;
    const std::size_t prow = sl.rows + 2 * h;
    for (std::size_t ch = 0; ch < 2; ++ch) {
      float* dst = mb.input.plane(b, ch);
      for (std::size_t y = 0; y < pad_to; ++y) {
        const float* src = sl.image.data() + (ch * prow + y0 + y) * pcol + x0;
        std::copy(src, src + pad_to, dst + y * pad_to);
      }
      for (std::size_t y = 0; y < patch; ++y)
        for (std::size_t x = 0; x < patch; ++x) {
          const std::uint8_t label = sl.labels[(ch * sl.rows + y0 + y) * sl.cols + x0 + x];
          mb.reference.at(b, ch * kClassesPerPhase + label, y, x) = 1.0f;
        }
    }
  }
  // rotate sample by sample so every sample gets its own k
  for (std::size_t b = 0; b < batch_size; ++b) {
    if (turns[b] == 0) continue;
    for (Tensor* t : {&mb.input, &mb.reference}) {
      const Shape4 s = t->shape();
      Tensor one({1, s.channels, s.rows, s.cols});
      std::copy(t->plane(b, 0), t->plane(b, 0) + s.channels * s.plane(), one.data());
      const Tensor r = rotate90(one, turns[b]);
      std::copy(r.data(), r.data() + s.channels * s.plane(), t->plane(b, 0));
    }
  }
  return mb;
}

std::vector<Model> train(const std::vector<CineStudy>& studies, const SegNetConfig& net, const TrainConfig& config,
                         const std::function<void(const TrainProgress&)>& on_iteration) {
  validate(config, net);
  const TrainingSet data(studies, config.patch, config.pad_to);
  Model model = build(net);
  std::mt19937_64 rng(config.rng_seed);
  const DiceOptions dice{config.dice_factor2, kDiceEpsilon};

  std::ofstream log;
  if (!config.log_path.empty()) {
    log.open(config.log_path);
    if (!log) throw InputError("train: cannot open log file " + config.log_path.string());
    log << "iter,lr,loss\n";
  }

  std::deque<Model> kept;
  for (std::size_t t = 1; t <= config.total_iters; ++t) {
    const double lr = cyclic_lr(t, config.alpha0, config.cycle_m);
    const Minibatch mb = sample_minibatch(data, config.batch_size, rng);
    ForwardTrace trace;
    const Tensor probs = forward(model, mb.input, BatchNormMode::kTrain, &trace);
    const DiceLossResult<float> loss = dice_loss(probs, mb.reference, dice);
    if (!std::isfinite(loss.loss)) throw NumericalError("train: loss is not finite at iteration " + std::to_string(t));
    const ModelGradients grads = backward(model, trace, loss.grad);
    apply_sgd(model, grads, lr, config.weight_decay);
    model.iteration = t;

    if (log && (t % config.log_interval == 0 || t == config.total_iters)) {
      char line[96];
      std::snprintf(line, sizeof(line), "%zu,%.9g,%.9g\n", t, lr, loss.loss);
      log << line;
    }
    if (on_iteration) on_iteration({t, lr, loss.loss});
    if (t % config.cycle_m == 0 && config.snapshots_kept > 0) {
      kept.push_back(model);
      if (kept.size() > config.snapshots_kept) kept.pop_front();
    }
  }
  if (log) {
    log.flush();
    if (!log) throw InputError("train: failed writing log file " + config.log_path.string());
  }
  return {kept.begin(), kept.end()};
}

}  // namespace cmr
