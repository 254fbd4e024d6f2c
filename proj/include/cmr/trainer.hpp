#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "cmr/segnet.hpp"
#include "cmr/volume.hpp"

namespace cmr {

struct TrainConfig {
  std::size_t total_iters = 150000;
  std::size_t cycle_m = 10000;
  double alpha0 = 0.2;
  std::size_t batch_size = 4;
  std::size_t patch = 151;
  /// Must equal patch + receptive_field - 1.
  std::size_t pad_to = 281;
  double weight_decay = 5e-4;
  std::size_t snapshots_kept = 6;
  std::uint64_t rng_seed = 0;
  /// Use 2 * overlap in the soft Dice numerator (off: the form with maximum 0.5).
  bool dice_factor2 = false;
  /// iter,lr,loss CSV; empty = no log.
  std::filesystem::path log_path;
  std::size_t log_interval = 1;
};

/// Throws InputError when the schedule or the patch geometry is inconsistent.
void validate(const TrainConfig& train, const SegNetConfig& net);

inline constexpr double kDiceEpsilon = 1e-7;

struct DiceOptions {
  bool factor2 = false;
  double epsilon = kDiceEpsilon;
};

/// sum(R * A) / (sum(R) + sum(A) + eps), times 2 with factor2.
template <class T>
double soft_dice(std::span<const T> probs, std::span<const T> reference, const DiceOptions& opt = {});

template <class T>
struct DiceLossResult {
  double loss = 0;
  std::array<double, 8> per_class{};
  BasicTensor<T> grad;  // dloss/dprobs
};

/// 1 - mean over the 8 output channels of the soft Dice, each channel pooled
/// over the whole batch. `refs` is the one-hot reference, same shape as probs.
template <class T>
DiceLossResult<T> dice_loss(const BasicTensor<T>& probs, const BasicTensor<T>& refs, const DiceOptions& opt = {});

/// (alpha0 / 2) * (cos(pi * ((t - 1) mod M) / M) + 1), t >= 1.
double cyclic_lr(std::size_t t, double alpha0, std::size_t cycle_m);

/// Slices of the training studies, zero-extended to at least patch x patch
/// and reflect-padded by (pad_to - patch) / 2 so windows can be cut directly.
class TrainingSet {
 public:
  TrainingSet(const std::vector<CineStudy>& studies, std::size_t patch, std::size_t pad_to);

  std::size_t size() const { return slices_.size(); }
  std::size_t patch() const { return patch_; }
  std::size_t pad_to() const { return pad_to_; }

  struct Slice {
    std::size_t rows = 0;  // extent of the (zero-extended) slice
    std::size_t cols = 0;
    std::vector<float> image;          // [2, rows + 2h, cols + 2h]
    std::vector<std::uint8_t> labels;  // [2, rows, cols]
  };
  const Slice& slice(std::size_t i) const { return slices_[i]; }

 private:
  std::size_t patch_;
  std::size_t pad_to_;
  std::vector<Slice> slices_;
};

struct Minibatch {
  Tensor input;      // [b, 2, pad_to, pad_to]
  Tensor reference;  // [b, 8, patch, patch], one-hot per phase group
};

/// Uniform (study, slice) pick, random window, random 90 degree rotation
/// applied to image and reference alike.
Minibatch sample_minibatch(const TrainingSet& data, std::size_t batch_size, std::mt19937_64& rng);

/// Rotates each [rows, cols] plane of a square tensor by k * 90 degrees
/// counter-clockwise.
Tensor rotate90(const Tensor& x, unsigned k);

struct TrainProgress {
  std::size_t iteration = 0;
  double lr = 0;
  double loss = 0;
};

/// SGD with the cyclic schedule; a snapshot is taken whenever t mod M == 0
/// and the last `snapshots_kept` are returned, oldest first. Studies must
/// be preprocessed and carry reference labels.
std::vector<Model> train(const std::vector<CineStudy>& studies, const SegNetConfig& net, const TrainConfig& config,
                         const std::function<void(const TrainProgress&)>& on_iteration = {});

}  // namespace cmr
