#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "protoseg/model.hpp"

namespace protoseg {

struct TrainConfig {
  double lr = 1e-4;
  int epochs = 50;
  int lr_decay_every = 20;
  double lr_decay = 0.1;
  double beta = 1.0;
  int t_train = 4;
  int episodes_per_epoch = 200;
  std::uint64_t seed = 1;
  bool align_loss = true;
  int holdout_class = 2;
  // Repaint holdout-class pixels as background in the training images, so
  // the held-out class is never seen, not even as background.
  bool remove_holdout = true;
  int shots = 1;
  double eps_ce = 1e-7;
  double eps_dice = 1e-5;
};

void validate(const TrainConfig& config);

// lr * decay^(epoch / decay_every), epochs counted from 0.
double learning_rate_at(const TrainConfig& config, int epoch);

// [1 - m, m] for a binary H x W x 1 mask.
template <typename T>
Tensor<T> one_hot(const Tensor<T>& mask);

// 1 - 2 sum(m * y) / (sum(m) + sum(y) + eps), summed over both channels.
template <typename T>
Var<T> dice_loss(const Var<T>& soft, const Tensor<T>& target, double eps_dice = 1e-5);

// -(1 / N) sum(y * log(clamp(m, eps, 1 - eps))), N = element count.
template <typename T>
Var<T> ce_loss(const Var<T>& soft, const Tensor<T>& target, double eps_ce = 1e-7);

template <typename T>
struct SegLoss {
  Var<T> total;
  double dice = 0;
  double ce = 0;
};

template <typename T>
SegLoss<T> seg_loss(const Var<T>& soft, const Tensor<T>& target, double beta, double eps_dice = 1e-5,
                    double eps_ce = 1e-7);

// Role-reversed pass: the query with the (constant) thresholded prediction
// becomes the support, the original support becomes the query, and the result
// is scored against the true support mask. K = 1. Throws EmptyMaskError when
// the prediction leaves either class empty.
template <typename T>
SegLoss<T> alignment_loss(const RpNetModelT<T>& model, const Var<T>& support_features, const Tensor<T>& support_mask,
                          const Var<T>& query_features, const Tensor<T>& predicted_fullres, int iterations,
                          double beta, double eps_dice = 1e-5, double eps_ce = 1e-7);

// Convenience form on an aligned K = 1 episode; encodes both images.
SegLoss<float> alignment_loss(const RpNetModel& model, const Episode& aligned, const Tensor<float>& predicted_fullres,
                              const TrainConfig& config);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Tensor<float>> m;
  std::vector<Tensor<float>> v;
};

// One bias-corrected Adam update using each parameter's accumulated gradient.
void adam_step(const std::vector<NamedParam<float>>& params, AdamState& state, double lr);

struct EpochStats {
  int epoch = 0;
  double lr = 0;
  double l_seg = 0;
  double l_dice = 0;
  double l_ce = 0;
  double l_align = 0;
  double grad_norm = 0;
  double seconds = 0;
  int episodes = 0;
  int skipped = 0;        // degenerate episodes
  int align_skipped = 0;  // empty predicted mask, alignment term dropped
};

struct TrainLog {
  std::vector<EpochStats> epochs;
  std::map<int, int> class_counts;  // training episodes per class id

  void write_csv(const std::filesystem::path& path, const std::vector<std::string>& comments = {}) const;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Episodic training on every class except config.holdout_class.
TrainLog train(RpNetModel& model, const Dataset& dataset, const TrainConfig& config,
               const EpochCallback& on_epoch = {});

}  // namespace protoseg
