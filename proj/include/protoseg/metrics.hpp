#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "protoseg/model.hpp"

namespace protoseg {

// 2|m & g| / (|m| + |g|); 1.0 when both masks are empty.
double dsc(const Mask& prediction, const Mask& truth);

struct EvalReport {
  int class_id = 0;
  int repeats = 0;
  bool fixed_support = false;
  int t_infer = 0;
  std::uint64_t seed = 0;
  std::vector<double> repeat_means;           // model DSC per repeat
  std::vector<double> baseline_repeat_means;  // m0 (alignment only) DSC per repeat
  double mean = 0;
  double std = 0;  // population standard deviation across repeats
  double baseline_mean = 0;
  double baseline_std = 0;
  int collapsed_alignments = 0;

  void write_csv(const std::filesystem::path& path, const std::vector<std::string>& comments = {}) const;
};

// Anything that maps (supports, query image) to a binary mask plus the
// matching trace. The trained model is the usual predictor; tests plug in
// oracles.
using Predictor = std::function<Prediction(const std::vector<SupportItem>&, const Image&)>;

Predictor model_predictor(const RpNetModel& model, int t_infer);

struct EvalOptions {
  int holdout_class = 2;
  int repeats = 5;
  int shots = 1;
  std::optional<std::string> fixed_support_id;
  int t_infer = 10;
  std::uint64_t seed = 1;
  int threads = 0;  // 0: PROTOSEG_THREADS or hardware concurrency
};

// For every query sample of the holdout class, in every repeat, draws a
// support (or uses the fixed one), predicts, and scores DSC at full resolution.
EvalReport evaluate(const Predictor& predictor, const Dataset& dataset, const EvalOptions& options);
EvalReport evaluate(const RpNetModel& model, const Dataset& dataset, const EvalOptions& options);

// Mean DSC of the thresholded, upsampled m_soft,t for t = 1..t_max over one
// pass of random-support episodes.
std::vector<double> iteration_curve(const RpNetModel& model, const Dataset& dataset, int holdout_class, int t_max,
                                    std::uint64_t seed, int threads = 0);

void write_curve_csv(const std::vector<double>& curve, const std::filesystem::path& path,
                     const std::vector<std::string>& comments = {});

// Worker count from PROTOSEG_THREADS, else hardware concurrency (>= 1).
int default_threads();

}  // namespace protoseg
