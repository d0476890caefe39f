#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "protoseg/cre.hpp"
#include "protoseg/data.hpp"
#include "protoseg/encoder.hpp"
#include "protoseg/proto.hpp"

namespace protoseg {

struct ModelConfig {
  int z = 32;
  int radius = 5;
  double alpha = kDefaultAlpha;
  int t_train = 4;
  int t_infer = 10;
  InitMode m0_mode = InitMode::kUnion;
  // Feed the thresholded mask (no gradient) between iterations instead of the
  // soft foreground probability.
  bool recurse_binary = false;
};

// Encoder + one CRE shared by every refinement iteration; the parameter set
// does not depend on the iteration count.
template <typename T>
struct RpNetModelT {
  ModelConfig config;
  EncoderParamsT<T> encoder;
  CreParamsT<T> cre;

  std::vector<NamedParam<T>> named_parameters() const;
  std::size_t parameter_count() const { return count_parameters(named_parameters()); }

  template <typename U>
  RpNetModelT<U> cast() const {
    return {config, encoder.template cast<U>(), cre.template cast<U>()};
  }
};

using RpNetModel = RpNetModelT<float>;

RpNetModel init_model(const ModelConfig& config, std::uint64_t seed);

// Differentiable refinement loop on precomputed features.
template <typename T>
struct ForwardGraph {
  PrototypeSetT<T> prototypes;
  std::vector<Var<T>> soft_masks;  // m_soft,1..T at feature resolution, [bg, fg]
  Var<T> final_fullres;            // upsampled foreground probability of the last iteration
};

// support_masks: soft feature-resolution masks; m0: binary feature-resolution
// initial query mask.
template <typename T>
ForwardGraph<T> refine(const RpNetModelT<T>& model, const std::vector<Var<T>>& support_features,
                       const std::vector<Var<T>>& support_masks, const Var<T>& query_features, const Tensor<T>& m0,
                       int iterations, int out_h, int out_w);

// Encodes and refines. Support masks are full-resolution binary maps already
// aligned to the query; m0 is derived from them per config.m0_mode.
template <typename T>
ForwardGraph<T> forward_graph(const RpNetModelT<T>& model, const std::vector<Var<T>>& support_images,
                              const std::vector<Tensor<T>>& support_masks, const Var<T>& query_image, int iterations);

struct RefinementTrace {
  std::vector<Tensor<float>> soft_masks;
  Tensor<float> final_fullres;  // H x W x 1 in [0, 1]
  Mask m0;                      // H x W x 1
  bool alignment_collapsed = false;
};

// Episode supports must already be aligned to the query.
RefinementTrace forward(const RpNetModel& model, const Episode& aligned, int iterations);

struct Prediction {
  Mask mask;  // H x W x 1 binary
  RefinementTrace trace;
};

// Aligns every support to the query, then runs config.t_infer iterations (or
// `iterations` when given).
Prediction predict(const RpNetModel& model, const std::vector<SupportItem>& support, const Image& query,
                   int iterations = 0);

// Aligns each support of `episode` onto its query.
Episode align_episode(const Episode& episode, bool* collapsed = nullptr);

}  // namespace protoseg
