#pragma once

#include <vector>

#include "protoseg/autograd.hpp"

namespace protoseg {

inline constexpr double kMaskEpsilon = 1e-6;
inline constexpr double kNormEpsilon = 1e-8;
inline constexpr double kDefaultAlpha = 20.0;

// Background and foreground prototypes, in that order, plus the softmax scale.
template <typename T>
struct PrototypeSetT {
  Var<T> background;  // Z
  Var<T> foreground;  // Z
  T alpha = T(kDefaultAlpha);
};

using PrototypeSet = PrototypeSetT<float>;

// Masked mean of an H x W x Z map under an H x W x 1 weight map. Throws
// EmptyMaskError when the weights sum to <= 1e-6.
template <typename T>
Var<T> masked_average(const Var<T>& features, const Var<T>& mask);

// Prototypes averaged over K support maps; the background uses 1 - mask.
template <typename T>
PrototypeSetT<T> compute_prototypes(const std::vector<Var<T>>& features, const std::vector<Var<T>>& masks, T alpha);

// Logits -alpha * (1 - cos(f, p)) for p in [background, foreground].
template <typename T>
Var<T> cosine_logits(const Var<T>& features, const PrototypeSetT<T>& prototypes);

// Per-pixel [background, foreground] probabilities.
template <typename T>
Var<T> cosine_head(const Var<T>& features, const PrototypeSetT<T>& prototypes);

// fg >= 0.5 -> 1. Not differentiable.
template <typename T>
Tensor<T> hard_mask(const Tensor<T>& soft);

}  // namespace protoseg
