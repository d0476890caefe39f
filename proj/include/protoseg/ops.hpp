#pragma once

#include <optional>

#include "protoseg/autograd.hpp"

namespace protoseg {

// Layer primitives over H x W x C maps. All are differentiable w.r.t. every
// Var argument.

// Cross-correlation with zero padding. kernels: k x k x Cin x Cout, k odd.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernels, const std::optional<Var<T>>& bias, int stride,
              int zero_pad);

// Align-corners-false bilinear resampling (half-pixel centers, edge clamp).
template <typename T>
Var<T> bilinear_resize(const Var<T>& input, int out_h, int out_w);

// Per-pixel softmax across the channel axis.
template <typename T>
Var<T> softmax_channels(const Var<T>& logits);

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope);

// Mean over non-overlapping factor x factor blocks.
template <typename T>
Var<T> avg_pool(const Var<T>& x, int factor);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& a, T factor);

// 1 - x, elementwise.
template <typename T>
Var<T> one_minus(const Var<T>& x);

// features (H x W x C) times mask (H x W x 1), broadcast over channels.
template <typename T>
Var<T> mul_mask(const Var<T>& features, const Var<T>& mask);

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

// Channel `c` of an H x W x C map as H x W x 1.
template <typename T>
Var<T> slice_channel(const Var<T>& x, int c);

// Same values under a new shape with equal element count.
template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

// Sum of all elements weighted elementwise by `weights` (same shape), as a
// 1-element tensor.
template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights);

template <typename T>
Var<T> sum(const Var<T>& x);

}  // namespace protoseg
