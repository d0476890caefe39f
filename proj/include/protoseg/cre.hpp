#pragma once

#include <cstdint>
#include <utility>

#include "protoseg/parameters.hpp"

namespace protoseg {

// Context relation encoder weights. phi_f / phi_b carry no bias so that an
// all-zero masked stream stays exactly zero.
template <typename T>
struct CreParamsT {
  int radius = 5;
  Var<T> phi_f;         // 3 x 3 x Z x Z
  Var<T> phi_b;         // 3 x 3 x Z x Z
  Var<T> fuse_kernels;  // 1 x 1 x (Z + (2d+1)^2) x Z
  Var<T> fuse_bias;     // Z

  int z() const { return phi_f.dim(3); }
  std::vector<NamedParam<T>> named_parameters() const;

  template <typename U>
  CreParamsT<U> cast() const {
    return {radius, cast_leaf<U>(phi_f), cast_leaf<U>(phi_b), cast_leaf<U>(fuse_kernels), cast_leaf<U>(fuse_bias)};
  }
};

using CreParams = CreParamsT<float>;

constexpr int correlation_channels(int radius) { return (2 * radius + 1) * (2 * radius + 1); }

template <typename T>
CreParamsT<T> init_cre(int z, int radius, std::uint64_t seed);

// (F_f, F_b) = (phi_f(F * m), phi_b(F * (1 - m))).
template <typename T>
std::pair<Var<T>, Var<T>> split_features(const CreParamsT<T>& params, const Var<T>& features, const Var<T>& mask);

// Bounded-displacement correlation. Output channel (i + d) * (2d + 1) + (j + d)
// at pixel (r, c) holds sum_z fg[r, c, z] * bg[r - i, c - j, z]; reads outside
// the map contribute zero.
template <typename T>
Var<T> correlate(const Var<T>& fg, const Var<T>& bg, int radius);

// leaky_relu(conv1x1([F_f || C]) + bias).
template <typename T>
Var<T> fuse(const CreParamsT<T>& params, const Var<T>& fg, const Var<T>& corr);

template <typename T>
Var<T> cre_forward(const CreParamsT<T>& params, const Var<T>& features, const Var<T>& mask);

}  // namespace protoseg
