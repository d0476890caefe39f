#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "protoseg/parameters.hpp"

namespace protoseg {

template <typename T>
struct ConvBlock {
  Var<T> kernels;  // k x k x Cin x Cout
  Var<T> bias;     // Cout
};

// Shared feature extractor. Two 2x2 average-pool stages give features at a
// quarter of the image resolution; a 1x1 lateral conv adds the half-resolution
// features back in before output.
//
//   conv(1->16) conv(16->16) pool conv(16->32) conv(32->32) pool conv(32->Z) conv(Z->Z)
//                                               `-- resize -- lateral 1x1 (32->Z) --+
template <typename T>
struct EncoderParamsT {
  int z = 32;
  std::vector<ConvBlock<T>> blocks;  // six 3x3 blocks in the order above
  ConvBlock<T> lateral;

  std::vector<NamedParam<T>> named_parameters() const;

  template <typename U>
  EncoderParamsT<U> cast() const {
    EncoderParamsT<U> out;
    out.z = z;
    for (const auto& b : blocks) out.blocks.push_back({cast_leaf<U>(b.kernels), cast_leaf<U>(b.bias)});
    out.lateral = {cast_leaf<U>(lateral.kernels), cast_leaf<U>(lateral.bias)};
    return out;
  }
};

using EncoderParams = EncoderParamsT<float>;

inline constexpr float kLeakySlope = 0.1f;
inline constexpr int kFeatureStride = 4;

// He-uniform kernels, zero biases.
template <typename T>
EncoderParamsT<T> init_encoder(int z, std::uint64_t seed);

// image: H x W x 1 with H, W divisible by 4. Returns H/4 x W/4 x Z.
template <typename T>
Var<T> encode(const EncoderParamsT<T>& params, const Var<T>& image);

}  // namespace protoseg
