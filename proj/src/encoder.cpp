#include "protoseg/encoder.hpp"

#include <random>
#include <string>

#include "protoseg/ops.hpp"

namespace protoseg {

namespace {

template <typename T>
ConvBlock<T> make_block(int k, int cin, int cout, std::mt19937_64& rng) {
  return {Var<T>(he_uniform<T>({k, k, cin, cout}, k * k * cin, rng), true), Var<T>(Tensor<T>({cout}), true)};
}

template <typename T>
Var<T> conv_act(const ConvBlock<T>& block, const Var<T>& x) {
  const int pad = block.kernels.dim(0) / 2;
  return leaky_relu(conv2d(x, block.kernels, std::optional<Var<T>>(block.bias), 1, pad), T(kLeakySlope));
}

}  // namespace

template <typename T>
std::vector<NamedParam<T>> EncoderParamsT<T>::named_parameters() const {
  std::vector<NamedParam<T>> out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    out.push_back({"encoder.conv" + std::to_string(i + 1) + ".kernels", blocks[i].kernels});
    out.push_back({"encoder.conv" + std::to_string(i + 1) + ".bias", blocks[i].bias});
  }
  out.push_back({"encoder.lateral.kernels", lateral.kernels});
  out.push_back({"encoder.lateral.bias", lateral.bias});
  return out;
}

template <typename T>
EncoderParamsT<T> init_encoder(int z, std::uint64_t seed) {
  if (z < 4) throw ShapeError("init_encoder: Z must be >= 4");
  std::mt19937_64 rng(seed);
  EncoderParamsT<T> p;
  p.z = z;
  const int plan[6][2] = {{1, 16}, {16, 16}, {16, 32}, {32, 32}, {32, z}, {z, z}};
  for (const auto& [cin, cout] : plan) p.blocks.push_back(make_block<T>(3, cin, cout, rng));
  p.lateral = make_block<T>(1, 32, z, rng);
  return p;
}

template <typename T>
Var<T> encode(const EncoderParamsT<T>& params, const Var<T>& image) {
  expect_rank(image.shape(), 3, "encode image");
  if (image.dim(2) != 1) throw ShapeError("encode: expected a single-channel image");
  const int h = image.dim(0), w = image.dim(1);
  if (h % kFeatureStride != 0 || w % kFeatureStride != 0) {
    throw DivisibilityError("encode: image " + shape_str(image.shape()) + " not divisible by 4");
  }
  Var<T> x = conv_act(params.blocks[0], image);
  x = conv_act(params.blocks[1], x);
  x = avg_pool(x, 2);
  x = conv_act(params.blocks[2], x);
  Var<T> mid = conv_act(params.blocks[3], x);
  x = avg_pool(mid, 2);
  x = conv_act(params.blocks[4], x);
  x = conv_act(params.blocks[5], x);
  Var<T> skip = bilinear_resize(mid, h / kFeatureStride, w / kFeatureStride);
  skip = conv2d(skip, params.lateral.kernels, std::optional<Var<T>>(params.lateral.bias), 1, 0);
  return add(x, skip);
}

template struct EncoderParamsT<float>;
template struct EncoderParamsT<double>;
template EncoderParamsT<float> init_encoder<float>(int, std::uint64_t);
template EncoderParamsT<double> init_encoder<double>(int, std::uint64_t);
template Var<float> encode<float>(const EncoderParamsT<float>&, const Var<float>&);
template Var<double> encode<double>(const EncoderParamsT<double>&, const Var<double>&);

}  // namespace protoseg
