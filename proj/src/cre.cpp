#include "protoseg/cre.hpp"

#include <cmath>
#include <random>

#include "protoseg/encoder.hpp"
#include "protoseg/ops.hpp"

namespace protoseg {

template <typename T>
std::vector<NamedParam<T>> CreParamsT<T>::named_parameters() const {
  return {{"cre.phi_f", phi_f}, {"cre.phi_b", phi_b}, {"cre.fuse.kernels", fuse_kernels}, {"cre.fuse.bias", fuse_bias}};
}

template <typename T>
CreParamsT<T> init_cre(int z, int radius, std::uint64_t seed) {
  if (radius < 0) throw ShapeError("init_cre: radius must be >= 0");
  std::mt19937_64 rng(seed);
  const int fuse_in = z + correlation_channels(radius);
  CreParamsT<T> p;
  p.radius = radius;
  p.phi_f = Var<T>(he_uniform<T>({3, 3, z, z}, 9 * z, rng), true);
  p.phi_b = Var<T>(he_uniform<T>({3, 3, z, z}, 9 * z, rng), true);
  p.fuse_kernels = Var<T>(he_uniform<T>({1, 1, fuse_in, z}, fuse_in, rng), true);
  // Uniform in +-1 / sqrt(fan_in). A zero bias would make the fused feature
  // exactly zero wherever the masked stream is empty, and the cosine head's
  // gradient is of order 1 / eps at a zero vector.
  Tensor<T> bias({z});
  const double bound = 1.0 / std::sqrt(static_cast<double>(fuse_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& b : bias.values()) b = static_cast<T>(u(rng));
  p.fuse_bias = Var<T>(std::move(bias), true);
  return p;
}

template <typename T>
std::pair<Var<T>, Var<T>> split_features(const CreParamsT<T>& params, const Var<T>& features, const Var<T>& mask) {
  expect_rank(features.shape(), 3, "split_features features");
  expect_shape(mask.shape(), {features.dim(0), features.dim(1), 1}, "split_features mask");
  Var<T> fg = conv2d(mul_mask(features, mask), params.phi_f, std::optional<Var<T>>{}, 1, 1);
  Var<T> bg = conv2d(mul_mask(features, one_minus(mask)), params.phi_b, std::optional<Var<T>>{}, 1, 1);
  return {fg, bg};
}

template <typename T>
Var<T> correlate(const Var<T>& fg, const Var<T>& bg, int radius) {
  expect_rank(fg.shape(), 3, "correlate foreground");
  expect_shape(bg.shape(), fg.shape(), "correlate background");
  if (radius < 0) throw ShapeError("correlate: radius must be >= 0");
  const int h = fg.dim(0), w = fg.dim(1), z = fg.dim(2);
  const int span = 2 * radius + 1;
  const int channels = span * span;
  Tensor<T> out({h, w, channels});
  const T* f = fg.value().data();
  const T* b = bg.value().data();
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const T* fp = f + (static_cast<std::size_t>(r) * w + c) * z;
      T* op = out.data() + (static_cast<std::size_t>(r) * w + c) * channels;
      for (int i = -radius; i <= radius; ++i) {
        const int br = r - i;
        if (br < 0 || br >= h) continue;
        for (int j = -radius; j <= radius; ++j) {
          const int bc = c - j;
          if (bc < 0 || bc >= w) continue;
          const T* bp = b + (static_cast<std::size_t>(br) * w + bc) * z;
          T acc = 0;
          for (int k = 0; k < z; ++k) acc += fp[k] * bp[k];
          op[(i + radius) * span + (j + radius)] = acc;
        }
      }
    }
  }
  return Var<T>::make(std::move(out), {fg, bg}, [h, w, z, radius, span, channels](Node<T>& self) {
    const bool want_f = self.parents[0]->requires_grad;
    const bool want_b = self.parents[1]->requires_grad;
    const T* f = self.parents[0]->value.data();
    const T* b = self.parents[1]->value.data();
    Tensor<T> df(self.parents[0]->value.shape());
    Tensor<T> db(self.parents[1]->value.shape());
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const std::size_t fo = (static_cast<std::size_t>(r) * w + c) * z;
        const T* g = self.grad.data() + (static_cast<std::size_t>(r) * w + c) * channels;
        for (int i = -radius; i <= radius; ++i) {
          const int br = r - i;
          if (br < 0 || br >= h) continue;
          for (int j = -radius; j <= radius; ++j) {
            const int bc = c - j;
            if (bc < 0 || bc >= w) continue;
            const T gv = g[(i + radius) * span + (j + radius)];
            const std::size_t bo = (static_cast<std::size_t>(br) * w + bc) * z;
            if (want_f)
              for (int k = 0; k < z; ++k) df[fo + k] += gv * b[bo + k];
            if (want_b)
              for (int k = 0; k < z; ++k) db[bo + k] += gv * f[fo + k];
          }
        }
      }
    }
    if (want_f) self.parents[0]->accumulate(df);
    if (want_b) self.parents[1]->accumulate(db);
  });
}

template <typename T>
Var<T> fuse(const CreParamsT<T>& params, const Var<T>& fg, const Var<T>& corr) {
  expect_rank(fg.shape(), 3, "fuse foreground");
  if (fg.dim(2) != params.z()) throw ShapeError("fuse: foreground has wrong channel count");
  expect_shape(corr.shape(), {fg.dim(0), fg.dim(1), correlation_channels(params.radius)}, "fuse correlation");
  Var<T> joined = concat_channels(fg, corr);
  return leaky_relu(conv2d(joined, params.fuse_kernels, std::optional<Var<T>>(params.fuse_bias), 1, 0),
                    T(kLeakySlope));
}

template <typename T>
Var<T> cre_forward(const CreParamsT<T>& params, const Var<T>& features, const Var<T>& mask) {
  auto [fg, bg] = split_features(params, features, mask);
  Var<T> corr = correlate(fg, bg, params.radius);
  return fuse(params, fg, corr);
}

#define PROTOSEG_INSTANTIATE(T)                                                                             \
  template struct CreParamsT<T>;                                                                            \
  template CreParamsT<T> init_cre<T>(int, int, std::uint64_t);                                              \
  template std::pair<Var<T>, Var<T>> split_features<T>(const CreParamsT<T>&, const Var<T>&, const Var<T>&); \
  template Var<T> correlate<T>(const Var<T>&, const Var<T>&, int);                                          \
  template Var<T> fuse<T>(const CreParamsT<T>&, const Var<T>&, const Var<T>&);                              \
  template Var<T> cre_forward<T>(const CreParamsT<T>&, const Var<T>&, const Var<T>&);

PROTOSEG_INSTANTIATE(float)
PROTOSEG_INSTANTIATE(double)

}  // namespace protoseg
