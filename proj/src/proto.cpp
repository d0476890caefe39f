#include "protoseg/proto.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "protoseg/ops.hpp"

namespace protoseg {

template <typename T>
Var<T> masked_average(const Var<T>& features, const Var<T>& mask) {
  expect_rank(features.shape(), 3, "masked_average features");
  expect_shape(mask.shape(), {features.dim(0), features.dim(1), 1}, "masked_average mask");
  const int z = features.dim(2);
  const std::size_t pixels = mask.value().size();
  const T* f = features.value().data();
  const T* m = mask.value().data();
  T weight = 0;
  for (std::size_t p = 0; p < pixels; ++p) weight += m[p];
  if (!(weight > T(kMaskEpsilon))) throw EmptyMaskError("masked_average: mask region is empty");
  Tensor<T> mean({z});
  for (std::size_t p = 0; p < pixels; ++p)
    for (int k = 0; k < z; ++k) mean[k] += f[p * z + k] * m[p];
  for (auto& v : mean.values()) v /= weight;
  auto mean_copy = std::make_shared<Tensor<T>>(mean);
  return Var<T>::make(std::move(mean), {features, mask}, [pixels, z, weight, mean_copy](Node<T>& self) {
    const T* f = self.parents[0]->value.data();
    const T* m = self.parents[1]->value.data();
    const T* g = self.grad.data();
    if (self.parents[0]->requires_grad) {
      Tensor<T> df(self.parents[0]->value.shape());
      for (std::size_t p = 0; p < pixels; ++p)
        for (int k = 0; k < z; ++k) df[p * z + k] = g[k] * m[p] / weight;
      self.parents[0]->accumulate(df);
    }
    if (self.parents[1]->requires_grad) {
      Tensor<T> dm(self.parents[1]->value.shape());
      for (std::size_t p = 0; p < pixels; ++p) {
        T acc = 0;
        for (int k = 0; k < z; ++k) acc += g[k] * (f[p * z + k] - (*mean_copy)[k]);
        dm[p] = acc / weight;
      }
      self.parents[1]->accumulate(dm);
    }
  });
}

template <typename T>
PrototypeSetT<T> compute_prototypes(const std::vector<Var<T>>& features, const std::vector<Var<T>>& masks, T alpha) {
  if (features.empty() || features.size() != masks.size()) {
    throw ShapeError("compute_prototypes: need K >= 1 feature maps with one mask each");
  }
  const T inv_k = T(1) / static_cast<T>(features.size());
  Var<T> fg, bg;
  for (std::size_t k = 0; k < features.size(); ++k) {
    Var<T> f = masked_average(features[k], masks[k]);
    Var<T> b = masked_average(features[k], one_minus(masks[k]));
    fg = fg.defined() ? add(fg, f) : f;
    bg = bg.defined() ? add(bg, b) : b;
  }
  if (features.size() > 1) {
    fg = scale(fg, inv_k);
    bg = scale(bg, inv_k);
  }
  return {bg, fg, alpha};
}

template <typename T>
Var<T> cosine_logits(const Var<T>& features, const PrototypeSetT<T>& prototypes) {
  expect_rank(features.shape(), 3, "cosine_logits features");
  const int z = features.dim(2);
  expect_shape(prototypes.background.shape(), {z}, "cosine_logits background prototype");
  expect_shape(prototypes.foreground.shape(), {z}, "cosine_logits foreground prototype");
  const std::size_t pixels = static_cast<std::size_t>(features.dim(0)) * features.dim(1);
  const T eps = T(kNormEpsilon);
  const T* protos[2] = {prototypes.background.value().data(), prototypes.foreground.value().data()};
  T pnorm[2];
  for (int c = 0; c < 2; ++c) {
    T s = 0;
    for (int k = 0; k < z; ++k) s += protos[c][k] * protos[c][k];
    pnorm[c] = std::sqrt(s);
    if (!(pnorm[c] > eps)) throw DegeneratePrototypeError("cosine_head: prototype norm below 1e-8");
  }
  const T alpha = prototypes.alpha;
  const T* f = features.value().data();
  Tensor<T> out({features.dim(0), features.dim(1), 2});
  Tensor<T> fnorm({features.dim(0), features.dim(1), 1});
  Tensor<T> cosine(out.shape());
  for (std::size_t p = 0; p < pixels; ++p) {
    const T* fp = f + p * z;
    T s = 0;
    for (int k = 0; k < z; ++k) s += fp[k] * fp[k];
    fnorm[p] = std::sqrt(s);
    const T nf = std::max(fnorm[p], eps);
    for (int c = 0; c < 2; ++c) {
      T dot = 0;
      for (int k = 0; k < z; ++k) dot += fp[k] * protos[c][k];
      cosine[p * 2 + c] = dot / (nf * pnorm[c]);
      out[p * 2 + c] = -alpha * (T(1) - cosine[p * 2 + c]);
    }
  }
  auto saved = std::make_shared<std::pair<Tensor<T>, Tensor<T>>>(std::move(fnorm), std::move(cosine));
  const std::array<T, 2> pn{pnorm[0], pnorm[1]};
  return Var<T>::make(std::move(out), {features, prototypes.background, prototypes.foreground},
                      [saved, pixels, z, alpha, eps, pn](Node<T>& self) {
                        const auto& [fnorm, cosine] = *saved;
                        const T* f = self.parents[0]->value.data();
                        const T* protos[2] = {self.parents[1]->value.data(), self.parents[2]->value.data()};
                        Tensor<T> df(self.parents[0]->value.shape());
                        Tensor<T> dp[2] = {Tensor<T>({z}), Tensor<T>({z})};
                        for (std::size_t p = 0; p < pixels; ++p) {
                          const T* fp = f + p * z;
                          const bool f_clamped = !(fnorm[p] > eps);
                          const T nf = f_clamped ? eps : fnorm[p];
                          for (int c = 0; c < 2; ++c) {
                            // d logit / d cos = alpha
                            const T g = self.grad[p * 2 + c] * alpha;
                            if (g == T(0)) continue;
                            const T cs = cosine[p * 2 + c];
                            const T inv = T(1) / (nf * pn[c]);
                            for (int k = 0; k < z; ++k) {
                              T dfk = protos[c][k] * inv;
                              if (!f_clamped) dfk -= cs * fp[k] / (nf * nf);
                              df[p * z + k] += g * dfk;
                              dp[c][k] += g * (fp[k] * inv - cs * protos[c][k] / (pn[c] * pn[c]));
                            }
                          }
                        }
                        if (self.parents[0]->requires_grad) self.parents[0]->accumulate(df);
                        if (self.parents[1]->requires_grad) self.parents[1]->accumulate(dp[0]);
                        if (self.parents[2]->requires_grad) self.parents[2]->accumulate(dp[1]);
                      });
}

template <typename T>
Var<T> cosine_head(const Var<T>& features, const PrototypeSetT<T>& prototypes) {
  return softmax_channels(cosine_logits(features, prototypes));
}

template <typename T>
Tensor<T> hard_mask(const Tensor<T>& soft) {
  expect_rank(soft.shape(), 3, "hard_mask input");
  if (soft.dim(2) != 2) throw ShapeError("hard_mask: expected [background, foreground] channels");
  const std::size_t pixels = soft.size() / 2;
  Tensor<T> out({soft.dim(0), soft.dim(1), 1});
  for (std::size_t p = 0; p < pixels; ++p) out[p] = soft[p * 2 + 1] >= T(0.5) ? T(1) : T(0);
  return out;
}

#define PROTOSEG_INSTANTIATE(T)                                                                              \
  template Var<T> masked_average<T>(const Var<T>&, const Var<T>&);                                           \
  template PrototypeSetT<T> compute_prototypes<T>(const std::vector<Var<T>>&, const std::vector<Var<T>>&, T); \
  template Var<T> cosine_logits<T>(const Var<T>&, const PrototypeSetT<T>&);                                  \
  template Var<T> cosine_head<T>(const Var<T>&, const PrototypeSetT<T>&);                                    \
  template Tensor<T> hard_mask<T>(const Tensor<T>&);

PROTOSEG_INSTANTIATE(float)
PROTOSEG_INSTANTIATE(double)

}  // namespace protoseg
