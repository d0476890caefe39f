#include "protoseg/model.hpp"

#include "protoseg/ops.hpp"

namespace protoseg {

template <typename T>
std::vector<NamedParam<T>> RpNetModelT<T>::named_parameters() const {
  auto out = encoder.named_parameters();
  for (auto& p : cre.named_parameters()) out.push_back(std::move(p));
  return out;
}

RpNetModel init_model(const ModelConfig& config, std::uint64_t seed) {
  if (config.t_train < 1 || config.t_infer < 1) throw ShapeError("init_model: iteration counts must be >= 1");
  RpNetModel m;
  m.config = config;
  m.encoder = init_encoder<float>(config.z, seed);
  // Distinct stream for the CRE so changing its radius leaves the encoder init unchanged.
  m.cre = init_cre<float>(config.z, config.radius, seed ^ 0x5DEECE66DULL);
  return m;
}

template <typename T>
ForwardGraph<T> refine(const RpNetModelT<T>& model, const std::vector<Var<T>>& support_features,
                       const std::vector<Var<T>>& support_masks, const Var<T>& query_features, const Tensor<T>& m0,
                       int iterations, int out_h, int out_w) {
  if (iterations < 1) throw ShapeError("refine: need at least one iteration");
  if (support_features.empty() || support_features.size() != support_masks.size()) {
    throw ShapeError("refine: need K >= 1 support feature maps with one mask each");
  }
  ForwardGraph<T> g;
  std::vector<Var<T>> enhanced;
  enhanced.reserve(support_features.size());
  for (std::size_t k = 0; k < support_features.size(); ++k) {
    enhanced.push_back(cre_forward(model.cre, support_features[k], support_masks[k]));
  }
  g.prototypes = compute_prototypes(enhanced, support_masks, static_cast<T>(model.config.alpha));

  Var<T> current(m0, false);
  for (int t = 0; t < iterations; ++t) {
    Var<T> soft = cosine_head(cre_forward(model.cre, query_features, current), g.prototypes);
    g.soft_masks.push_back(soft);
    if (model.config.recurse_binary) {
      Tensor<T> fg({soft.dim(0), soft.dim(1), 1});
      for (std::size_t p = 0; p < fg.size(); ++p) fg[p] = soft.value()[p * 2 + 1] >= T(0.5) ? T(1) : T(0);
      current = Var<T>(std::move(fg), false);
    } else {
      current = slice_channel(soft, 1);
    }
  }
  g.final_fullres = bilinear_resize(slice_channel(g.soft_masks.back(), 1), out_h, out_w);
  return g;
}

namespace {

template <typename T>
Tensor<T> soft_downsample(const Tensor<T>& mask) {
  return downsample_mask(mask.template cast<float>(), kFeatureStride).template cast<T>();
}

}  // namespace

template <typename T>
ForwardGraph<T> forward_graph(const RpNetModelT<T>& model, const std::vector<Var<T>>& support_images,
                              const std::vector<Tensor<T>>& support_masks, const Var<T>& query_image,
                              int iterations) {
  if (support_images.empty() || support_images.size() != support_masks.size()) {
    throw ShapeError("forward: need K >= 1 support images with one mask each");
  }
  std::vector<Var<T>> features;
  std::vector<Var<T>> masks;
  std::vector<Mask> full_masks;
  for (std::size_t k = 0; k < support_images.size(); ++k) {
    expect_shape(support_images[k].shape(), query_image.shape(), "forward support image");
    expect_shape(support_masks[k].shape(), query_image.shape(), "forward support mask");
    features.push_back(encode(model.encoder, support_images[k]));
    masks.emplace_back(soft_downsample(support_masks[k]), false);
    full_masks.push_back(support_masks[k].template cast<float>());
  }
  const Mask m0 = binarize(downsample_mask(initial_mask(full_masks, model.config.m0_mode), kFeatureStride));
  Var<T> query_features = encode(model.encoder, query_image);
  return refine(model, features, masks, query_features, m0.template cast<T>(), iterations, query_image.dim(0),
                query_image.dim(1));
}

RefinementTrace forward(const RpNetModel& model, const Episode& aligned, int iterations) {
  NoGradGuard no_grad;
  std::vector<Var<float>> images;
  std::vector<Tensor<float>> masks;
  for (const auto& s : aligned.support) {
    images.emplace_back(s.image, false);
    masks.push_back(s.mask);
  }
  auto g = forward_graph(model, images, masks, Var<float>(aligned.query_image, false), iterations);
  RefinementTrace trace;
  for (const auto& s : g.soft_masks) trace.soft_masks.push_back(s.value());
  trace.final_fullres = g.final_fullres.value();
  trace.m0 = initial_mask(masks, model.config.m0_mode);
  return trace;
}

Episode align_episode(const Episode& episode, bool* collapsed) {
  Episode out = episode;
  bool any_collapse = false;
  for (auto& s : out.support) {
    AlignResult r = affine_align(s.image, s.mask, episode.query_image);
    s.image = std::move(r.image);
    s.mask = std::move(r.mask);
    any_collapse = any_collapse || r.collapsed;
  }
  if (collapsed) *collapsed = any_collapse;
  return out;
}

Prediction predict(const RpNetModel& model, const std::vector<SupportItem>& support, const Image& query,
                   int iterations) {
  Episode ep;
  ep.support = support;
  ep.query_image = query;
  bool collapsed = false;
  const Episode aligned = align_episode(ep, &collapsed);
  Prediction p;
  p.trace = forward(model, aligned, iterations > 0 ? iterations : model.config.t_infer);
  p.trace.alignment_collapsed = collapsed;
  p.mask = binarize(p.trace.final_fullres);
  return p;
}

#define PROTOSEG_INSTANTIATE(T)                                                                                  \
  template struct RpNetModelT<T>;                                                                                \
  template ForwardGraph<T> refine<T>(const RpNetModelT<T>&, const std::vector<Var<T>>&, const std::vector<Var<T>>&, \
                                     const Var<T>&, const Tensor<T>&, int, int, int);                            \
  template ForwardGraph<T> forward_graph<T>(const RpNetModelT<T>&, const std::vector<Var<T>>&,                    \
                                            const std::vector<Tensor<T>>&, const Var<T>&, int);

PROTOSEG_INSTANTIATE(float)
PROTOSEG_INSTANTIATE(double)

}  // namespace protoseg
