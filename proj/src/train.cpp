#include "protoseg/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <random>

#include "protoseg/ops.hpp"

namespace protoseg {

void validate(const TrainConfig& c) {
  if (!(c.lr > 0)) throw ShapeError("train config: lr must be > 0");
  if (!(c.beta >= 0)) throw ShapeError("train config: beta must be >= 0");
  if (c.epochs < 1) throw ShapeError("train config: epochs must be >= 1");
  if (c.t_train < 1) throw ShapeError("train config: t_train must be >= 1");
  if (c.episodes_per_epoch < 1) throw ShapeError("train config: episodes_per_epoch must be >= 1");
  if (c.lr_decay_every < 1) throw ShapeError("train config: lr_decay_every must be >= 1");
  if (c.shots < 1) throw ShapeError("train config: shots must be >= 1");
}

double learning_rate_at(const TrainConfig& config, int epoch) {
  return config.lr * std::pow(config.lr_decay, epoch / config.lr_decay_every);
}

template <typename T>
Tensor<T> one_hot(const Tensor<T>& mask) {
  expect_rank(mask.shape(), 3, "one_hot");
  Tensor<T> out({mask.dim(0), mask.dim(1), 2});
  for (std::size_t p = 0; p < mask.size(); ++p) {
    out[p * 2] = T(1) - mask[p];
    out[p * 2 + 1] = mask[p];
  }
  return out;
}

template <typename T>
Var<T> dice_loss(const Var<T>& soft, const Tensor<T>& target, double eps_dice) {
  expect_shape(target.shape(), soft.shape(), "dice_loss target");
  double inter = 0, total = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    inter += static_cast<double>(soft.value()[i]) * target[i];
    total += static_cast<double>(soft.value()[i]) + target[i];
  }
  const double denom = total + eps_dice;
  const T loss = static_cast<T>(1.0 - 2.0 * inter / denom);
  return Var<T>::make(Tensor<T>({1}, {loss}), {soft}, [target, inter, denom](Node<T>& self) {
    const double g = self.grad[0];
    Tensor<T> dx(target.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) {
      dx[i] = static_cast<T>(g * -2.0 * (target[i] * denom - inter) / (denom * denom));
    }
    self.parents[0]->accumulate(dx);
  });
}

template <typename T>
Var<T> ce_loss(const Var<T>& soft, const Tensor<T>& target, double eps_ce) {
  expect_shape(target.shape(), soft.shape(), "ce_loss target");
  const double n = static_cast<double>(target.size());
  double acc = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] == T(0)) continue;
    const double m = std::clamp(static_cast<double>(soft.value()[i]), eps_ce, 1.0 - eps_ce);
    acc += target[i] * std::log(m);
  }
  const T loss = static_cast<T>(-acc / n);
  return Var<T>::make(Tensor<T>({1}, {loss}), {soft}, [target, n, eps_ce](Node<T>& self) {
    const double g = self.grad[0];
    const auto& m = self.parents[0]->value;
    Tensor<T> dx(target.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const double v = m[i];
      if (target[i] == T(0) || v <= eps_ce || v >= 1.0 - eps_ce) continue;
      dx[i] = static_cast<T>(-g * target[i] / (n * v));
    }
    self.parents[0]->accumulate(dx);
  });
}

template <typename T>
SegLoss<T> seg_loss(const Var<T>& soft, const Tensor<T>& target, double beta, double eps_dice, double eps_ce) {
  Var<T> d = dice_loss(soft, target, eps_dice);
  Var<T> c = ce_loss(soft, target, eps_ce);
  SegLoss<T> out;
  out.dice = d.value()[0];
  out.ce = c.value()[0];
  out.total = beta == 0.0 ? c : add(scale(d, static_cast<T>(beta)), c);
  return out;
}

namespace {

template <typename T>
Tensor<T> feature_target(const Tensor<T>& fullres_mask) {
  const Mask down = binarize(downsample_mask(fullres_mask.template cast<float>(), kFeatureStride));
  return one_hot(down.template cast<T>());
}

}  // namespace

template <typename T>
SegLoss<T> alignment_loss(const RpNetModelT<T>& model, const Var<T>& support_features, const Tensor<T>& support_mask,
                          const Var<T>& query_features, const Tensor<T>& predicted_fullres, int iterations,
                          double beta, double eps_dice, double eps_ce) {
  const Mask pred = binarize(predicted_fullres.template cast<float>());
  const Tensor<T> pred_down = downsample_mask(pred, kFeatureStride).template cast<T>();
  const Tensor<T> m0 = binarize(downsample_mask(pred, kFeatureStride)).template cast<T>();
  ForwardGraph<T> g = refine(model, {query_features}, {Var<T>(pred_down, false)}, support_features, m0, iterations,
                             support_mask.dim(0), support_mask.dim(1));
  return seg_loss(g.soft_masks.back(), feature_target(support_mask), beta, eps_dice, eps_ce);
}

SegLoss<float> alignment_loss(const RpNetModel& model, const Episode& aligned, const Tensor<float>& predicted_fullres,
                              const TrainConfig& config) {
  if (aligned.support.size() != 1) throw ShapeError("alignment_loss: K must be 1");
  Var<float> fs = encode(model.encoder, Var<float>(aligned.support[0].image, false));
  Var<float> fq = encode(model.encoder, Var<float>(aligned.query_image, false));
  return alignment_loss(model, fs, aligned.support[0].mask, fq, predicted_fullres, config.t_train, config.beta,
                        config.eps_dice, config.eps_ce);
}

void adam_step(const std::vector<NamedParam<float>>& params, AdamState& state, double lr) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.var.shape());
      state.v.emplace_back(p.var.shape());
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Var<float> var = params[i].var;
    if (!var.has_grad()) continue;
    const Tensor<float> g = var.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    auto& w = var.mutable_value();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k];
      m[k] = static_cast<float>(state.beta1 * m[k] + (1.0 - state.beta1) * gk);
      v[k] = static_cast<float>(state.beta2 * v[k] + (1.0 - state.beta2) * gk * gk);
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      w[k] = static_cast<float>(w[k] - lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

void TrainLog::write_csv(const std::filesystem::path& path, const std::vector<std::string>& comments) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& c : comments) out << "# " << c << "\n";
  out << "epoch,l_seg,l_dice,l_ce,l_align,grad_norm,seconds\n";
  out.precision(9);
  for (const auto& e : epochs) {
    out << e.epoch << ',' << e.l_seg << ',' << e.l_dice << ',' << e.l_ce << ',' << e.l_align << ',' << e.grad_norm
        << ',' << e.seconds << "\n";
  }
}

TrainLog train(RpNetModel& model, const Dataset& full, const TrainConfig& config, const EpochCallback& on_epoch) {
  validate(config);
  const Dataset dataset = config.remove_holdout ? remove_class(full, config.holdout_class, config.seed) : full;
  const std::vector<int> classes = training_classes(dataset.num_classes, config.holdout_class);
  if (classes.empty()) throw InsufficientDataError("train: no training classes left after holdout");
  for (int c : classes) {
    if (dataset.indices_with_class(c).size() < static_cast<std::size_t>(config.shots) + 1) {
      throw InsufficientDataError("train: class " + std::to_string(c) + " has too few samples");
    }
  }
  model.config.t_train = config.t_train;
  const auto params = model.named_parameters();
  AdamState adam;
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick_class(0, classes.size() - 1);
  TrainLog log;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochStats st;
    st.epoch = epoch + 1;
    st.lr = learning_rate_at(config, epoch);
    for (int e = 0; e < config.episodes_per_epoch; ++e) {
      const int cls = classes[pick_class(rng)];
      const Episode aligned = align_episode(sample_episode(dataset, cls, config.shots, rng));
      ++log.class_counts[cls];

      std::vector<Var<float>> support_features, support_masks;
      std::vector<Mask> full_masks;
      for (const auto& s : aligned.support) {
        support_features.push_back(encode(model.encoder, Var<float>(s.image, false)));
        support_masks.emplace_back(downsample_mask(s.mask, kFeatureStride), false);
        full_masks.push_back(s.mask);
      }
      Var<float> query_features = encode(model.encoder, Var<float>(aligned.query_image, false));
      const Mask m0 = binarize(downsample_mask(initial_mask(full_masks, model.config.m0_mode), kFeatureStride));

      SegLoss<float> loss;
      try {
        ForwardGraph<float> g = refine(model, support_features, support_masks, query_features, m0, config.t_train,
                                       aligned.query_image.dim(0), aligned.query_image.dim(1));
        loss = seg_loss(g.soft_masks.back(), feature_target(*aligned.query_mask), config.beta, config.eps_dice,
                        config.eps_ce);
        Var<float> total = loss.total;
        if (config.align_loss && aligned.support.size() == 1) {
          try {
            SegLoss<float> al =
                alignment_loss(model, support_features[0], aligned.support[0].mask, query_features,
                               g.final_fullres.value(), config.t_train, config.beta, config.eps_dice, config.eps_ce);
            st.l_align += al.total.value()[0];
            total = add(total, al.total);
          } catch (const EmptyMaskError&) {
            ++st.align_skipped;
          }
        }
        backward(total);
      } catch (const EmptyMaskError&) {
        ++st.skipped;
        for (const auto& p : params) Var<float>(p.var).zero_grad();
        continue;
      }

      double sq = 0;
      for (const auto& p : params) {
        if (!p.var.has_grad()) continue;
        const Tensor<float> g = p.var.grad();
        for (float v : g.values()) sq += static_cast<double>(v) * v;
      }
      st.grad_norm += std::sqrt(sq);
      adam_step(params, adam, st.lr);
      for (const auto& p : params) Var<float>(p.var).zero_grad();

      st.l_seg += loss.total.value()[0];
      st.l_dice += loss.dice;
      st.l_ce += loss.ce;
      ++st.episodes;
    }
    if (st.episodes > 0) {
      const double n = st.episodes;
      st.l_seg /= n;
      st.l_dice /= n;
      st.l_ce /= n;
      st.grad_norm /= n;
      const int aligned_terms = st.episodes - st.align_skipped;
      st.l_align = aligned_terms > 0 ? st.l_align / aligned_terms : 0.0;
    }
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.epochs.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  return log;
}

#define PROTOSEG_INSTANTIATE(T)                                                                                 \
  template Tensor<T> one_hot<T>(const Tensor<T>&);                                                              \
  template Var<T> dice_loss<T>(const Var<T>&, const Tensor<T>&, double);                                        \
  template Var<T> ce_loss<T>(const Var<T>&, const Tensor<T>&, double);                                          \
  template SegLoss<T> seg_loss<T>(const Var<T>&, const Tensor<T>&, double, double, double);                     \
  template SegLoss<T> alignment_loss<T>(const RpNetModelT<T>&, const Var<T>&, const Tensor<T>&, const Var<T>&, \
                                        const Tensor<T>&, int, double, double, double);

PROTOSEG_INSTANTIATE(float)
PROTOSEG_INSTANTIATE(double)

}  // namespace protoseg
