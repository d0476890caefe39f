#include "protoseg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace protoseg {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
bool wants_grad(const Node<T>& node, std::size_t i) {
  return node.parents[i]->requires_grad;
}

struct ConvGeometry {
  int h, w, cin, k, cout, stride, pad, out_h, out_w;
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
  int patch() const { return k * k * cin; }
  int pixels() const { return out_h * out_w; }
};

template <typename T>
void im2col(const T* in, const ConvGeometry& g, T* col) {
  const int patch = g.patch();
  for (int oy = 0; oy < g.out_h; ++oy) {
    for (int ox = 0; ox < g.out_w; ++ox) {
      T* row = col + static_cast<std::size_t>(oy * g.out_w + ox) * patch;
      for (int ky = 0; ky < g.k; ++ky) {
        const int iy = oy * g.stride + ky - g.pad;
        for (int kx = 0; kx < g.k; ++kx) {
          const int ix = ox * g.stride + kx - g.pad;
          T* dst = row + (ky * g.k + kx) * g.cin;
          if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) {
            std::fill(dst, dst + g.cin, T(0));
          } else {
            const T* src = in + (static_cast<std::size_t>(iy) * g.w + ix) * g.cin;
            std::copy(src, src + g.cin, dst);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* in_grad) {
  const int patch = g.patch();
  for (int oy = 0; oy < g.out_h; ++oy) {
    for (int ox = 0; ox < g.out_w; ++ox) {
      const T* row = col + static_cast<std::size_t>(oy * g.out_w + ox) * patch;
      for (int ky = 0; ky < g.k; ++ky) {
        const int iy = oy * g.stride + ky - g.pad;
        if (iy < 0 || iy >= g.h) continue;
        for (int kx = 0; kx < g.k; ++kx) {
          const int ix = ox * g.stride + kx - g.pad;
          if (ix < 0 || ix >= g.w) continue;
          const T* src = row + (ky * g.k + kx) * g.cin;
          T* dst = in_grad + (static_cast<std::size_t>(iy) * g.w + ix) * g.cin;
          for (int c = 0; c < g.cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

// Source taps for one output coordinate of an align-corners-false resize.
struct Tap {
  int i0, i1;
  double w0, w1;
};

std::vector<Tap> resize_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(src);
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    const double frac = src - i0;
    taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - frac, frac};
  }
  return taps;
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernels, const std::optional<Var<T>>& bias, int stride,
              int zero_pad) {
  expect_rank(input.shape(), 3, "conv2d input");
  expect_rank(kernels.shape(), 4, "conv2d kernels");
  ConvGeometry g{};
  g.h = input.dim(0);
  g.w = input.dim(1);
  g.cin = input.dim(2);
  g.k = kernels.dim(0);
  g.cout = kernels.dim(3);
  g.stride = stride;
  g.pad = zero_pad;
  if (kernels.dim(1) != g.k || g.k % 2 == 0) throw ShapeError("conv2d: kernel must be square with odd size");
  if (kernels.dim(2) != g.cin) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernels.dim(2)) + " input channels, input has " +
                     std::to_string(g.cin));
  }
  if (stride < 1 || zero_pad < 0) throw ShapeError("conv2d: stride must be >= 1 and padding >= 0");
  if (bias && bias->shape() != Shape{g.cout}) throw ShapeError("conv2d: bias must have Cout elements");
  g.out_h = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.out_w = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k) throw ShapeError("conv2d: kernel larger than padded input");

  auto col = std::make_shared<AlignedVector<T>>();
  const T* col_ptr = input.value().data();
  if (!g.pointwise()) {
    col->resize(static_cast<std::size_t>(g.pixels()) * g.patch());
    im2col(input.value().data(), g, col->data());
    col_ptr = col->data();
  }

  Tensor<T> out({g.out_h, g.out_w, g.cout});
  ConstMapMat<T> cols(col_ptr, g.pixels(), g.patch());
  ConstMapMat<T> weights(kernels.value().data(), g.patch(), g.cout);
  MapMat<T> result(out.data(), g.pixels(), g.cout);
  result.noalias() = cols * weights;
  if (bias) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias->value().data(), g.cout);
    result.rowwise() += b;
  }

  std::vector<Var<T>> parents{input, kernels};
  if (bias) parents.push_back(*bias);
  return Var<T>::make(std::move(out), std::move(parents), [g, col](Node<T>& self) {
    ConstMapMat<T> dout(self.grad.data(), g.pixels(), g.cout);
    const Node<T>& in_node = *self.parents[0];
    const T* col_ptr = g.pointwise() ? in_node.value.data() : col->data();
    ConstMapMat<T> cols(col_ptr, g.pixels(), g.patch());
    if (wants_grad(self, 1)) {
      Tensor<T> dk(self.parents[1]->value.shape());
      MapMat<T>(dk.data(), g.patch(), g.cout).noalias() = cols.transpose() * dout;
      self.parents[1]->accumulate(dk);
    }
    if (self.parents.size() > 2 && wants_grad(self, 2)) {
      Tensor<T> db({g.cout});
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(db.data(), g.cout) = dout.colwise().sum();
      self.parents[2]->accumulate(db);
    }
    if (wants_grad(self, 0)) {
      ConstMapMat<T> weights(self.parents[1]->value.data(), g.patch(), g.cout);
      Tensor<T> din({g.h, g.w, g.cin});
      if (g.pointwise()) {
        MapMat<T>(din.data(), g.pixels(), g.cin).noalias() = dout * weights.transpose();
      } else {
        RowMat<T> dcol = dout * weights.transpose();
        col2im(dcol.data(), g, din.data());
      }
      self.parents[0]->accumulate(din);
    }
  });
}

template <typename T>
Var<T> bilinear_resize(const Var<T>& input, int out_h, int out_w) {
  expect_rank(input.shape(), 3, "bilinear_resize input");
  if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize: output size must be >= 1");
  const int h = input.dim(0), w = input.dim(1), c = input.dim(2);
  auto ty = resize_taps(h, out_h);
  auto tx = resize_taps(w, out_w);
  Tensor<T> out({out_h, out_w, c});
  const Tensor<T>& x = input.value();
  for (int oy = 0; oy < out_h; ++oy) {
    const Tap& a = ty[static_cast<std::size_t>(oy)];
    for (int ox = 0; ox < out_w; ++ox) {
      const Tap& b = tx[static_cast<std::size_t>(ox)];
      for (int ch = 0; ch < c; ++ch) {
        const double v = a.w0 * (b.w0 * x.at(a.i0, b.i0, ch) + b.w1 * x.at(a.i0, b.i1, ch)) +
                         a.w1 * (b.w0 * x.at(a.i1, b.i0, ch) + b.w1 * x.at(a.i1, b.i1, ch));
        out.at(oy, ox, ch) = static_cast<T>(v);
      }
    }
  }
  return Var<T>::make(std::move(out), {input}, [ty, tx, h, w, c, out_h, out_w](Node<T>& self) {
    Tensor<T> dx({h, w, c});
    for (int oy = 0; oy < out_h; ++oy) {
      const Tap& a = ty[static_cast<std::size_t>(oy)];
      for (int ox = 0; ox < out_w; ++ox) {
        const Tap& b = tx[static_cast<std::size_t>(ox)];
        for (int ch = 0; ch < c; ++ch) {
          const double g = self.grad.at(oy, ox, ch);
          dx.at(a.i0, b.i0, ch) += static_cast<T>(a.w0 * b.w0 * g);
          dx.at(a.i0, b.i1, ch) += static_cast<T>(a.w0 * b.w1 * g);
          dx.at(a.i1, b.i0, ch) += static_cast<T>(a.w1 * b.w0 * g);
          dx.at(a.i1, b.i1, ch) += static_cast<T>(a.w1 * b.w1 * g);
        }
      }
    }
    self.parents[0]->accumulate(dx);
  });
}

template <typename T>
Var<T> softmax_channels(const Var<T>& logits) {
  expect_rank(logits.shape(), 3, "softmax_channels input");
  const int c = logits.dim(2);
  if (c < 2) throw ShapeError("softmax_channels: need at least 2 channels");
  const std::size_t pixels = logits.value().size() / static_cast<std::size_t>(c);
  Tensor<T> out(logits.shape());
  const T* x = logits.value().data();
  T* y = out.data();
  for (std::size_t p = 0; p < pixels; ++p) {
    const T* xp = x + p * c;
    T* yp = y + p * c;
    const T mx = *std::max_element(xp, xp + c);
    T total = 0;
    for (int k = 0; k < c; ++k) {
      yp[k] = std::exp(xp[k] - mx);
      total += yp[k];
    }
    for (int k = 0; k < c; ++k) yp[k] /= total;
  }
  auto probs = std::make_shared<Tensor<T>>(out);
  return Var<T>::make(std::move(out), {logits}, [probs, pixels, c](Node<T>& self) {
    Tensor<T> dx(probs->shape());
    const T* y = probs->data();
    const T* g = self.grad.data();
    for (std::size_t p = 0; p < pixels; ++p) {
      T dot = 0;
      for (int k = 0; k < c; ++k) dot += g[p * c + k] * y[p * c + k];
      for (int k = 0; k < c; ++k) dx[p * c + k] = y[p * c + k] * (g[p * c + k] - dot);
    }
    self.parents[0]->accumulate(dx);
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  Tensor<T> out(x.shape());
  const auto in = x.value().values();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] >= T(0) ? in[i] : slope * in[i];
  return Var<T>::make(std::move(out), {x}, [slope](Node<T>& self) {
    const auto& in = self.parents[0]->value;
    Tensor<T> dx(in.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = in[i] >= T(0) ? self.grad[i] : slope * self.grad[i];
    self.parents[0]->accumulate(dx);
  });
}

template <typename T>
Var<T> avg_pool(const Var<T>& x, int factor) {
  expect_rank(x.shape(), 3, "avg_pool input");
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (factor < 1 || h % factor != 0 || w % factor != 0) {
    throw DivisibilityError("avg_pool: " + shape_str(x.shape()) + " not divisible by " + std::to_string(factor));
  }
  const int oh = h / factor, ow = w / factor;
  const T inv = T(1) / static_cast<T>(factor * factor);
  Tensor<T> out({oh, ow, c});
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int ch = 0; ch < c; ++ch) out.at(y / factor, xx / factor, ch) += x.value().at(y, xx, ch);
  for (auto& v : out.values()) v *= inv;
  return Var<T>::make(std::move(out), {x}, [h, w, c, factor, inv](Node<T>& self) {
    Tensor<T> dx({h, w, c});
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        for (int ch = 0; ch < c; ++ch) dx.at(y, xx, ch) = self.grad.at(y / factor, xx / factor, ch) * inv;
    self.parents[0]->accumulate(dx);
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  expect_shape(b.shape(), a.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return Var<T>::make(std::move(out), {a, b}, [](Node<T>& self) {
    if (wants_grad(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants_grad(self, 1)) self.parents[1]->accumulate(self.grad);
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * factor;
  return Var<T>::make(std::move(out), {a}, [factor](Node<T>& self) {
    Tensor<T> dx(self.grad.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = self.grad[i] * factor;
    self.parents[0]->accumulate(dx);
  });
}

template <typename T>
Var<T> one_minus(const Var<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) - x.value()[i];
  return Var<T>::make(std::move(out), {x}, [](Node<T>& self) {
    Tensor<T> dx(self.grad.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = -self.grad[i];
    self.parents[0]->accumulate(dx);
  });
}

template <typename T>
Var<T> mul_mask(const Var<T>& features, const Var<T>& mask) {
  expect_rank(features.shape(), 3, "mul_mask features");
  expect_shape(mask.shape(), {features.dim(0), features.dim(1), 1}, "mul_mask mask");
  const int c = features.dim(2);
  const std::size_t pixels = mask.value().size();
  Tensor<T> out(features.shape());
  for (std::size_t p = 0; p < pixels; ++p) {
    const T m = mask.value()[p];
    for (int k = 0; k < c; ++k) out[p * c + k] = features.value()[p * c + k] * m;
  }
  return Var<T>::make(std::move(out), {features, mask}, [pixels, c](Node<T>& self) {
    const auto& f = self.parents[0]->value;
    const auto& m = self.parents[1]->value;
    if (wants_grad(self, 0)) {
      Tensor<T> df(f.shape());
      for (std::size_t p = 0; p < pixels; ++p)
        for (int k = 0; k < c; ++k) df[p * c + k] = self.grad[p * c + k] * m[p];
      self.parents[0]->accumulate(df);
    }
    if (wants_grad(self, 1)) {
      Tensor<T> dm(m.shape());
      for (std::size_t p = 0; p < pixels; ++p) {
        T acc = 0;
        for (int k = 0; k < c; ++k) acc += self.grad[p * c + k] * f[p * c + k];
        dm[p] = acc;
      }
      self.parents[1]->accumulate(dm);
    }
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  expect_rank(a.shape(), 3, "concat_channels lhs");
  expect_rank(b.shape(), 3, "concat_channels rhs");
  if (a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1)) {
    throw ShapeError("concat_channels: spatial mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const int ca = a.dim(2), cb = b.dim(2), c = ca + cb;
  const std::size_t pixels = static_cast<std::size_t>(a.dim(0)) * a.dim(1);
  Tensor<T> out({a.dim(0), a.dim(1), c});
  for (std::size_t p = 0; p < pixels; ++p) {
    std::copy_n(a.value().data() + p * ca, ca, out.data() + p * c);
    std::copy_n(b.value().data() + p * cb, cb, out.data() + p * c + ca);
  }
  return Var<T>::make(std::move(out), {a, b}, [pixels, ca, cb, c](Node<T>& self) {
    if (wants_grad(self, 0)) {
      Tensor<T> da(self.parents[0]->value.shape());
      for (std::size_t p = 0; p < pixels; ++p) std::copy_n(self.grad.data() + p * c, ca, da.data() + p * ca);
      self.parents[0]->accumulate(da);
    }
    if (wants_grad(self, 1)) {
      Tensor<T> db(self.parents[1]->value.shape());
      for (std::size_t p = 0; p < pixels; ++p) std::copy_n(self.grad.data() + p * c + ca, cb, db.data() + p * cb);
      self.parents[1]->accumulate(db);
    }
  });
}

template <typename T>
Var<T> slice_channel(const Var<T>& x, int ch) {
  expect_rank(x.shape(), 3, "slice_channel input");
  const int c = x.dim(2);
  if (ch < 0 || ch >= c) throw ShapeError("slice_channel: channel out of range");
  const std::size_t pixels = static_cast<std::size_t>(x.dim(0)) * x.dim(1);
  Tensor<T> out({x.dim(0), x.dim(1), 1});
  for (std::size_t p = 0; p < pixels; ++p) out[p] = x.value()[p * c + ch];
  return Var<T>::make(std::move(out), {x}, [pixels, c, ch](Node<T>& self) {
    Tensor<T> dx(self.parents[0]->value.shape());
    for (std::size_t p = 0; p < pixels; ++p) dx[p * c + ch] = self.grad[p];
    self.parents[0]->accumulate(dx);
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out(std::move(shape), std::vector<T>(x.value().values().begin(), x.value().values().end()));
  return Var<T>::make(std::move(out), {x}, [](Node<T>& self) {
    const auto g = self.grad.values();
    self.parents[0]->accumulate(Tensor<T>(self.parents[0]->value.shape(), std::vector<T>(g.begin(), g.end())));
  });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights) {
  expect_shape(weights.shape(), x.shape(), "weighted_sum weights");
  T total = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) total += x.value()[i] * weights[i];
  return Var<T>::make(Tensor<T>({1}, {total}), {x}, [weights](Node<T>& self) {
    Tensor<T> dx(weights.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = weights[i] * self.grad[0];
    self.parents[0]->accumulate(dx);
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  return weighted_sum(x, Tensor<T>(x.shape(), T(1)));
}

#define PROTOSEG_INSTANTIATE(T)                                                                               \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&, int, int);            \
  template Var<T> bilinear_resize<T>(const Var<T>&, int, int);                                               \
  template Var<T> softmax_channels<T>(const Var<T>&);                                                        \
  template Var<T> leaky_relu<T>(const Var<T>&, T);                                                           \
  template Var<T> avg_pool<T>(const Var<T>&, int);                                                           \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                                      \
  template Var<T> scale<T>(const Var<T>&, T);                                                                \
  template Var<T> one_minus<T>(const Var<T>&);                                                               \
  template Var<T> mul_mask<T>(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> concat_channels<T>(const Var<T>&, const Var<T>&);                                          \
  template Var<T> slice_channel<T>(const Var<T>&, int);                                                      \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                                          \
  template Var<T> weighted_sum<T>(const Var<T>&, const Tensor<T>&);                                          \
  template Var<T> sum<T>(const Var<T>&);

PROTOSEG_INSTANTIATE(float)
PROTOSEG_INSTANTIATE(double)

}  // namespace protoseg
