#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "protoseg/tensor.hpp"

namespace protoseg::testing {

template <typename T = float>
Tensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

inline Tensor<float> box_mask(int h, int w, int r0, int r1, int c0, int c1) {
  Tensor<float> m({h, w, 1});
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) m.at(r, c, 0) = 1.0f;
  return m;
}

// Reference implementations written as plain loops over the definitions.

inline Tensor<double> naive_correlate(const Tensor<double>& f, const Tensor<double>& b, int d) {
  const int h = f.dim(0), w = f.dim(1), z = f.dim(2), side = 2 * d + 1;
  Tensor<double> out({h, w, side * side});
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int i = -d; i <= d; ++i)
        for (int j = -d; j <= d; ++j) {
          double s = 0;
          for (int k = 0; k < z; ++k) {
            const int rr = r - i, cc = c - j;
            if (rr >= 0 && cc >= 0 && rr < h && cc < w) s += f.at(r, c, k) * b.at(rr, cc, k);
          }
          out.at(r, c, (i + d) * side + (j + d)) = s;
        }
  return out;
}

inline Tensor<double> masked_mean_oracle(const Tensor<double>& f, const Tensor<double>& m, bool background) {
  const int z = f.dim(2);
  std::vector<double> num(static_cast<std::size_t>(z), 0.0);
  double den = 0;
  for (int r = 0; r < f.dim(0); ++r)
    for (int c = 0; c < f.dim(1); ++c) {
      const double w = background ? 1.0 - m.at(r, c, 0) : m.at(r, c, 0);
      den += w;
      for (int k = 0; k < z; ++k) num[static_cast<std::size_t>(k)] += w * f.at(r, c, k);
    }
  Tensor<double> out({z});
  for (int k = 0; k < z; ++k) out[static_cast<std::size_t>(k)] = num[static_cast<std::size_t>(k)] / den;
  return out;
}

inline double dice_oracle(const Tensor<double>& m, const Tensor<double>& y, double eps) {
  double inter = 0, sm = 0, sy = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    inter += m[i] * y[i];
    sm += m[i];
    sy += y[i];
  }
  return 1.0 - 2.0 * inter / (sm + sy + eps);
}

inline double ce_oracle(const Tensor<double>& m, const Tensor<double>& y, double eps) {
  double acc = 0;
  for (std::size_t i = 0; i < m.size(); ++i) acc += y[i] * std::log(std::clamp(m[i], eps, 1.0 - eps));
  return -acc / static_cast<double>(m.size());
}

// [1 - p, p] per pixel with p uniform in (0.01, 0.99).
inline Tensor<double> random_soft(int h, int w, std::mt19937_64& rng) {
  Tensor<double> t({h, w, 2});
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (std::size_t p = 0; p < t.size() / 2; ++p) {
    t[p * 2 + 1] = u(rng);
    t[p * 2] = 1.0 - t[p * 2 + 1];
  }
  return t;
}

}  // namespace protoseg::testing
