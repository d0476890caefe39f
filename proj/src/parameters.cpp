#include "protoseg/parameters.hpp"

#include <cmath>

namespace protoseg {

template <typename T>
Tensor<T> he_uniform(const Shape& shape, int fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template Tensor<float> he_uniform<float>(const Shape&, int, std::mt19937_64&);
template Tensor<double> he_uniform<double>(const Shape&, int, std::mt19937_64&);

}  // namespace protoseg
