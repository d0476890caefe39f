#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "protoseg/autograd.hpp"

namespace protoseg {

template <typename T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

// Fresh trainable leaf holding `v`'s value converted to U.
template <typename U, typename T>
Var<U> cast_leaf(const Var<T>& v) {
  return Var<U>(v.value().template cast<U>(), true);
}

// Uniform in [-sqrt(6 / fan_in), +sqrt(6 / fan_in)].
template <typename T>
Tensor<T> he_uniform(const Shape& shape, int fan_in, std::mt19937_64& rng);

template <typename T>
std::size_t count_parameters(const std::vector<NamedParam<T>>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var.value().size();
  return n;
}

}  // namespace protoseg
