#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "protoseg/autograd.hpp"

namespace protoseg {

struct GradCheckReport {
  std::string op_name;
  double max_rel_error = 0.0;
  std::vector<double> per_input_errors;
  std::size_t total_probes = 0;
  std::size_t one_sided_probes = 0;  // passed only on a one-sided difference
  bool passed = false;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Inputs larger than this are probed on a random subsample of this size.
  std::size_t max_probes_per_input = 256;
  std::uint64_t seed = 0;
};

using DifferentiableFn = std::function<Var<double>(std::span<const Var<double>>)>;

// Compares analytic gradients of sum(w * op(inputs)) against central finite
// differences. The weights w are fixed pseudo-random values in [0.5, 1.5];
// they keep ops whose outputs sum to a constant (softmax) from reducing to a
// zero-gradient check. The error for one input is max|analytic - numeric|
// over the probed entries divided by the largest magnitude among them, so
// entries that are zero up to round-off do not dominate. A probe whose central
// difference misses but whose forward or backward difference (same step)
// matches counts as straddling a kink; more than a quarter of such probes
// fails the check. Throws NonFiniteError if any probe is not finite.
GradCheckReport gradcheck(const std::string& op_name, const DifferentiableFn& op,
                          const std::vector<Tensor<double>>& inputs, const GradCheckOptions& options = {});

}  // namespace protoseg
