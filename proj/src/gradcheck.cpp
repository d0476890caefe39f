#include "protoseg/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "protoseg/ops.hpp"

namespace protoseg {

namespace {

std::vector<Var<double>> make_leaves(const std::vector<Tensor<double>>& inputs, bool requires_grad) {
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.emplace_back(t, requires_grad);
  return vars;
}

double evaluate(const DifferentiableFn& op, const std::vector<Tensor<double>>& inputs, Tensor<double>& weights,
                std::mt19937_64& rng) {
  NoGradGuard no_grad;
  auto vars = make_leaves(inputs, false);
  Var<double> out = op(vars);
  if (weights.empty()) {
    std::uniform_real_distribution<double> dist(0.5, 1.5);
    weights = Tensor<double>(out.shape());
    for (auto& w : weights.values()) w = dist(rng);
  }
  const double value = weighted_sum(out, weights).value()[0];
  if (!std::isfinite(value)) throw NonFiniteError("gradcheck: non-finite output");
  return value;
}

}  // namespace

GradCheckReport gradcheck(const std::string& op_name, const DifferentiableFn& op,
                          const std::vector<Tensor<double>>& inputs, const GradCheckOptions& options) {
  std::mt19937_64 rng(options.seed);
  Tensor<double> weights;
  evaluate(op, inputs, weights, rng);

  auto leaves = make_leaves(inputs, true);
  Var<double> loss = weighted_sum(op(leaves), weights);
  backward(loss);

  GradCheckReport report;
  report.op_name = op_name;
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<double> analytic = leaves[i].grad();
    if (!all_finite(analytic)) throw NonFiniteError("gradcheck: non-finite analytic gradient in " + op_name);

    std::vector<std::size_t> indices(inputs[i].size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (indices.size() > options.max_probes_per_input) {
      std::shuffle(indices.begin(), indices.end(), rng);
      indices.resize(options.max_probes_per_input);
      std::sort(indices.begin(), indices.end());
    }

    // Central differences, with the two one-sided differences as fallback: a
    // leaky ReLU kink inside (-h, h) spoils the central estimate, but the side
    // without the kink is still linear.
    const double h = options.step;
    const double f0 = evaluate(op, inputs, weights, rng);
    std::vector<std::array<double, 3>> numeric(indices.size());
    double scale = 1e-8;
    for (std::size_t n = 0; n < indices.size(); ++n) {
      const std::size_t idx = indices[n];
      const double original = probe[i][idx];
      probe[i][idx] = original + h;
      const double plus = evaluate(op, probe, weights, rng);
      probe[i][idx] = original - h;
      const double minus = evaluate(op, probe, weights, rng);
      probe[i][idx] = original;
      numeric[n] = {(plus - minus) / (2.0 * h), (plus - f0) / h, (f0 - minus) / h};
      scale = std::max({scale, std::abs(analytic[idx]), std::abs(numeric[n][0])});
    }

    double worst = 0.0;
    for (std::size_t n = 0; n < indices.size(); ++n) {
      const double a = analytic[indices[n]];
      const double central = std::abs(a - numeric[n][0]) / scale;
      double err = central;
      if (central > options.tolerance) {
        err = std::min({central, std::abs(a - numeric[n][1]) / scale, std::abs(a - numeric[n][2]) / scale});
        if (err <= options.tolerance) ++report.one_sided_probes;
      }
      worst = std::max(worst, err);
    }
    report.total_probes += indices.size();
    report.per_input_errors.push_back(worst);
    report.max_rel_error = std::max(report.max_rel_error, worst);
  }
  if (4 * report.one_sided_probes > report.total_probes) report.max_rel_error = std::numeric_limits<double>::infinity();
  report.passed = report.max_rel_error <= options.tolerance;
  return report;
}

}  // namespace protoseg
