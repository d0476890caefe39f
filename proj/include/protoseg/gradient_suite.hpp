#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protoseg/gradcheck.hpp"

namespace protoseg {

// Names accepted by run_gradient_suite, in run order ("all" runs every one).
const std::vector<std::string>& gradient_suite_ops();

// 64-bit finite-difference checks of every differentiable op on small random
// inputs. Throws std::invalid_argument for an unknown op name.
std::vector<GradCheckReport> run_gradient_suite(const std::string& op, std::uint64_t seed,
                                                const GradCheckOptions& options = {});

}  // namespace protoseg
