#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rage/tensor.hpp"

namespace rage {

using ScalarFn = std::function<Tensor<double>(const Tensor<double>&)>;

/// Compares the reverse-mode gradient of scalar `f` at `x` against central
/// finite differences with step `eps`. Returns the maximum over elements of
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
double finite_diff_check(const ScalarFn& f, const Tensor<double>& x,
                         double eps = 1e-5);

struct GradCaseResult {
  std::string op;          // e.g. "conv2d.weight": op and differentiated input
  std::size_t instances = 0;
  double worst = 0.0;      // max relative error over instances
};

/// Finite-difference checks of every differentiable op (each input checked
/// separately) on `instances` random draws with varying shapes. Upstream
/// gradients are random weights so no element is checked against a constant.
std::vector<GradCaseResult> run_gradient_suite(std::size_t instances = 10, double eps = 1e-5,
                                               std::uint64_t seed = 0);

}  // namespace rage
