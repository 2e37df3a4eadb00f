// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ub/tensor.hpp"

namespace ub {

using LossFn = std::function<Tensor(Tape&, std::span<const Tensor>)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  bool passed = false;
  std::size_t checked = 0;
  std::string worst;  // "input i, element j: analytic a vs numeric n"
};

struct GradCheckOptions {
  double eps = 1e-3;
  double tol = 1e-4;
  // Relative error is |a - n| / max(|a|, |n|, scale_floor); the floor keeps
  // near-zero components from turning rounding noise into huge ratios.
  double scale_floor = 1e-2;
};

// Compares reverse-mode gradients of `fn` at `inputs` against central
// differences. Inputs must be parameter leaves; their values are restored
// before returning. Non-finite values count as failures.
GradCheckReport grad_check(const LossFn& fn, std::vector<Tensor> inputs, const GradCheckOptions& options = {});

}  // namespace ub
