// SPDX-License-Identifier: Apache-2.0
#include "ub/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace ub {

GradCheckReport grad_check(const LossFn& fn, std::vector<Tensor> inputs, const GradCheckOptions& options) {
  GradCheckReport report;
  for (auto& t : inputs) t.zero_grad();

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss = fn(tape, inputs);
    tape.backward(loss);
    for (const auto& t : inputs) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    }
  }

  auto eval = [&]() {
    Tape tape;
    return fn(tape, inputs).item();
  };

  bool ok = true;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto values = inputs[i].mutable_values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double orig = values[j];
      values[j] = orig + options.eps;
      const double up = eval();
      values[j] = orig - options.eps;
      const double down = eval();
      values[j] = orig;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double a = analytic[i][j];
      double rel;
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        rel = std::numeric_limits<double>::infinity();
      } else {
        rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), options.scale_floor});
      }
      ++report.checked;
      if (report.checked == 1 || !(rel <= report.max_rel_error)) {
        report.max_rel_error = std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel;
        std::ostringstream os;
        os << "input " << i << ", element " << j << ": analytic " << a << " vs numeric " << numeric;
        report.worst = os.str();
      }
      if (!(rel <= options.tol)) ok = false;
    }
  }
  for (auto& t : inputs) t.zero_grad();
  report.passed = ok && report.checked > 0;
  return report;
}

}  // namespace ub
