// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "ub/tensor.hpp"

namespace ub {

enum class ScheduleKind { kCosine, kLinear, kStep };

std::string_view schedule_name(ScheduleKind kind);
ScheduleKind parse_schedule(std::string_view name);

struct LrSchedule {
  double peak_lr = 1e-3;
  std::size_t warmup_steps = 50;
  std::size_t total_steps = 300;
  ScheduleKind kind = ScheduleKind::kCosine;
  // kStep only: the rate is multiplied by step_gamma at each milestone.
  std::vector<std::size_t> milestones;
  double step_gamma = 0.1;

  // Linear warmup from 0 at step 0, then the decay named by `kind`.
  double rate_at(std::size_t step) const;
};

struct ParamGroup {
  std::string name;
  ParamList params;
  double lr_multiplier = 1.0;
  double weight_decay = 0.01;
};

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  LrSchedule schedule;
};

// AdamW with decoupled weight decay and per-group rate multipliers. Weight
// decay applies to rank >= 2 parameters only (not biases or norm gains).
class AdamW {
 public:
  AdamW(AdamWOptions options, std::vector<ParamGroup> groups);

  // Applies one update using the gradients currently stored on the
  // parameters, then zeroes them. Throws InvariantError (no update applied) if
  // any gradient is NaN/Inf, and std::logic_error if a parameter has no
  // gradient buffer.
  void step();

  std::size_t step_count() const { return step_; }
  double effective_rate(std::size_t group) const;
  const std::vector<ParamGroup>& groups() const { return groups_; }
  void zero_grad();

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  AdamWOptions options_;
  std::vector<ParamGroup> groups_;
  std::vector<std::vector<Moments>> moments_;
  std::size_t step_ = 0;
};

}  // namespace ub
