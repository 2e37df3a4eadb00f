// SPDX-License-Identifier: Apache-2.0
#include "ub/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "ub/error.hpp"

namespace ub {

std::string_view schedule_name(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::kCosine: return "cosine";
    case ScheduleKind::kLinear: return "linear";
    case ScheduleKind::kStep: return "step";
  }
  return "?";
}

ScheduleKind parse_schedule(std::string_view name) {
  if (name == "cosine") return ScheduleKind::kCosine;
  if (name == "linear") return ScheduleKind::kLinear;
  if (name == "step") return ScheduleKind::kStep;
  throw ConfigError("unknown schedule kind '" + std::string(name) + "'");
}

double LrSchedule::rate_at(std::size_t step) const {
  if (step < warmup_steps) {
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  const std::size_t span = total_steps > warmup_steps ? total_steps - warmup_steps : 1;
  const double progress =
      std::clamp(static_cast<double>(step - warmup_steps) / static_cast<double>(span), 0.0, 1.0);
  switch (kind) {
    case ScheduleKind::kCosine:
      return peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    case ScheduleKind::kLinear:
      return peak_lr * (1.0 - progress);
    case ScheduleKind::kStep: {
      double rate = peak_lr;
      for (std::size_t m : milestones) {
        if (step >= m) rate *= step_gamma;
      }
      return rate;
    }
  }
  return peak_lr;
}

AdamW::AdamW(AdamWOptions options, std::vector<ParamGroup> groups)
    : options_(std::move(options)), groups_(std::move(groups)) {
  for (const auto& g : groups_) {
    if (!(g.lr_multiplier > 0.0)) {
      throw ConfigError("parameter group '" + g.name + "' needs a positive rate multiplier");
    }
    std::vector<Moments> ms;
    for (const auto& p : g.params) {
      ms.push_back({std::vector<double>(p.tensor.numel(), 0.0), std::vector<double>(p.tensor.numel(), 0.0)});
    }
    moments_.push_back(std::move(ms));
  }
}

double AdamW::effective_rate(std::size_t group) const {
  return options_.schedule.rate_at(step_) * groups_.at(group).lr_multiplier;
}

void AdamW::zero_grad() {
  for (auto& g : groups_) {
    for (auto& p : g.params) p.tensor.zero_grad();
  }
}

void AdamW::step() {
  for (const auto& g : groups_) {
    for (const auto& p : g.params) {
      if (!p.tensor.has_grad()) throw std::logic_error("parameter '" + p.name + "' has no gradient");
      for (double v : p.tensor.grad()) {
        if (!std::isfinite(v)) {
          throw InvariantError("non-finite gradient in parameter '" + p.name + "' at step " +
                               std::to_string(step_));
        }
      }
    }
  }
  const double t = static_cast<double>(step_ + 1);
  const double bc1 = 1.0 - std::pow(options_.beta1, t);
  const double bc2 = 1.0 - std::pow(options_.beta2, t);
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    auto& group = groups_[gi];
    const double lr = effective_rate(gi);
    for (std::size_t pi = 0; pi < group.params.size(); ++pi) {
      Tensor& param = group.params[pi].tensor;
      Moments& mom = moments_[gi][pi];
      auto values = param.mutable_values();
      auto grad = param.mutable_grad();
      const double decay = param.rank() >= 2 ? group.weight_decay : 0.0;
      for (std::size_t i = 0; i < values.size(); ++i) {
        mom.m[i] = options_.beta1 * mom.m[i] + (1.0 - options_.beta1) * grad[i];
        mom.v[i] = options_.beta2 * mom.v[i] + (1.0 - options_.beta2) * grad[i] * grad[i];
        const double mhat = mom.m[i] / bc1;
        const double vhat = mom.v[i] / bc2;
        values[i] -= lr * decay * values[i];
        values[i] -= lr * mhat / (std::sqrt(vhat) + options_.eps);
        grad[i] = 0.0;
      }
    }
  }
  ++step_;
}

}  // namespace ub
