// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ub/encoder.hpp"
#include "ub/neck.hpp"
#include "ub/pretrain.hpp"

namespace ub {

enum class TaskHead { kSegmentation, kCaption, kVqa };

std::string_view task_head_name(TaskHead head);
TaskHead parse_task_head(std::string_view text);

struct TaskSpec {
  std::string id;
  RouteKind route = RouteKind::kLanguageGuidedVision;
  TaskHead head = TaskHead::kSegmentation;
  std::size_t batch_size = 8;

  bool operator==(const TaskSpec&) const = default;
};

struct DataSettings {
  std::size_t image_side = 16;
  std::size_t grid = 2;
  std::size_t shapes_per_image = 2;
  std::size_t unimodal_samples = 2048;
  double paired_fraction = 0.25;
  double gloss_fraction = 0.25;
  std::size_t finetune_samples = 512;
  std::size_t eval_samples = 128;
  std::size_t folds = 4;
  bool finetune_includes_novel = false;  // deliberately leaky variant for guard checks

  bool operator==(const DataSettings&) const = default;
};

struct PretrainSettings {
  PretrainMode mode = PretrainMode::kMaskedUnimodal;
  std::size_t steps = 400;
  std::size_t batch_size = 8;
  double peak_lr = 1e-3;
  std::size_t warmup_steps = 50;
  double weight_decay = 0.01;
  double mim_ratio = 0.75;
  double mlm_ratio = 0.15;
  double temperature = 0.07;

  bool operator==(const PretrainSettings&) const = default;
};

struct FinetuneSettings {
  std::size_t steps = 300;
  double peak_lr = 1e-3;
  std::size_t warmup_steps = 50;
  double weight_decay = 0.01;
  double encoder_lr_ratio = 0.1;
  bool freeze_encoders = false;
  std::size_t rebalance_threshold = 640;
  std::vector<TaskSpec> tasks;

  bool operator==(const FinetuneSettings&) const = default;
};

struct ExperimentConfig {
  std::string name;
  std::uint64_t seed = 0;
  std::string out = "runs";
  EncoderConfig image_encoder{};
  EncoderConfig text_encoder{};
  NeckConfig neck{};
  DataSettings data{};
  PretrainSettings pretrain{};
  FinetuneSettings finetune{};

  // Segmentation and captioning on the base classes.
  static std::vector<TaskSpec> default_tasks();
  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

// `key = value` lines under [section] headers; '#' and ';' start comments.
// Task sections are named [task.<id>]. [experiment] name and [pretrain] mode
// are required; unknown keys, missing required keys and malformed values throw
// ConfigError naming the line.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::string& path);

// Canonical text listing every field; parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& config);
// ("section.key", value) pairs in canonical order.
std::vector<std::pair<std::string, std::string>> config_fields(const ExperimentConfig& config);
// FNV-1a 64 of the canonical text.
std::uint64_t config_hash(const ExperimentConfig& config);
std::string hex64(std::uint64_t v);

}  // namespace ub
