// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ub/config.hpp"
#include "ub/metrics.hpp"
#include "ub/model.hpp"
#include "ub/pretrain.hpp"
#include "ub/scheduler.hpp"
#include "ub/shapeworld.hpp"
#include "ub/splits.hpp"
#include "ub/vocab.hpp"

namespace ub {

// Everything one fold of one seed trains and evaluates on.
struct FoldData {
  std::size_t fold = 0;
  ShapeWorldConfig world;
  FoldSplit split;
  Vocabulary vocab = Vocabulary::with_specials({});
  CorpusTriple corpora;
  std::vector<ShapeSample> finetune;  // base classes unless the config asks for a leaky set
  std::vector<ShapeSample> eval;      // novel classes only

  std::vector<std::uint8_t> base_labels() const;
  std::vector<std::uint8_t> novel_labels() const;
  // Word ids of a class prompt; label 0 is the background prompt.
  std::vector<std::size_t> prompt(std::uint8_t label) const;
};

FoldData build_fold_data(const ExperimentConfig& config, std::uint64_t seed, std::size_t fold);

// Patch rows of a rendered image.
Tensor image_patches(const Image& image, std::size_t patch_size);

// Only pair-contrastive pretraining reads fold-specific data.
bool pretrain_uses_fold(PretrainMode mode);
PretrainCorpora pretrain_corpora(PretrainMode mode, const FoldData& data, std::size_t patch_size);
PretrainResult run_pretrain(const ExperimentConfig& config, const FoldData& data, std::uint64_t seed,
                            std::optional<std::size_t> steps = std::nullopt);

struct FinetuneResult {
  UniModel model;
  std::vector<EmittedBatch> trace;
  std::map<std::string, std::vector<double>> losses;  // per task, one batch mean per visit
};

// Multitask intermediate fine-tuning driven by the scheduler stream. Encoder
// parameters train at encoder_lr_ratio times the base rate (0 when frozen).
FinetuneResult run_finetune(const ExperimentConfig& config, const FoldData& data, EncoderStack image,
                            EncoderStack text, std::uint64_t seed, std::optional<std::size_t> steps = std::nullopt,
                            const std::vector<TaskSpec>* tasks = nullptr);
// Continues from an already assembled model, e.g. an intermediate checkpoint.
FinetuneResult run_finetune(const ExperimentConfig& config, const FoldData& data, UniModel model, std::uint64_t seed,
                            std::optional<std::size_t> steps = std::nullopt,
                            const std::vector<TaskSpec>* tasks = nullptr);

// Builds the per-task datasets run_finetune consumes (after rebalancing).
std::vector<TaskDataset> finetune_datasets(const ExperimentConfig& config, const std::vector<TaskSpec>& tasks,
                                           const FoldData& data, std::uint64_t seed);

// Throws InvariantError if any sample named in the trace carries a novel class
// in its mask or text.
void check_no_leakage(const std::vector<TraceLine>& trace, const FoldData& data);

enum class EvalSplit { kBase, kNovel };

std::string_view eval_split_name(EvalSplit split);
EvalSplit parse_eval_split(std::string_view text);

struct SegEval {
  ConfusionCounts counts;
  std::vector<std::uint8_t> scored;  // labels averaged into mIoU
  double miou = 0.0;
  double fb_iou = 0.0;
  double pix_acc = 0.0;
};

std::vector<ShapeSample> eval_samples(const ExperimentConfig& config, const FoldData& data, EvalSplit split);
// Candidates are background plus the split's classes.
std::vector<std::uint8_t> eval_candidates(const FoldData& data, EvalSplit split);
SegEval score_masks(const std::vector<std::vector<std::uint8_t>>& predictions, const std::vector<ShapeSample>& samples,
                    const std::vector<std::uint8_t>& candidates);
SegEval evaluate_segmentation(const UniModel& model, const ExperimentConfig& config, const FoldData& data,
                              EvalSplit split);

struct FoldResult {
  std::size_t fold = 0;
  double miou = 0.0;  // in [0, 1]
  double fb_iou = 0.0;
  double pix_acc = 0.0;
};

struct RunRecord {
  std::string name;
  std::string config_hash;
  std::string mode;
  std::string image_tag;
  std::string text_tag;
  std::uint64_t seed = 0;
  std::map<std::string, std::vector<double>> pretrain_losses;
  std::map<std::string, std::vector<double>> finetune_losses;  // keyed "fold<k>/<task>"
  std::vector<std::string> checkpoints;
  std::vector<FoldResult> folds;
  double wall_seconds = 0.0;

  double mean_miou() const;
};

std::string run_record_json(const RunRecord& record);
RunRecord parse_run_record(const std::string& json_text);

std::string encoder_tag(const EncoderConfig& config, Modality modality);

// Pretrain, fine-tune and evaluate every fold for one seed. With an output
// directory, checkpoints, traces and the record are written below
// <out>/<name>/seed<k>/.
RunRecord run_pipeline(const ExperimentConfig& config, std::uint64_t seed,
                       const std::optional<std::filesystem::path>& out = std::nullopt);

struct ReportRow {
  std::string stream;
  std::string image_tag;
  std::string text_tag;
  std::string seed;          // "all" for the across-seed row
  std::vector<double> folds;  // x100, rounded to 1 decimal
  double mean = 0.0;          // fold_mean of the rounded folds
  double fb_iou = 0.0;
};

struct ComparisonReport {
  std::size_t fold_count = 0;
  std::vector<ReportRow> rows;
  std::map<std::string, std::size_t> wins;  // seeds on which a stream had the strictly best mean
};

// Configs must agree on everything except the pretraining stream and labels.
void check_comparable(const std::vector<ExperimentConfig>& configs);
ComparisonReport build_report(const std::vector<RunRecord>& records);
ComparisonReport cmd_compare(const std::vector<ExperimentConfig>& configs, const std::vector<std::uint64_t>& seeds,
                             const std::optional<std::filesystem::path>& out = std::nullopt);

std::string report_csv(const ComparisonReport& report);
std::string report_table(const ComparisonReport& report);
// RFC-4180 reader for report files.
std::vector<std::vector<std::string>> parse_csv(const std::string& text);
// Writes report.csv and report.txt into dir.
void emit_report(const ComparisonReport& report, const std::filesystem::path& dir);

}  // namespace ub
