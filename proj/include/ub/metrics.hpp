// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ub/splits.hpp"

namespace ub {

// Full confusion matrix over an ordered label set (rows ground truth, columns
// prediction). Merging two accumulators with the same labels sums them.
class ConfusionCounts {
 public:
  explicit ConfusionCounts(std::vector<std::uint8_t> labels, std::uint8_t ignore = 255);

  const std::vector<std::uint8_t>& labels() const { return labels_; }
  std::size_t classes() const { return labels_.size(); }
  std::uint8_t ignore_label() const { return ignore_; }
  std::uint64_t at(std::size_t gt, std::size_t pred) const { return matrix_[gt * labels_.size() + pred]; }

  std::uint64_t intersection(std::size_t c) const { return at(c, c); }
  std::uint64_t predicted(std::size_t c) const;
  std::uint64_t ground_truth(std::size_t c) const;
  std::uint64_t union_of(std::size_t c) const { return predicted(c) + ground_truth(c) - intersection(c); }
  std::uint64_t counted() const;
  std::uint64_t correct() const;

  void add(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> ground_truth);
  ConfusionCounts& operator+=(const ConfusionCounts& other);
  bool operator==(const ConfusionCounts&) const = default;

 private:
  std::size_t index_of(std::uint8_t label, const char* role) const;

  std::vector<std::uint8_t> labels_;
  std::uint8_t ignore_;
  std::vector<std::uint64_t> matrix_;
};

// Pixels with the ignore label in ground truth are skipped.
void accumulate(ConfusionCounts& counts, std::span<const std::uint8_t> predicted,
                std::span<const std::uint8_t> ground_truth);

double class_iou(const ConfusionCounts& counts, std::size_t c);
double miou(const ConfusionCounts& counts);
// Mean IoU over the listed labels only (those with a nonzero union).
double miou(const ConfusionCounts& counts, const std::vector<std::uint8_t>& subset);
double pix_acc(const ConfusionCounts& counts);
double fb_iou(const ConfusionCounts& counts, const std::vector<std::uint8_t>& foreground);

struct SegReport {
  std::vector<double> class_iou;  // NaN where the union is empty
  double miou = 0.0;
  double fb_iou = 0.0;
  double pix_acc = 0.0;
};

SegReport seg_report(const ConfusionCounts& counts, const std::vector<std::uint8_t>& foreground);

// Half-up rounding after clearing binary noise below 1e-6 of the last digit.
double round_half_up(double value, int decimals);
// Mean of already-rounded table values, rounded the same way.
double reported_mean(std::span<const double> values, int decimals = 1);
double fold_mean(std::span<const double> per_fold, int decimals = 1);

enum class VqaMode { kExactMatch, kConsensus };

// Lowercase, trim, collapse internal whitespace.
std::string normalize_answer(const std::string& answer);

struct VqaItem {
  std::string answer_type;  // "number", "yes/no" or "other"
  std::string prediction;
  std::vector<std::string> references;
};

struct VqaScores {
  std::map<AnswerType, double> per_type;  // in [0, 1]
  std::map<AnswerType, std::size_t> count;
  double mean = 0.0;                      // unweighted over the types present
};

double vqa_item_score(const VqaItem& item, VqaMode mode);
VqaScores vqa_accuracy(const std::vector<VqaItem>& items, VqaMode mode);

}  // namespace ub
