// SPDX-License-Identifier: Apache-2.0
#include "ub/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <set>

#include "ub/error.hpp"

namespace ub {

ConfusionCounts::ConfusionCounts(std::vector<std::uint8_t> labels, std::uint8_t ignore)
    : labels_(std::move(labels)), ignore_(ignore), matrix_(labels_.size() * labels_.size(), 0) {
  if (labels_.empty()) throw ConfigError("confusion counts need at least one class");
  std::set<std::uint8_t> seen;
  for (auto l : labels_) {
    if (l == ignore_) throw ConfigError("the ignore label cannot be a class");
    if (!seen.insert(l).second) throw ConfigError("class label " + std::to_string(l) + " listed twice");
  }
}

std::uint64_t ConfusionCounts::predicted(std::size_t c) const {
  std::uint64_t n = 0;
  for (std::size_t g = 0; g < classes(); ++g) n += at(g, c);
  return n;
}

std::uint64_t ConfusionCounts::ground_truth(std::size_t c) const {
  std::uint64_t n = 0;
  for (std::size_t p = 0; p < classes(); ++p) n += at(c, p);
  return n;
}

std::uint64_t ConfusionCounts::counted() const {
  std::uint64_t n = 0;
  for (auto v : matrix_) n += v;
  return n;
}

std::uint64_t ConfusionCounts::correct() const {
  std::uint64_t n = 0;
  for (std::size_t c = 0; c < classes(); ++c) n += at(c, c);
  return n;
}

std::size_t ConfusionCounts::index_of(std::uint8_t label, const char* role) const {
  auto it = std::find(labels_.begin(), labels_.end(), label);
  if (it == labels_.end()) {
    throw DataError(std::string(role) + " label " + std::to_string(label) + " is not in the class set");
  }
  return static_cast<std::size_t>(it - labels_.begin());
}

void ConfusionCounts::add(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> ground_truth) {
  if (predicted.size() != ground_truth.size()) {
    throw ShapeError("prediction has " + std::to_string(predicted.size()) + " pixels, ground truth " +
                     std::to_string(ground_truth.size()));
  }
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (ground_truth[i] == ignore_) continue;
    ++matrix_[index_of(ground_truth[i], "ground-truth") * classes() + index_of(predicted[i], "predicted")];
  }
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& other) {
  if (other.labels_ != labels_ || other.ignore_ != ignore_) throw ShapeError("merging counts over different classes");
  for (std::size_t i = 0; i < matrix_.size(); ++i) matrix_[i] += other.matrix_[i];
  return *this;
}

void accumulate(ConfusionCounts& counts, std::span<const std::uint8_t> predicted,
                std::span<const std::uint8_t> ground_truth) {
  counts.add(predicted, ground_truth);
}

double class_iou(const ConfusionCounts& counts, std::size_t c) {
  const auto u = counts.union_of(c);
  if (u == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(counts.intersection(c)) / static_cast<double>(u);
}

double miou(const ConfusionCounts& counts) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < counts.classes(); ++c) {
    if (counts.union_of(c) == 0) continue;
    sum += class_iou(counts, c);
    ++n;
  }
  if (n == 0) throw DataError("mIoU undefined: every class has an empty union");
  return sum / static_cast<double>(n);
}

double miou(const ConfusionCounts& counts, const std::vector<std::uint8_t>& subset) {
  if (subset.empty()) throw ConfigError("mIoU over an empty class subset");
  double sum = 0.0;
  std::size_t n = 0;
  for (auto l : subset) {
    auto it = std::find(counts.labels().begin(), counts.labels().end(), l);
    if (it == counts.labels().end()) throw ConfigError("label " + std::to_string(l) + " is not a class");
    const auto c = static_cast<std::size_t>(it - counts.labels().begin());
    if (counts.union_of(c) == 0) continue;
    sum += class_iou(counts, c);
    ++n;
  }
  if (n == 0) throw DataError("mIoU undefined: every listed class has an empty union");
  return sum / static_cast<double>(n);
}

double pix_acc(const ConfusionCounts& counts) {
  const auto total = counts.counted();
  if (total == 0) throw DataError("pixel accuracy undefined: no counted pixels");
  return static_cast<double>(counts.correct()) / static_cast<double>(total);
}

double fb_iou(const ConfusionCounts& counts, const std::vector<std::uint8_t>& foreground) {
  if (foreground.empty()) throw ConfigError("FB-IoU needs a non-empty foreground set");
  std::vector<bool> fg(counts.classes(), false);
  for (auto l : foreground) {
    auto it = std::find(counts.labels().begin(), counts.labels().end(), l);
    if (it == counts.labels().end()) throw ConfigError("foreground label " + std::to_string(l) + " is not a class");
    fg[static_cast<std::size_t>(it - counts.labels().begin())] = true;
  }
  // 2x2 collapsed matrix, index 1 = foreground
  std::uint64_t m[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t g = 0; g < counts.classes(); ++g)
    for (std::size_t p = 0; p < counts.classes(); ++p) m[fg[g]][fg[p]] += counts.at(g, p);
  double sum = 0.0;
  int n = 0;
  for (int c = 0; c < 2; ++c) {
    const std::uint64_t u = m[c][0] + m[c][1] + m[0][c] + m[1][c] - m[c][c];
    if (u == 0) continue;
    sum += static_cast<double>(m[c][c]) / static_cast<double>(u);
    ++n;
  }
  if (n == 0) throw DataError("FB-IoU undefined: no counted pixels");
  return sum / n;
}

SegReport seg_report(const ConfusionCounts& counts, const std::vector<std::uint8_t>& foreground) {
  SegReport r;
  for (std::size_t c = 0; c < counts.classes(); ++c) r.class_iou.push_back(class_iou(counts, c));
  r.miou = miou(counts);
  r.fb_iou = fb_iou(counts, foreground);
  r.pix_acc = pix_acc(counts);
  return r;
}

double round_half_up(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  const double scaled = std::round(value * scale * 1e6) / 1e6;
  return std::floor(scaled + 0.5) / scale;
}

double reported_mean(std::span<const double> values, int decimals) {
  if (values.empty()) throw DataError("mean of an empty score list");
  double sum = 0.0;
  for (double v : values) sum += v;
  return round_half_up(sum / static_cast<double>(values.size()), decimals);
}

double fold_mean(std::span<const double> per_fold, int decimals) { return reported_mean(per_fold, decimals); }

std::string normalize_answer(const std::string& answer) {
  std::string out;
  bool pending_space = false;
  for (char ch : answer) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

double vqa_item_score(const VqaItem& item, VqaMode mode) {
  const std::string pred = normalize_answer(item.prediction);
  if (mode == VqaMode::kExactMatch) {
    if (item.references.size() != 1) throw DataError("exact-match scoring needs exactly one reference");
    return pred == normalize_answer(item.references[0]) ? 1.0 : 0.0;
  }
  if (item.references.empty()) throw DataError("consensus scoring needs reference answers");
  std::size_t matches = 0;
  for (const auto& r : item.references) matches += normalize_answer(r) == pred;
  return std::min(static_cast<double>(matches) / 3.0, 1.0);
}

VqaScores vqa_accuracy(const std::vector<VqaItem>& items, VqaMode mode) {
  if (items.empty()) throw DataError("no VQA predictions to score");
  VqaScores out;
  std::map<AnswerType, double> sums;
  for (const auto& item : items) {
    const AnswerType t = parse_answer_type(item.answer_type);
    sums[t] += vqa_item_score(item, mode);
    ++out.count[t];
  }
  double total = 0.0;
  for (const auto& [t, s] : sums) {
    out.per_type[t] = s / static_cast<double>(out.count[t]);
    total += out.per_type[t];
  }
  out.mean = total / static_cast<double>(out.per_type.size());
  return out;
}

}  // namespace ub
