// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ub/metrics.hpp"
#include "ub/rng.hpp"

namespace ub::testing {

struct MaskPair {
  std::vector<std::uint8_t> labels;
  std::vector<std::uint8_t> pred, gt;
};

// 8x8 masks over 2-5 labels drawn from 0..9, about 10% ignore pixels in gt.
inline MaskPair random_mask_pair(std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x3e7}));
  MaskPair m;
  const std::size_t k = 2 + rng.index(4);
  for (auto i : rng.sample_without_replacement(10, k)) m.labels.push_back(static_cast<std::uint8_t>(i));
  for (int p = 0; p < 64; ++p) {
    m.pred.push_back(m.labels[rng.index(k)]);
    m.gt.push_back(rng.uniform() < 0.1 ? std::uint8_t{255} : m.labels[rng.index(k)]);
  }
  return m;
}

// Per-pixel recomputation of every score straight from the two masks.
struct OracleScores {
  std::vector<double> iou;  // NaN for empty unions
  double miou = 0.0, pix_acc = 0.0, fb_iou = 0.0;
};

inline OracleScores oracle_scores(const MaskPair& m, const std::vector<std::uint8_t>& fg) {
  OracleScores o;
  auto is_fg = [&](std::uint8_t l) { return std::find(fg.begin(), fg.end(), l) != fg.end(); };
  double sum = 0.0;
  int used = 0;
  for (auto c : m.labels) {
    int inter = 0, uni = 0;
    for (std::size_t i = 0; i < m.gt.size(); ++i) {
      if (m.gt[i] == 255) continue;
      const bool p = m.pred[i] == c, g = m.gt[i] == c;
      inter += p && g;
      uni += p || g;
    }
    o.iou.push_back(uni ? static_cast<double>(inter) / uni : std::nan(""));
    if (uni) {
      sum += static_cast<double>(inter) / uni;
      ++used;
    }
  }
  o.miou = sum / used;
  int correct = 0, total = 0;
  for (std::size_t i = 0; i < m.gt.size(); ++i) {
    if (m.gt[i] == 255) continue;
    ++total;
    correct += m.pred[i] == m.gt[i];
  }
  o.pix_acc = static_cast<double>(correct) / total;
  double fb = 0.0;
  int parts = 0;
  for (bool side : {false, true}) {
    int inter = 0, uni = 0;
    for (std::size_t i = 0; i < m.gt.size(); ++i) {
      if (m.gt[i] == 255) continue;
      const bool p = is_fg(m.pred[i]) == side, g = is_fg(m.gt[i]) == side;
      inter += p && g;
      uni += p || g;
    }
    if (uni) {
      fb += static_cast<double>(inter) / uni;
      ++parts;
    }
  }
  o.fb_iou = fb / parts;
  return o;
}

inline bool close(double a, double b) { return (std::isnan(a) && std::isnan(b)) || std::abs(a - b) <= 1e-12; }

// Checks counts and scores for `cases` random pairs against the oracle, plus
// additivity and relabel invariance. Returns the failures.
inline std::vector<std::string> check_metric_oracle(std::size_t cases) {
  std::vector<std::string> bad;
  for (std::uint64_t s = 0; s < cases; ++s) {
    const auto m = random_mask_pair(s);
    const std::vector<std::uint8_t> fg(m.labels.begin() + 1, m.labels.end());
    ConfusionCounts counts(m.labels);
    accumulate(counts, m.pred, m.gt);
    const auto o = oracle_scores(m, fg);
    const std::string tag = "case " + std::to_string(s) + ": ";
    for (std::size_t c = 0; c < m.labels.size(); ++c) {
      if (!close(class_iou(counts, c), o.iou[c])) bad.push_back(tag + "class IoU differs");
      std::uint64_t p = 0, g = 0, i = 0;
      for (std::size_t px = 0; px < m.gt.size(); ++px) {
        if (m.gt[px] == 255) continue;
        p += m.pred[px] == m.labels[c];
        g += m.gt[px] == m.labels[c];
        i += m.pred[px] == m.labels[c] && m.gt[px] == m.labels[c];
      }
      if (counts.predicted(c) != p || counts.ground_truth(c) != g || counts.intersection(c) != i) {
        bad.push_back(tag + "raw counts differ");
      }
      if (counts.intersection(c) > counts.union_of(c)) bad.push_back(tag + "intersection above union");
    }
    if (!close(miou(counts), o.miou)) bad.push_back(tag + "mIoU differs");
    if (!close(pix_acc(counts), o.pix_acc)) bad.push_back(tag + "pixAcc differs");
    if (!close(fb_iou(counts, fg), o.fb_iou)) bad.push_back(tag + "FB-IoU differs");

    // additivity: split the pixels into two streams
    ConfusionCounts a(m.labels), b(m.labels);
    const std::size_t cut = 1 + s % 63;
    accumulate(a, std::span(m.pred).first(cut), std::span(m.gt).first(cut));
    accumulate(b, std::span(m.pred).subspan(cut), std::span(m.gt).subspan(cut));
    a += b;
    if (!(a == counts)) bad.push_back(tag + "split accumulation differs");

    // relabel with a permutation of 0..254
    Rng rng(derive_seed(s, {0x9e1}));
    std::vector<std::uint8_t> perm(255);
    for (std::size_t i = 0; i < 255; ++i) perm[i] = static_cast<std::uint8_t>(i);
    rng.shuffle(perm);
    auto map = [&](std::uint8_t l) { return l == 255 ? l : perm[l]; };
    MaskPair r = m;
    for (auto& l : r.labels) l = map(l);
    for (auto& l : r.pred) l = map(l);
    for (auto& l : r.gt) l = map(l);
    ConfusionCounts rc(r.labels);
    accumulate(rc, r.pred, r.gt);
    if (!close(miou(rc), miou(counts))) bad.push_back(tag + "mIoU changed under relabeling");
  }
  return bad;
}

// Fold and per-type means printed in the reference tables.
inline std::vector<std::string> check_reference_means() {
  std::vector<std::string> bad;
  struct Row {
    std::vector<double> values;
    double mean;
  };
  const std::vector<Row> rows = {
      {{67.3, 65.1, 46.7, 47.3}, 56.6},
      {{68.7, 67.1, 49.0, 50.4}, 58.8},
      {{30.4, 31.8, 35.7, 33.5}, 32.9},
      {{31.0, 33.2, 35.9, 33.6}, 33.4},
      {{34.1, 75.9, 26.0}, 45.3},
  };
  for (const auto& r : rows) {
    const double got = fold_mean(r.values);
    if (std::abs(got - r.mean) > 1e-9) {
      bad.push_back("mean of row ending " + std::to_string(r.values.back()) + " gave " + std::to_string(got));
    }
  }
  return bad;
}

}  // namespace ub::testing
