// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <set>
#include <string>
#include <vector>

#include "ub/rng.hpp"
#include "ub/splits.hpp"

namespace ub::testing {

// Disjoint, exhaustive, contiguous novel blocks for every fold of every
// divisible class count up to 36.
inline std::vector<std::string> check_fold_partitions() {
  std::vector<std::string> bad;
  for (std::size_t folds = 1; folds <= 6; ++folds) {
    for (std::size_t k = 1; k <= 6; ++k) {
      const std::size_t n = folds * k;
      std::vector<int> seen(n, 0);
      for (std::size_t f = 0; f < folds; ++f) {
        const auto s = fold_split({n, folds, f});
        const std::string where = std::to_string(n) + " classes, fold " + std::to_string(f) + "/" +
                                  std::to_string(folds);
        std::set<std::size_t> all(s.base.begin(), s.base.end());
        for (auto c : s.novel) {
          if (all.count(c)) bad.push_back(where + ": class " + std::to_string(c) + " is base and novel");
          all.insert(c);
          ++seen[c];
        }
        if (all.size() != n) bad.push_back(where + ": split does not cover every class");
        for (std::size_t i = 0; i < s.novel.size(); ++i)
          if (s.novel[i] != f * k + i) bad.push_back(where + ": novel block is not contiguous");
      }
      for (std::size_t c = 0; c < n; ++c)
        if (seen[c] != 1) bad.push_back(std::to_string(n) + " classes: class " + std::to_string(c) + " novel " +
                                        std::to_string(seen[c]) + " times");
    }
  }
  return bad;
}

inline std::vector<VqaRecord> random_vqa_corpus(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<VqaRecord> recs;
  for (std::size_t i = 0; i < n; ++i) {
    VqaRecord r;
    r.id = std::to_string(i);
    r.type = static_cast<AnswerType>(rng.index(3));
    const std::size_t nq = 1 + rng.index(5), na = 1 + rng.index(4);
    for (std::size_t k = 0; k < nq; ++k) r.question_tokens.push_back("q" + std::to_string(rng.index(60)));
    for (std::size_t k = 0; k < na; ++k) r.answer_tokens.push_back("a" + std::to_string(rng.index(40)));
    recs.push_back(std::move(r));
  }
  return recs;
}

// Compares vqa_token_split with a quadratic recount on random corpora, for
// every answer type, and checks that the base subset stays base under the
// same global counts.
inline std::vector<std::string> check_token_split_oracle(std::size_t corpora) {
  std::vector<std::string> bad;
  for (std::uint64_t seed = 0; seed < corpora; ++seed) {
    const auto recs = random_vqa_corpus(seed, 200);
    for (auto type : {AnswerType::kNumber, AnswerType::kYesNo, AnswerType::kOther}) {
      const std::string where = "corpus " + std::to_string(seed) + " " + std::string(answer_type_name(type));
      VqaSplitSpec spec = VqaSplitSpec::standard(type);
      spec.lower = 3;
      spec.upper = 7;
      const auto split = vqa_token_split(recs, spec);
      auto tokens_of = [&](const VqaRecord& r) -> const std::vector<std::string>& {
        return type == AnswerType::kOther ? r.answer_tokens : r.question_tokens;
      };
      std::set<std::size_t> expect_novel, expect_base;
      for (std::size_t i = 0; i < recs.size(); ++i) {
        if (recs[i].type != type) continue;
        bool novel = false;
        for (const auto& tok : tokens_of(recs[i])) {
          std::size_t f = 0;
          for (const auto& r : recs)
            if (r.type == type)
              for (const auto& t : tokens_of(r)) f += t == tok;
          novel = novel || (f >= spec.lower && f < spec.upper);
        }
        (novel ? expect_novel : expect_base).insert(i);
      }
      if (std::set<std::size_t>(split.novel.begin(), split.novel.end()) != expect_novel)
        bad.push_back(where + ": novel set differs from the recount");
      if (std::set<std::size_t>(split.base.begin(), split.base.end()) != expect_base)
        bad.push_back(where + ": base set differs from the recount");
      if (split.novel.size() + split.base.size() != expect_novel.size() + expect_base.size())
        bad.push_back(where + ": records duplicated or dropped");
      const auto counts = token_frequencies(recs, spec);
      std::vector<VqaRecord> base_only;
      for (auto i : split.base) base_only.push_back(recs[i]);
      if (!base_only.empty() && !vqa_token_split(base_only, spec, counts).novel.empty())
        bad.push_back(where + ": base subset turns novel under the same counts");
    }
  }
  return bad;
}

}  // namespace ub::testing
