// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace ub {

struct ClassFoldSpec {
  std::size_t n_classes = 20;
  std::size_t n_folds = 4;
  std::size_t fold = 0;

  void validate() const;
};

struct FoldSplit {
  std::vector<std::size_t> base;
  std::vector<std::size_t> novel;
};

// Novel = the fold's contiguous block of n_classes / n_folds classes.
FoldSplit fold_split(const ClassFoldSpec& spec);

enum class AnswerType { kNumber, kYesNo, kOther };

std::string_view answer_type_name(AnswerType type);
AnswerType parse_answer_type(std::string_view text);

enum class TokenSource { kQuestion, kAnswers };

struct VqaSplitSpec {
  AnswerType type = AnswerType::kNumber;
  std::size_t lower = 10;  // inclusive
  std::size_t upper = 40;  // exclusive
  TokenSource source = TokenSource::kQuestion;

  // Question tokens for number and yes/no, answer tokens for other.
  static VqaSplitSpec standard(AnswerType type);
  void validate() const;
};

struct VqaRecord {
  std::string id;
  AnswerType type = AnswerType::kOther;
  std::vector<std::string> question_tokens;
  std::vector<std::string> answer_tokens;  // tokens of every reference answer
};

using FrequencyTable = std::map<std::string, std::size_t>;

// Occurrence counts of the spec's source tokens over records of the spec's type.
FrequencyTable token_frequencies(const std::vector<VqaRecord>& records, const VqaSplitSpec& spec);

struct VqaSplit {
  std::vector<std::size_t> base;   // indices into the records
  std::vector<std::size_t> novel;
};

// Records of the spec's type are novel when any source token has a frequency
// in [lower, upper); other types are left out. Frequencies come from
// `counts` (typically computed on the training split).
VqaSplit vqa_token_split(const std::vector<VqaRecord>& records, const VqaSplitSpec& spec,
                         const FrequencyTable& counts);
// Counts on `records` themselves.
VqaSplit vqa_token_split(const std::vector<VqaRecord>& records, const VqaSplitSpec& spec);

// Lowercase, strip punctuation except hyphens and apostrophes, split on spaces.
std::vector<std::string> vqa_tokenize(std::string_view text);

// Joins VQA v2.0 question and annotation files by question id.
std::vector<VqaRecord> load_vqa_v2(const std::string& questions_path, const std::string& annotations_path);

}  // namespace ub
