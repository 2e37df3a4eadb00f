// SPDX-License-Identifier: Apache-2.0
#include "ub/splits.hpp"

#include <cctype>
#include <fstream>
#include <unordered_map>

#include "json.hpp"
#include "ub/error.hpp"
#include "ub/vocab.hpp"

namespace ub {

void ClassFoldSpec::validate() const {
  if (n_folds == 0 || n_classes == 0 || n_classes % n_folds != 0) {
    throw ConfigError(std::to_string(n_classes) + " classes do not split into " + std::to_string(n_folds) + " folds");
  }
  if (fold >= n_folds) {
    throw ConfigError("fold " + std::to_string(fold) + " outside 0.." + std::to_string(n_folds - 1));
  }
}

FoldSplit fold_split(const ClassFoldSpec& spec) {
  spec.validate();
  const std::size_t k = spec.n_classes / spec.n_folds;
  FoldSplit out;
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    (c / k == spec.fold ? out.novel : out.base).push_back(c);
  }
  return out;
}

std::string_view answer_type_name(AnswerType type) {
  switch (type) {
    case AnswerType::kNumber: return "number";
    case AnswerType::kYesNo: return "yes/no";
    case AnswerType::kOther: return "other";
  }
  return "?";
}

AnswerType parse_answer_type(std::string_view text) {
  for (auto t : {AnswerType::kNumber, AnswerType::kYesNo, AnswerType::kOther})
    if (answer_type_name(t) == text) return t;
  throw DataError("unknown answer type '" + std::string(text) + "'");
}

VqaSplitSpec VqaSplitSpec::standard(AnswerType type) {
  return {type, 10, 40, type == AnswerType::kOther ? TokenSource::kAnswers : TokenSource::kQuestion};
}

void VqaSplitSpec::validate() const {
  if (lower >= upper) throw ConfigError("frequency bounds need lower < upper");
}

namespace {

const std::vector<std::string>& source_tokens(const VqaRecord& r, TokenSource source) {
  return source == TokenSource::kQuestion ? r.question_tokens : r.answer_tokens;
}

}  // namespace

FrequencyTable token_frequencies(const std::vector<VqaRecord>& records, const VqaSplitSpec& spec) {
  FrequencyTable counts;
  for (const auto& r : records) {
    if (r.type != spec.type) continue;
    for (const auto& t : source_tokens(r, spec.source)) ++counts[t];
  }
  return counts;
}

VqaSplit vqa_token_split(const std::vector<VqaRecord>& records, const VqaSplitSpec& spec,
                         const FrequencyTable& counts) {
  spec.validate();
  if (records.empty()) throw DataError("vqa split: empty record set");
  VqaSplit out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].type != spec.type) continue;
    bool novel = false;
    for (const auto& t : source_tokens(records[i], spec.source)) {
      auto it = counts.find(t);
      const std::size_t f = it == counts.end() ? 0 : it->second;
      if (f >= spec.lower && f < spec.upper) {
        novel = true;
        break;
      }
    }
    (novel ? out.novel : out.base).push_back(i);
  }
  return out;
}

VqaSplit vqa_token_split(const std::vector<VqaRecord>& records, const VqaSplitSpec& spec) {
  return vqa_token_split(records, spec, token_frequencies(records, spec));
}

std::vector<std::string> vqa_tokenize(std::string_view text) {
  std::string clean;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || ch == '-' || ch == '\'') clean += static_cast<char>(std::tolower(c));
    else clean += ' ';
  }
  return split_whitespace(clean);
}

std::vector<VqaRecord> load_vqa_v2(const std::string& questions_path, const std::string& annotations_path) {
  auto read = [](const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    try {
      return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("'" + path + "' is not valid JSON: " + e.what());
    }
  };
  const auto questions = read(questions_path);
  const auto annotations = read(annotations_path);
  std::unordered_map<long long, std::string> text_by_id;
  try {
    for (const auto& q : questions.at("questions")) {
      text_by_id[q.at("question_id").get<long long>()] = q.at("question").get<std::string>();
    }
    std::vector<VqaRecord> out;
    for (const auto& a : annotations.at("annotations")) {
      const auto qid = a.at("question_id").get<long long>();
      auto it = text_by_id.find(qid);
      if (it == text_by_id.end()) throw DataError("annotation for unknown question " + std::to_string(qid));
      VqaRecord r;
      r.id = std::to_string(qid);
      r.type = parse_answer_type(a.at("answer_type").get<std::string>());
      r.question_tokens = vqa_tokenize(it->second);
      for (const auto& ans : a.at("answers")) {
        for (auto& t : vqa_tokenize(ans.at("answer").get<std::string>())) r.answer_tokens.push_back(std::move(t));
      }
      out.push_back(std::move(r));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("unexpected VQA annotation layout: ") + e.what());
  }
}

}  // namespace ub
