// SPDX-License-Identifier: Apache-2.0
#include "ub/vocab.hpp"

#include <cctype>

#include "ub/error.hpp"

namespace ub {

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], i).second) throw ConfigError("duplicate vocabulary token '" + tokens_[i] + "'");
  }
  auto unk = find(kUnkToken);
  if (!unk) throw ConfigError("vocabulary lacks the reserved <unk> token");
  unk_ = *unk;
}

Vocabulary Vocabulary::with_specials(const std::vector<std::string>& words) {
  std::vector<std::string> tokens = {std::string(kPadToken), std::string(kUnkToken), std::string(kMaskToken),
                                     std::string(kBosToken), std::string(kEosToken), std::string(kSepToken)};
  tokens.insert(tokens.end(), words.begin(), words.end());
  return Vocabulary(std::move(tokens));
}

std::optional<std::size_t> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::size_t> Vocabulary::encode(std::string_view text) const {
  std::vector<std::size_t> ids;
  for (const auto& w : split_whitespace(text)) ids.push_back(find(w).value_or(unk_));
  return ids;
}

std::string Vocabulary::decode(std::span<const std::size_t> ids) const {
  std::string out;
  for (std::size_t id : ids) {
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

}  // namespace ub
