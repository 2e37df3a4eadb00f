// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ub {

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kMaskToken = "<mask>";
inline constexpr std::string_view kBosToken = "<bos>";
inline constexpr std::string_view kEosToken = "<eos>";
inline constexpr std::string_view kSepToken = "<sep>";

// Closed vocabulary with whitespace tokenization. Unknown words map to <unk>,
// which must be present.
class Vocabulary {
 public:
  explicit Vocabulary(std::vector<std::string> tokens);
  // The six reserved tokens followed by `words`.
  static Vocabulary with_specials(const std::vector<std::string>& words);

  std::size_t size() const { return tokens_.size(); }
  std::optional<std::size_t> find(std::string_view token) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::size_t unk_id() const { return unk_; }
  std::optional<std::size_t> mask_id() const { return find(kMaskToken); }
  std::optional<std::size_t> eos_id() const { return find(kEosToken); }
  std::optional<std::size_t> bos_id() const { return find(kBosToken); }
  std::optional<std::size_t> sep_id() const { return find(kSepToken); }
  std::optional<std::size_t> pad_id() const { return find(kPadToken); }

  std::vector<std::size_t> encode(std::string_view text) const;
  std::string decode(std::span<const std::size_t> ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t unk_ = 0;
};

std::vector<std::string> split_whitespace(std::string_view text);

}  // namespace ub
