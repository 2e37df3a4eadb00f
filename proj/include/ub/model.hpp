// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ub/encoder.hpp"
#include "ub/neck.hpp"
#include "ub/pretrain.hpp"
#include "ub/vocab.hpp"

namespace ub {

// Image and text encoders, the neck, and the shared generation head.
class UniModel {
 public:
  UniModel(EncoderStack image, EncoderStack text, NeckConfig neck, std::uint64_t seed);
  UniModel(UniModel&&) = default;
  UniModel& operator=(UniModel&&) = default;
  UniModel clone() const;

  EncoderStack image;
  EncoderStack text;
  Neck neck;
  nn::Linear lm_head;  // common width -> text vocab

  EmbeddingSequence image_sequence(Tape& tape, const Tensor& patches) const;
  EmbeddingSequence text_sequence(Tape& tape, std::span<const std::size_t> ids, bool causal) const;
  // One pooled, projected row per class prompt.
  EmbeddingSequence class_sequence(Tape& tape, std::span<const std::vector<std::size_t>> prompts) const;

  // [patches, classes] cosine logits after fusion.
  Tensor seg_forward(Tape& tape, const Tensor& patches, std::span<const std::vector<std::size_t>> prompts) const;
  Tensor seg_loss(Tape& tape, const Tensor& patches, std::span<const std::uint8_t> mask,
                  std::span<const std::uint8_t> candidate_labels,
                  std::span<const std::vector<std::size_t>> prompts) const;
  std::vector<std::uint8_t> predict_mask(const Tensor& patches, std::span<const std::uint8_t> candidate_labels,
                                         std::span<const std::vector<std::size_t>> prompts) const;

  // Teacher-forced next-token loss over `target` followed by EOS, conditioned
  // on the image and on BOS + prefix.
  Tensor lm_loss(Tape& tape, RouteKind route, const Tensor& patches, std::span<const std::size_t> prefix,
                 std::span<const std::size_t> target, const Vocabulary& vocab) const;
  // Logits for the token after BOS + prefix + generated.
  Tensor next_token_logits(Tape& tape, RouteKind route, const Tensor& patches,
                           std::span<const std::size_t> context) const;
  std::vector<std::size_t> generate(RouteKind route, const Tensor& patches, std::span<const std::size_t> prefix,
                                    const Vocabulary& vocab, std::size_t max_len) const;

  Tensor classify(Tape& tape, RouteKind route, const Tensor* patches, std::span<const std::size_t> ids,
                  const ClassifierHead& head) const;

  ParamList encoder_parameters() const;
  ParamList neck_parameters() const;

 private:
  UniModel(EncoderStack image, EncoderStack text, Neck neck, nn::Linear lm_head);
};

}  // namespace ub
