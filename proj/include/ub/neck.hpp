// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ub/encoder.hpp"
#include "ub/nn.hpp"
#include "ub/tensor.hpp"
#include "ub/vocab.hpp"

namespace ub {

enum class RouteKind { kImageOnly, kTextOnly, kLanguageGuidedVision, kImageToTextGen, kDeepFusion };

std::string_view route_name(RouteKind route);
RouteKind parse_route(std::string_view text);
std::vector<RouteKind> all_routes();
bool route_is_generative(RouteKind route);

// Tokens tagged with modality and position. A default-constructed sequence is
// empty and has no tensor.
struct EmbeddingSequence {
  Tensor tokens;  // [n, width]
  std::vector<Modality> tags;
  std::vector<std::size_t> positions;

  static EmbeddingSequence of(Tensor tokens, Modality modality);
  std::size_t size() const { return tags.size(); }
  bool empty() const { return tags.empty(); }
  std::size_t width() const { return empty() ? 0 : tokens.dim(1); }
};

// Image tokens first, then text tokens.
EmbeddingSequence fuse_concat(Tape& tape, const EmbeddingSequence& image, const EmbeddingSequence& text);
// Inverse of fuse_concat: contiguous image block, then text block.
std::pair<EmbeddingSequence, EmbeddingSequence> split_by_tag(Tape& tape, const EmbeddingSequence& fused);

// Generative routes: image rows see all image tokens; text token j sees every
// image token and text tokens 0..j. Every other route gets full attention.
nn::AttentionMask attention_mask(RouteKind route, std::size_t n_image, std::size_t n_text);

struct NeckConfig {
  std::vector<std::size_t> image_layers = {1, 2};
  std::size_t image_width = 32;  // per selected layer
  std::size_t text_width = 32;
  std::size_t common_width = 32;
  std::size_t fusion_layers = 2;
  std::size_t fusion_heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t max_tokens = 128;
  double seg_temperature = 0.07;

  std::size_t image_input_width() const { return image_width * image_layers.size(); }
  void validate() const;
  bool operator==(const NeckConfig&) const = default;
};

struct RouteOutput {
  Tensor pooled;            // ImageOnly / TextOnly: [1, width]
  Tensor patch_embeddings;  // LanguageGuidedVision: [n_image, width]
  Tensor class_embeddings;  // LanguageGuidedVision: [n_class, width]
  EmbeddingSequence fused;  // generative routes: full fused sequence
};

class Neck {
 public:
  Neck(NeckConfig config, std::uint64_t seed);
  Neck(Neck&&) = default;
  Neck& operator=(Neck&&) = default;
  Neck(const Neck&) = delete;
  Neck& operator=(const Neck&) = delete;
  Neck clone() const;

  const NeckConfig& config() const { return config_; }

  // Concatenates the selected image layers per token, then maps to the common width.
  EmbeddingSequence project_image(Tape& tape, std::span<const Tensor> layer_features) const;
  EmbeddingSequence project_text(Tape& tape, const Tensor& final_features) const;

  // Runs the fusion transformer over `fused` with learned modality-type
  // embeddings added, under the given mask.
  Tensor fuse(Tape& tape, const EmbeddingSequence& fused, const nn::AttentionMask* mask) const;

  // `text` holds one row per class for LanguageGuidedVision. Supplying a
  // modality the route does not take, or omitting one it needs, throws.
  RouteOutput route_forward(Tape& tape, RouteKind route, const EmbeddingSequence* image,
                            const EmbeddingSequence* text) const;

  ParamList parameters(const std::string& prefix) const;

  nn::Linear& image_projection() { return image_proj_; }
  nn::Linear& text_projection() { return text_proj_; }

 private:
  Neck() = default;

  NeckConfig config_;
  nn::Linear image_proj_;
  nn::Linear text_proj_;
  Tensor type_table_;  // [2, width]: image row, text row
  std::vector<nn::TransformerBlock> fusion_;
};

// logits[p][k] = cos(patch p, class k) / temperature. Throws on a zero-norm row.
Tensor seg_logits(Tape& tape, const Tensor& patch_embeddings, const Tensor& class_embeddings, double temperature);

// Per-patch pixel histogram over candidate classes: counts[p * classes + k] is
// the number of pixels in patch p whose label maps to candidate k. Pixels with
// `ignore` or a label outside the candidate list are skipped.
struct PatchLabelCounts {
  std::size_t patches = 0;
  std::size_t classes = 0;
  std::vector<double> counts;
  double counted = 0.0;
};

PatchLabelCounts patch_label_counts(std::span<const std::uint8_t> mask, std::size_t side, std::size_t patch,
                                    std::span<const std::uint8_t> candidate_labels, std::uint8_t ignore = 255);

// Pixel-level cross-entropy with logits upsampled by nearest-patch assignment.
Tensor seg_pixel_loss(Tape& tape, const Tensor& logits, const PatchLabelCounts& counts);

// Nearest-patch upsampling of the per-patch argmax (ties to the lowest class);
// returns candidate labels per pixel.
std::vector<std::uint8_t> upsample_argmax(const Tensor& logits, std::size_t side, std::size_t patch,
                                          std::span<const std::uint8_t> candidate_labels);

using NextLogits = std::function<Tensor(std::span<const std::size_t> generated)>;

// Greedy decoding: appends the argmax id (lowest id on ties) until EOS or
// max_len tokens. EOS is not included in the result.
std::vector<std::size_t> lm_generate(const NextLogits& next_logits, const Vocabulary& vocab, std::size_t max_len);

}  // namespace ub
