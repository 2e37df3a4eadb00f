// SPDX-License-Identifier: Apache-2.0
#include "ub/model.hpp"

#include "ub/error.hpp"
#include "ub/rng.hpp"

namespace ub {

namespace {

NeckConfig fitted(NeckConfig neck, const EncoderStack& image, const EncoderStack& text) {
  neck.image_width = image.config().width;
  neck.text_width = text.config().width;
  return neck;
}

std::size_t require_token(std::optional<std::size_t> id, const char* name) {
  if (!id) throw ConfigError(std::string("vocabulary lacks the reserved ") + name + " token");
  return *id;
}

}  // namespace

UniModel::UniModel(EncoderStack image_stack, EncoderStack text_stack, NeckConfig neck_config, std::uint64_t seed)
    : image(std::move(image_stack)),
      text(std::move(text_stack)),
      neck(fitted(std::move(neck_config), image, text), derive_seed(seed, {1})) {
  if (image.modality() != Modality::kImage || text.modality() != Modality::kText) {
    throw ConfigError("model needs an image encoder and a text encoder");
  }
  Rng rng(derive_seed(seed, {2}));
  lm_head = nn::Linear::create(rng, neck.config().common_width, text.config().vocab_size);
}

UniModel::UniModel(EncoderStack image_stack, EncoderStack text_stack, Neck neck_, nn::Linear head)
    : image(std::move(image_stack)), text(std::move(text_stack)), neck(std::move(neck_)), lm_head(std::move(head)) {}

UniModel UniModel::clone() const { return UniModel(image.clone(), text.clone(), neck.clone(), lm_head.clone()); }

EmbeddingSequence UniModel::image_sequence(Tape& tape, const Tensor& patches) const {
  auto layers = image.encode_patches(tape, patches, neck.config().image_layers);
  return neck.project_image(tape, layers);
}

EmbeddingSequence UniModel::text_sequence(Tape& tape, std::span<const std::size_t> ids, bool causal) const {
  if (causal) {
    const auto mask = nn::AttentionMask::causal(ids.size());
    return neck.project_text(tape, text.encode_final(tape, ids, &mask));
  }
  return neck.project_text(tape, text.encode_final(tape, ids));
}

EmbeddingSequence UniModel::class_sequence(Tape& tape, std::span<const std::vector<std::size_t>> prompts) const {
  if (prompts.empty()) throw std::invalid_argument("no class prompts");
  std::vector<Tensor> rows;
  for (const auto& p : prompts) rows.push_back(tape.mean_rows(text.encode_final(tape, p)));
  Tensor pooled = rows.size() == 1 ? rows[0] : tape.concat(rows, 0);
  return neck.project_text(tape, pooled);
}

Tensor UniModel::seg_forward(Tape& tape, const Tensor& patches,
                             std::span<const std::vector<std::size_t>> prompts) const {
  EmbeddingSequence img = image_sequence(tape, patches);
  EmbeddingSequence cls = class_sequence(tape, prompts);
  RouteOutput out = neck.route_forward(tape, RouteKind::kLanguageGuidedVision, &img, &cls);
  return seg_logits(tape, out.patch_embeddings, out.class_embeddings, neck.config().seg_temperature);
}

Tensor UniModel::seg_loss(Tape& tape, const Tensor& patches, std::span<const std::uint8_t> mask,
                          std::span<const std::uint8_t> candidate_labels,
                          std::span<const std::vector<std::size_t>> prompts) const {
  if (candidate_labels.size() != prompts.size()) throw std::invalid_argument("one prompt per candidate label");
  const auto& ic = image.config();
  auto counts = patch_label_counts(mask, ic.image_side, ic.patch_size, candidate_labels);
  return seg_pixel_loss(tape, seg_forward(tape, patches, prompts), counts);
}

std::vector<std::uint8_t> UniModel::predict_mask(const Tensor& patches, std::span<const std::uint8_t> candidate_labels,
                                                 std::span<const std::vector<std::size_t>> prompts) const {
  Tape tape;
  const auto& ic = image.config();
  return upsample_argmax(seg_forward(tape, patches, prompts), ic.image_side, ic.patch_size, candidate_labels);
}

Tensor UniModel::next_token_logits(Tape& tape, RouteKind route, const Tensor& patches,
                                   std::span<const std::size_t> context) const {
  if (!route_is_generative(route)) throw std::invalid_argument("route " + std::string(route_name(route)) +
                                                               " does not generate text");
  EmbeddingSequence img = image_sequence(tape, patches);
  EmbeddingSequence txt = text_sequence(tape, context, true);
  RouteOutput out = neck.route_forward(tape, route, &img, &txt);
  const std::size_t last = out.fused.size() - 1;
  return lm_head(tape, tape.slice(out.fused.tokens, 0, last, last + 1));
}

Tensor UniModel::lm_loss(Tape& tape, RouteKind route, const Tensor& patches, std::span<const std::size_t> prefix,
                         std::span<const std::size_t> target, const Vocabulary& vocab) const {
  if (!route_is_generative(route)) throw std::invalid_argument("route " + std::string(route_name(route)) +
                                                               " does not generate text");
  const std::size_t bos = require_token(vocab.bos_id(), "<bos>");
  const std::size_t eos = require_token(vocab.eos_id(), "<eos>");
  std::vector<std::size_t> input = {bos};
  input.insert(input.end(), prefix.begin(), prefix.end());
  input.insert(input.end(), target.begin(), target.end());
  EmbeddingSequence img = image_sequence(tape, patches);
  EmbeddingSequence txt = text_sequence(tape, input, true);
  RouteOutput out = neck.route_forward(tape, route, &img, &txt);
  // the row holding the last prefix token predicts the first target token
  const std::size_t first = img.size() + prefix.size();
  std::vector<std::size_t> rows, labels(target.begin(), target.end());
  labels.push_back(eos);
  for (std::size_t i = 0; i < labels.size(); ++i) rows.push_back(first + i);
  return tape.cross_entropy(lm_head(tape, tape.gather_rows(out.fused.tokens, rows)), labels);
}

std::vector<std::size_t> UniModel::generate(RouteKind route, const Tensor& patches,
                                            std::span<const std::size_t> prefix, const Vocabulary& vocab,
                                            std::size_t max_len) const {
  const std::size_t bos = require_token(vocab.bos_id(), "<bos>");
  std::vector<std::size_t> base = {bos};
  base.insert(base.end(), prefix.begin(), prefix.end());
  auto step = [&](std::span<const std::size_t> generated) {
    std::vector<std::size_t> context = base;
    context.insert(context.end(), generated.begin(), generated.end());
    Tape tape;
    return next_token_logits(tape, route, patches, context);
  };
  return lm_generate(step, vocab, max_len);
}

Tensor UniModel::classify(Tape& tape, RouteKind route, const Tensor* patches, std::span<const std::size_t> ids,
                          const ClassifierHead& head) const {
  EmbeddingSequence img, txt;
  if (patches) img = image_sequence(tape, *patches);
  if (!ids.empty()) txt = text_sequence(tape, ids, false);
  RouteOutput out = neck.route_forward(tape, route, &img, &txt);
  if (!out.pooled.defined()) throw std::invalid_argument("route " + std::string(route_name(route)) +
                                                      " has no pooled output");
  return head.out(tape, out.pooled);
}

ParamList UniModel::encoder_parameters() const {
  ParamList out = image.parameters("image");
  for (auto& p : text.parameters("text")) out.push_back(p);
  return out;
}

ParamList UniModel::neck_parameters() const {
  ParamList out = neck.parameters("neck");
  lm_head.collect(out, "lm_head");
  return out;
}

}  // namespace ub
