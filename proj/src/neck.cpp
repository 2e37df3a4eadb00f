// SPDX-License-Identifier: Apache-2.0
#include "ub/neck.hpp"

#include <cmath>

#include "ub/error.hpp"
#include "ub/rng.hpp"

namespace ub {

std::string_view route_name(RouteKind route) {
  switch (route) {
    case RouteKind::kImageOnly: return "image-only";
    case RouteKind::kTextOnly: return "text-only";
    case RouteKind::kLanguageGuidedVision: return "language-guided-vision";
    case RouteKind::kImageToTextGen: return "image-to-text-gen";
    case RouteKind::kDeepFusion: return "deep-fusion";
  }
  return "?";
}

std::vector<RouteKind> all_routes() {
  return {RouteKind::kImageOnly, RouteKind::kTextOnly, RouteKind::kLanguageGuidedVision, RouteKind::kImageToTextGen,
          RouteKind::kDeepFusion};
}

RouteKind parse_route(std::string_view text) {
  for (auto r : all_routes())
    if (route_name(r) == text) return r;
  throw ConfigError("unknown route '" + std::string(text) + "'");
}

bool route_is_generative(RouteKind route) {
  return route == RouteKind::kImageToTextGen || route == RouteKind::kDeepFusion;
}

EmbeddingSequence EmbeddingSequence::of(Tensor tokens, Modality modality) {
  EmbeddingSequence s;
  const std::size_t n = tokens.dim(0);
  s.tokens = std::move(tokens);
  s.tags.assign(n, modality);
  for (std::size_t i = 0; i < n; ++i) s.positions.push_back(i);
  return s;
}

EmbeddingSequence fuse_concat(Tape& tape, const EmbeddingSequence& image, const EmbeddingSequence& text) {
  if (!image.empty() && !text.empty() && image.width() != text.width()) {
    throw ShapeError("fuse: image width " + std::to_string(image.width()) + " vs text width " +
                     std::to_string(text.width()));
  }
  for (auto t : image.tags)
    if (t != Modality::kImage) throw std::invalid_argument("fuse: image block carries a text token");
  for (auto t : text.tags)
    if (t != Modality::kText) throw std::invalid_argument("fuse: text block carries an image token");
  if (image.empty()) return text;
  if (text.empty()) return image;
  EmbeddingSequence out;
  const Tensor parts[] = {image.tokens, text.tokens};
  out.tokens = tape.concat(parts, 0);
  out.tags = image.tags;
  out.tags.insert(out.tags.end(), text.tags.begin(), text.tags.end());
  out.positions = image.positions;
  out.positions.insert(out.positions.end(), text.positions.begin(), text.positions.end());
  return out;
}

std::pair<EmbeddingSequence, EmbeddingSequence> split_by_tag(Tape& tape, const EmbeddingSequence& fused) {
  std::size_t n_image = 0;
  while (n_image < fused.size() && fused.tags[n_image] == Modality::kImage) ++n_image;
  for (std::size_t i = n_image; i < fused.size(); ++i) {
    if (fused.tags[i] != Modality::kText) throw std::invalid_argument("split: image token after the text block");
  }
  auto part = [&](std::size_t b, std::size_t e) {
    EmbeddingSequence s;
    if (b == e) return s;
    s.tokens = (b == 0 && e == fused.size()) ? fused.tokens : tape.slice(fused.tokens, 0, b, e);
    s.tags.assign(fused.tags.begin() + static_cast<std::ptrdiff_t>(b), fused.tags.begin() + static_cast<std::ptrdiff_t>(e));
    s.positions.assign(fused.positions.begin() + static_cast<std::ptrdiff_t>(b),
                       fused.positions.begin() + static_cast<std::ptrdiff_t>(e));
    return s;
  };
  return {part(0, n_image), part(n_image, fused.size())};
}

nn::AttentionMask attention_mask(RouteKind route, std::size_t n_image, std::size_t n_text) {
  const std::size_t n = n_image + n_text;
  nn::AttentionMask m{n, std::vector<bool>(n * n, true)};
  if (!route_is_generative(route)) return m;
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t k = n_image; k < n; ++k) {
      // image rows never see text; text rows see text up to themselves
      m.allowed[q * n + k] = q >= n_image && k <= q;
    }
  }
  return m;
}

void NeckConfig::validate() const {
  if (image_layers.empty()) throw ConfigError("neck needs at least one image layer");
  if (fusion_layers == 0) throw ConfigError("neck needs at least one fusion layer");
  if (fusion_heads == 0 || common_width % fusion_heads != 0) {
    throw ConfigError("common width " + std::to_string(common_width) + " is not divisible by " +
                      std::to_string(fusion_heads) + " fusion heads");
  }
  if (!(seg_temperature > 0.0)) throw ConfigError("seg temperature must be positive");
}

Neck::Neck(NeckConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  image_proj_ = nn::Linear::create(rng, config_.image_input_width(), config_.common_width);
  text_proj_ = nn::Linear::create(rng, config_.text_width, config_.common_width);
  type_table_ = nn::trunc_normal_param(rng, {2, config_.common_width});
  for (std::size_t l = 0; l < config_.fusion_layers; ++l) {
    fusion_.push_back(nn::TransformerBlock::create(rng, config_.common_width, config_.fusion_heads, config_.ffn_mult));
  }
}

Neck Neck::clone() const {
  Neck out;
  out.config_ = config_;
  out.image_proj_ = image_proj_.clone();
  out.text_proj_ = text_proj_.clone();
  out.type_table_ = type_table_.clone_parameter();
  for (const auto& b : fusion_) out.fusion_.push_back(b.clone());
  return out;
}

EmbeddingSequence Neck::project_image(Tape& tape, std::span<const Tensor> layer_features) const {
  if (layer_features.size() != config_.image_layers.size()) {
    throw ShapeError("neck expects " + std::to_string(config_.image_layers.size()) + " image layers, got " +
                     std::to_string(layer_features.size()));
  }
  for (const auto& f : layer_features) {
    if (f.dim(1) != config_.image_width) {
      throw ShapeError("image feature width " + std::to_string(f.dim(1)) + " vs configured " +
                       std::to_string(config_.image_width));
    }
  }
  Tensor x = layer_features.size() == 1 ? layer_features[0] : tape.concat(layer_features, 1);
  return EmbeddingSequence::of(image_proj_(tape, x), Modality::kImage);
}

EmbeddingSequence Neck::project_text(Tape& tape, const Tensor& final_features) const {
  if (final_features.dim(1) != config_.text_width) {
    throw ShapeError("text feature width " + std::to_string(final_features.dim(1)) + " vs configured " +
                     std::to_string(config_.text_width));
  }
  return EmbeddingSequence::of(text_proj_(tape, final_features), Modality::kText);
}

Tensor Neck::fuse(Tape& tape, const EmbeddingSequence& fused, const nn::AttentionMask* mask) const {
  const std::size_t n = fused.size();
  if (n == 0) throw ShapeError("fusion: empty sequence");
  if (n > config_.max_tokens) {
    throw ShapeError("fusion: " + std::to_string(n) + " tokens exceed max-tokens " +
                     std::to_string(config_.max_tokens));
  }
  std::vector<double> onehot(n * 2, 0.0);
  for (std::size_t i = 0; i < n; ++i) onehot[i * 2 + (fused.tags[i] == Modality::kImage ? 0 : 1)] = 1.0;
  Tensor x = tape.add(fused.tokens, tape.matmul(Tensor::constant({n, 2}, std::move(onehot)), type_table_));
  for (const auto& b : fusion_) x = b(tape, x, mask);
  return x;
}

RouteOutput Neck::route_forward(Tape& tape, RouteKind route, const EmbeddingSequence* image,
                                const EmbeddingSequence* text) const {
  const bool has_image = image && !image->empty();
  const bool has_text = text && !text->empty();
  const std::string name(route_name(route));
  RouteOutput out;
  switch (route) {
    case RouteKind::kImageOnly:
      if (has_text) throw std::invalid_argument("route accepts image only");
      if (!has_image) throw std::invalid_argument("route " + name + " needs an image input");
      out.pooled = tape.mean_rows(fuse(tape, *image, nullptr));
      return out;
    case RouteKind::kTextOnly:
      if (has_image) throw std::invalid_argument("route accepts text only");
      if (!has_text) throw std::invalid_argument("route " + name + " needs a text input");
      out.pooled = tape.mean_rows(fuse(tape, *text, nullptr));
      return out;
    case RouteKind::kLanguageGuidedVision:
    case RouteKind::kImageToTextGen:
    case RouteKind::kDeepFusion:
      break;
  }
  if (!has_image || !has_text) throw std::invalid_argument("route " + name + " needs both image and text inputs");
  EmbeddingSequence seq = fuse_concat(tape, *image, *text);
  if (route == RouteKind::kLanguageGuidedVision) {
    Tensor h = fuse(tape, seq, nullptr);
    out.patch_embeddings = tape.slice(h, 0, 0, image->size());
    out.class_embeddings = tape.slice(h, 0, image->size(), seq.size());
    return out;
  }
  const auto mask = attention_mask(route, image->size(), text->size());
  seq.tokens = fuse(tape, seq, &mask);
  out.fused = std::move(seq);
  return out;
}

ParamList Neck::parameters(const std::string& prefix) const {
  ParamList out;
  image_proj_.collect(out, prefix + ".image_proj");
  text_proj_.collect(out, prefix + ".text_proj");
  out.push_back({prefix + ".type_table", type_table_});
  for (std::size_t l = 0; l < fusion_.size(); ++l) fusion_[l].collect(out, prefix + ".fusion" + std::to_string(l + 1));
  return out;
}

namespace {

void require_nonzero_rows(const Tensor& x, const char* what) {
  const std::size_t n = x.dim(0), w = x.dim(1);
  auto v = x.values();
  for (std::size_t r = 0; r < n; ++r) {
    double sq = 0.0;
    for (std::size_t j = 0; j < w; ++j) sq += v[r * w + j] * v[r * w + j];
    if (sq == 0.0) throw std::domain_error(std::string("seg logits: ") + what + " row " + std::to_string(r) +
                                           " has zero norm");
  }
}

}  // namespace

Tensor seg_logits(Tape& tape, const Tensor& patch_embeddings, const Tensor& class_embeddings, double temperature) {
  if (class_embeddings.dim(0) == 0) throw std::invalid_argument("seg logits need at least one class");
  if (patch_embeddings.dim(1) != class_embeddings.dim(1)) {
    throw ShapeError("seg logits: patch width " + std::to_string(patch_embeddings.dim(1)) + " vs class width " +
                     std::to_string(class_embeddings.dim(1)));
  }
  if (!(temperature > 0.0)) throw std::invalid_argument("seg temperature must be positive");
  require_nonzero_rows(patch_embeddings, "patch");
  require_nonzero_rows(class_embeddings, "class");
  Tensor p = tape.l2_normalize_rows(patch_embeddings);
  Tensor c = tape.l2_normalize_rows(class_embeddings);
  return tape.scale(tape.matmul(p, tape.transpose(c)), 1.0 / temperature);
}

PatchLabelCounts patch_label_counts(std::span<const std::uint8_t> mask, std::size_t side, std::size_t patch,
                                    std::span<const std::uint8_t> candidate_labels, std::uint8_t ignore) {
  if (mask.size() != side * side) {
    throw ShapeError("mask has " + std::to_string(mask.size()) + " pixels, expected " + std::to_string(side) + "x" +
                     std::to_string(side));
  }
  if (patch == 0 || side % patch != 0) throw ShapeError("patch size does not divide the mask side");
  int slot[256];
  std::fill(std::begin(slot), std::end(slot), -1);
  for (std::size_t k = 0; k < candidate_labels.size(); ++k) slot[candidate_labels[k]] = static_cast<int>(k);
  const std::size_t grid = side / patch;
  PatchLabelCounts out;
  out.patches = grid * grid;
  out.classes = candidate_labels.size();
  out.counts.assign(out.patches * out.classes, 0.0);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const std::uint8_t label = mask[y * side + x];
      if (label == ignore || slot[label] < 0) continue;
      const std::size_t p = (y / patch) * grid + x / patch;
      out.counts[p * out.classes + static_cast<std::size_t>(slot[label])] += 1.0;
      out.counted += 1.0;
    }
  }
  return out;
}

Tensor seg_pixel_loss(Tape& tape, const Tensor& logits, const PatchLabelCounts& counts) {
  if (logits.dim(0) != counts.patches || logits.dim(1) != counts.classes) {
    throw ShapeError("seg loss: logits " + shape_str(logits.shape()) + " vs " + std::to_string(counts.patches) +
                     " patches x " + std::to_string(counts.classes) + " classes");
  }
  if (counts.counted == 0.0) throw std::invalid_argument("seg loss: no labelled pixels");
  Tensor weights = Tensor::constant({counts.patches, counts.classes}, counts.counts);
  return tape.scale(tape.sum(tape.mul(tape.log_softmax(logits), weights)), -1.0 / counts.counted);
}

std::vector<std::uint8_t> upsample_argmax(const Tensor& logits, std::size_t side, std::size_t patch,
                                          std::span<const std::uint8_t> candidate_labels) {
  const std::size_t grid = side / patch, k = logits.dim(1);
  if (logits.dim(0) != grid * grid || k != candidate_labels.size()) {
    throw ShapeError("upsample: logits " + shape_str(logits.shape()) + " do not match the grid");
  }
  auto v = logits.values();
  std::vector<std::uint8_t> best(grid * grid);
  for (std::size_t p = 0; p < grid * grid; ++p) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (v[p * k + j] > v[p * k + arg]) arg = j;
    best[p] = candidate_labels[arg];
  }
  std::vector<std::uint8_t> out(side * side);
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) out[y * side + x] = best[(y / patch) * grid + x / patch];
  return out;
}

std::vector<std::size_t> lm_generate(const NextLogits& next_logits, const Vocabulary& vocab, std::size_t max_len) {
  const auto eos = vocab.eos_id();
  if (!eos) throw ConfigError("vocabulary lacks the reserved <eos> token");
  if (max_len == 0) throw std::invalid_argument("max_len must be at least 1");
  std::vector<std::size_t> out;
  while (out.size() < max_len) {
    Tensor logits = next_logits(out);
    auto v = logits.values();
    if (v.empty()) throw ShapeError("generation produced empty logits");
    std::size_t arg = 0;
    for (std::size_t j = 1; j < v.size(); ++j)
      if (v[j] > v[arg]) arg = j;
    if (arg == *eos) break;
    out.push_back(arg);
  }
  return out;
}

}  // namespace ub
