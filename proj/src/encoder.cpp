// SPDX-License-Identifier: Apache-2.0
#include "ub/encoder.hpp"

#include <algorithm>

#include "ub/error.hpp"

namespace ub {

std::string_view modality_name(Modality m) { return m == Modality::kImage ? "image" : "text"; }

void EncoderConfig::validate() const {
  if (layers == 0) throw ConfigError("encoder needs at least one layer");
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("encoder width " + std::to_string(width) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  if (patch_size == 0 || image_side % patch_size != 0) {
    throw ConfigError("patch size " + std::to_string(patch_size) + " does not divide image side " +
                      std::to_string(image_side));
  }
  if (max_tokens == 0) throw ConfigError("max_tokens must be positive");
}

PatchSequence patchify(const Image& image, std::size_t p) {
  if (p == 0 || image.height % p != 0 || image.width % p != 0) {
    throw ShapeError("patch size " + std::to_string(p) + " does not divide image " + std::to_string(image.height) +
                     "x" + std::to_string(image.width));
  }
  const std::size_t C = image.channels;
  PatchSequence seq;
  seq.patch_size = p;
  seq.channels = C;
  seq.grid_rows = image.height / p;
  seq.grid_cols = image.width / p;
  const std::size_t dim = p * p * C;
  std::vector<double> v(seq.count() * dim);
  for (std::size_t gr = 0; gr < seq.grid_rows; ++gr) {
    for (std::size_t gc = 0; gc < seq.grid_cols; ++gc) {
      double* out = v.data() + (gr * seq.grid_cols + gc) * dim;
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x)
          for (std::size_t c = 0; c < C; ++c) *out++ = image.at(gr * p + y, gc * p + x, c);
    }
  }
  seq.patches = Tensor::constant({seq.count(), dim}, std::move(v));
  return seq;
}

Image unpatchify(const PatchSequence& seq) {
  const std::size_t p = seq.patch_size, C = seq.channels, dim = p * p * C;
  Image img{seq.grid_rows * p, seq.grid_cols * p, C, {}};
  img.pixels.assign(img.height * img.width * C, 0.0);
  auto v = seq.patches.values();
  for (std::size_t gr = 0; gr < seq.grid_rows; ++gr) {
    for (std::size_t gc = 0; gc < seq.grid_cols; ++gc) {
      const double* in = v.data() + (gr * seq.grid_cols + gc) * dim;
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x)
          for (std::size_t c = 0; c < C; ++c) img.at(gr * p + y, gc * p + x, c) = *in++;
    }
  }
  return img;
}

EncoderStack::EncoderStack(Modality modality, EncoderConfig config, std::uint64_t seed)
    : modality_(modality), config_(config) {
  config_.validate();
  Rng rng(seed);
  if (modality_ == Modality::kImage) {
    patch_proj_ = nn::Linear::create(rng, config_.patch_dim(), config_.width);
  } else {
    token_table_ = nn::trunc_normal_param(rng, {config_.vocab_size, config_.width});
  }
  positions_ = nn::trunc_normal_param(rng, {config_.max_tokens, config_.width});
  for (std::size_t l = 0; l < config_.layers; ++l) {
    blocks_.push_back(nn::TransformerBlock::create(rng, config_.width, config_.heads, config_.ffn_mult));
  }
}

EncoderStack EncoderStack::clone() const {
  EncoderStack out(modality_, config_);
  if (modality_ == Modality::kImage) {
    out.patch_proj_ = patch_proj_.clone();
  } else {
    out.token_table_ = token_table_.clone_parameter();
  }
  out.positions_ = positions_.clone_parameter();
  for (const auto& b : blocks_) out.blocks_.push_back(b.clone());
  return out;
}

void EncoderStack::check_length(std::size_t n) const {
  if (n == 0) throw ShapeError("encode: empty input");
  if (n > config_.max_tokens) {
    throw ShapeError("encode: " + std::to_string(n) + " tokens exceed max-tokens " +
                     std::to_string(config_.max_tokens));
  }
}

Tensor EncoderStack::project_patches(Tape& tape, const Tensor& patches) const {
  if (modality_ != Modality::kImage) throw std::logic_error("text encoder cannot embed patches");
  check_length(patches.dim(0));
  if (patches.dim(1) != config_.patch_dim()) {
    throw ShapeError("patch width " + std::to_string(patches.dim(1)) + " != expected " +
                     std::to_string(config_.patch_dim()));
  }
  return patch_proj_(tape, patches);
}

Tensor EncoderStack::lookup_tokens(Tape& tape, std::span<const std::size_t> ids) const {
  if (modality_ != Modality::kText) throw std::logic_error("image encoder cannot embed tokens");
  check_length(ids.size());
  return tape.embedding(token_table_, ids);
}

Tensor EncoderStack::add_positions(Tape& tape, const Tensor& x) const {
  check_length(x.dim(0));
  return tape.add(x, tape.slice(positions_, 0, 0, x.dim(0)));
}

std::vector<Tensor> EncoderStack::run(Tape& tape, const Tensor& embedded, std::span<const std::size_t> layer_set,
                                      const nn::AttentionMask* mask) const {
  check_length(embedded.dim(0));
  if (layer_set.empty()) throw std::invalid_argument("encode: empty layer set");
  for (std::size_t i = 0; i < layer_set.size(); ++i) {
    if (layer_set[i] == 0 || layer_set[i] > blocks_.size()) {
      throw std::invalid_argument("encode: layer " + std::to_string(layer_set[i]) + " outside 1.." +
                                  std::to_string(blocks_.size()));
    }
    if (i && layer_set[i] <= layer_set[i - 1]) throw std::invalid_argument("encode: layer set must be ascending");
  }
  std::vector<Tensor> out;
  Tensor x = embedded;
  const std::size_t last = layer_set.back();
  std::size_t next = 0;
  for (std::size_t l = 1; l <= last; ++l) {
    x = blocks_[l - 1](tape, x, mask);
    if (layer_set[next] == l) {
      out.push_back(x);
      ++next;
    }
  }
  return out;
}

std::vector<Tensor> EncoderStack::encode_patches(Tape& tape, const Tensor& patches,
                                                 std::span<const std::size_t> layer_set,
                                                 const nn::AttentionMask* mask) const {
  return run(tape, add_positions(tape, project_patches(tape, patches)), layer_set, mask);
}

std::vector<Tensor> EncoderStack::encode_tokens(Tape& tape, std::span<const std::size_t> ids,
                                                std::span<const std::size_t> layer_set,
                                                const nn::AttentionMask* mask) const {
  return run(tape, add_positions(tape, lookup_tokens(tape, ids)), layer_set, mask);
}

Tensor EncoderStack::encode_final(Tape& tape, const Tensor& patches) const {
  const std::size_t last[] = {config_.layers};
  return encode_patches(tape, patches, last).back();
}

Tensor EncoderStack::encode_final(Tape& tape, std::span<const std::size_t> ids, const nn::AttentionMask* mask) const {
  const std::size_t last[] = {config_.layers};
  return encode_tokens(tape, ids, last, mask).back();
}

ParamList EncoderStack::parameters(const std::string& prefix) const {
  ParamList out;
  if (modality_ == Modality::kImage) {
    patch_proj_.collect(out, prefix + ".patch_proj");
  } else {
    out.push_back({prefix + ".token_table", token_table_});
  }
  out.push_back({prefix + ".positions", positions_});
  for (std::size_t l = 0; l < blocks_.size(); ++l) blocks_[l].collect(out, prefix + ".block" + std::to_string(l + 1));
  return out;
}

std::size_t EncoderStack::parameter_count() const { return nn::count_parameters(parameters("p")); }

}  // namespace ub
