// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ub/nn.hpp"
#include "ub/tensor.hpp"

namespace ub {

enum class Modality { kImage, kText };

std::string_view modality_name(Modality m);

// Shape of one transformer encoder. Defaults are the desk-scale setting.
struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t width = 32;
  std::size_t heads = 4;
  std::size_t max_tokens = 80;
  std::size_t patch_size = 4;  // image only
  std::size_t channels = 3;    // image only
  std::size_t image_side = 16; // image only
  std::size_t vocab_size = 64; // text only
  std::size_t ffn_mult = 4;

  void validate() const;
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  bool operator==(const EncoderConfig&) const = default;
};

// H x W x C image, row-major with channels innermost.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> pixels;

  double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  bool operator==(const Image&) const = default;
};

// Patches in row-major patch order; each row is a flattened p x p x C block
// (row-major within the patch, channels innermost).
struct PatchSequence {
  std::size_t patch_size = 0;
  std::size_t channels = 0;
  std::size_t grid_rows = 0;
  std::size_t grid_cols = 0;
  Tensor patches;  // [grid_rows * grid_cols, p * p * C]

  std::size_t count() const { return grid_rows * grid_cols; }
};

PatchSequence patchify(const Image& image, std::size_t patch_size);
Image unpatchify(const PatchSequence& seq);

// Transformer encoder over image patches or text tokens. Parameters are owned
// handles; copying the stack is disallowed, use clone() for an independent copy.
class EncoderStack {
 public:
  EncoderStack(Modality modality, EncoderConfig config, std::uint64_t seed);
  EncoderStack(EncoderStack&&) = default;
  EncoderStack& operator=(EncoderStack&&) = default;
  EncoderStack(const EncoderStack&) = delete;
  EncoderStack& operator=(const EncoderStack&) = delete;

  EncoderStack clone() const;

  Modality modality() const { return modality_; }
  const EncoderConfig& config() const { return config_; }

  // Linear patch projection without positions: [n, p*p*C] -> [n, width].
  Tensor project_patches(Tape& tape, const Tensor& patches) const;
  // Token table lookup without positions.
  Tensor lookup_tokens(Tape& tape, std::span<const std::size_t> ids) const;
  Tensor add_positions(Tape& tape, const Tensor& x) const;
  // Runs the blocks on embedded input and returns the outputs of the requested
  // layers (1-based, ascending). Throws on an empty or oversized input.
  std::vector<Tensor> run(Tape& tape, const Tensor& embedded, std::span<const std::size_t> layer_set,
                          const nn::AttentionMask* mask = nullptr) const;

  std::vector<Tensor> encode_patches(Tape& tape, const Tensor& patches, std::span<const std::size_t> layer_set,
                                     const nn::AttentionMask* mask = nullptr) const;
  std::vector<Tensor> encode_tokens(Tape& tape, std::span<const std::size_t> ids,
                                    std::span<const std::size_t> layer_set,
                                    const nn::AttentionMask* mask = nullptr) const;
  // Final-layer output only.
  Tensor encode_final(Tape& tape, const Tensor& patches) const;
  Tensor encode_final(Tape& tape, std::span<const std::size_t> ids, const nn::AttentionMask* mask = nullptr) const;

  ParamList parameters(const std::string& prefix) const;
  std::size_t parameter_count() const;

 private:
  EncoderStack(Modality modality, EncoderConfig config) : modality_(modality), config_(config) {}
  void check_length(std::size_t n) const;

  Modality modality_;
  EncoderConfig config_;
  nn::Linear patch_proj_;  // image
  Tensor token_table_;     // text
  Tensor positions_;       // [max_tokens, width]
  std::vector<nn::TransformerBlock> blocks_;
};

}  // namespace ub
