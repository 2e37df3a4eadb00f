// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ub/encoder.hpp"
#include "ub/optim.hpp"
#include "ub/vocab.hpp"

namespace ub {

enum class PretrainMode { kSupervised, kPairContrastive, kMaskedUnimodal };

std::string_view pretrain_mode_name(PretrainMode mode);
PretrainMode parse_pretrain_mode(std::string_view text);

// ceil(ratio * n); throws when the ratio is outside (0, 1) or masks nothing.
std::size_t masked_count(std::size_t n, double ratio);
// Sorted positions drawn uniformly without replacement.
std::vector<std::size_t> sample_mask_positions(std::size_t n, double ratio, std::uint64_t seed);

// Learned mask embedding plus a linear pixel decoder.
struct MimHead {
  Tensor mask_token;  // [1, width]
  nn::Linear decoder; // width -> patch_dim

  static MimHead create(Rng& rng, const EncoderConfig& config);
  MimHead clone() const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct MlmHead {
  nn::Linear out;  // width -> vocab

  static MlmHead create(Rng& rng, const EncoderConfig& config);
  MlmHead clone() const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct ClassifierHead {
  nn::Linear out;  // width -> classes

  static ClassifierHead create(Rng& rng, std::size_t width, std::size_t classes);
  std::size_t classes() const { return out.weight.dim(1); }
  ClassifierHead clone() const;
  void collect(ParamList& out, const std::string& prefix) const;
};

// Mean squared reconstruction error over masked patches only. `targets` has the
// shape of `patches`; rows that are not masked never enter the loss.
Tensor mim_loss(Tape& tape, const EncoderStack& stack, const MimHead& head, const Tensor& patches,
                const Tensor& targets, double ratio, std::uint64_t seed);
Tensor mim_loss(Tape& tape, const EncoderStack& stack, const MimHead& head, const Tensor& patches, double ratio,
                std::uint64_t seed);

// Cross-entropy of the original ids at masked positions, inputs replaced by <mask>.
Tensor mlm_loss(Tape& tape, const EncoderStack& stack, const MlmHead& head, const Vocabulary& vocab,
                std::span<const std::size_t> ids, double ratio, std::uint64_t seed);
// Same objective with prediction targets given separately from the inputs.
Tensor mlm_loss(Tape& tape, const EncoderStack& stack, const MlmHead& head, const Vocabulary& vocab,
                std::span<const std::size_t> ids, std::span<const std::size_t> targets, double ratio,
                std::uint64_t seed);

// Symmetric cross-entropy over the scaled cosine matrix of pooled rows.
// Row i of each input is one sample.
Tensor info_nce(Tape& tape, const Tensor& image_vectors, const Tensor& text_vectors, double temperature);

struct PairRef {
  const Tensor* patches;
  std::span<const std::size_t> ids;
};

Tensor contrastive_loss(Tape& tape, const EncoderStack& image_stack, const EncoderStack& text_stack,
                        std::span<const PairRef> batch, double temperature);

Tensor classifier_logits(Tape& tape, const EncoderStack& stack, const ClassifierHead& head, const Tensor& patches);
Tensor supervised_cls_loss(Tape& tape, const EncoderStack& stack, const ClassifierHead& head, const Tensor& patches,
                           std::size_t label);

struct PretrainCorpora {
  std::vector<Tensor> images;                      // patch tensors
  std::vector<std::vector<std::size_t>> texts;     // token ids
  std::vector<std::size_t> labels;                 // aligned with images (Supervised)
  std::vector<Tensor> pair_images;                 // aligned with pair_texts (PairContrastive)
  std::vector<std::vector<std::size_t>> pair_texts;
};

struct PretrainHyper {
  double mim_ratio = 0.75;
  double mlm_ratio = 0.15;
  double temperature = 0.07;
  std::size_t batch_size = 8;
  std::size_t num_classes = 0;  // Supervised only
  std::size_t probe_size = 16;
  LrSchedule schedule{};
  double weight_decay = 0.01;
};

struct LossTrace {
  std::string name;
  std::vector<double> steps;
  double probe_initial = 0.0;
  double probe_final = 0.0;
};

struct PretrainResult {
  EncoderStack image;
  EncoderStack text;
  std::vector<LossTrace> traces;
};

// Trains encoders in the given regime. Supervised touches only the image stack;
// MaskedUnimodal trains both stacks independently on their own corpora.
PretrainResult pretrain_run(PretrainMode mode, const PretrainCorpora& corpora, const EncoderConfig& image_config,
                            const EncoderConfig& text_config, const Vocabulary& vocab, const PretrainHyper& hyper,
                            std::size_t steps, std::uint64_t seed);

}  // namespace ub
