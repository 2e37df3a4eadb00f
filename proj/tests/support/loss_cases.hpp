// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ub/gradcheck.hpp"
#include "ub/model.hpp"
#include "ub/pretrain.hpp"
#include "ub/rng.hpp"

namespace ub::testing {

inline Tensor normal_patches(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x70a7}));
  std::vector<double> v(n * dim);
  for (auto& x : v) x = rng.normal();
  return Tensor::constant({n, dim}, std::move(v));
}

enum class LossKind { kMaskedImage, kMaskedText, kContrastive, kClassification, kSegmentation, kLanguageModel };

inline std::vector<LossKind> pretrain_loss_kinds() {
  return {LossKind::kMaskedImage, LossKind::kMaskedText, LossKind::kContrastive, LossKind::kClassification};
}

inline std::vector<LossKind> neck_loss_kinds() { return {LossKind::kSegmentation, LossKind::kLanguageModel}; }

inline std::vector<LossKind> all_loss_kinds() {
  auto out = pretrain_loss_kinds();
  for (auto k : neck_loss_kinds()) out.push_back(k);
  return out;
}

// Small enough that every parameter can be perturbed.
inline EncoderConfig tiny_config() {
  EncoderConfig c;
  c.layers = 1;
  c.width = 8;
  c.heads = 2;
  c.max_tokens = 8;
  c.patch_size = 2;
  c.channels = 1;
  c.image_side = 4;
  c.vocab_size = 12;
  c.ffn_mult = 2;
  return c;
}

// A loss closure over a model it keeps alive, with the model's parameters as
// the perturbed inputs.
struct LossCase {
  std::string name;
  LossFn fn;
  std::vector<Tensor> inputs;
};

inline Vocabulary tiny_vocab() { return Vocabulary::with_specials({"a", "b", "c", "d", "e", "f"}); }

inline std::vector<Tensor> tensors_of(const ParamList& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

inline constexpr double kWiden = 40.0;
// Scales embedding tables and modality projections so residual rows sit well
// away from zero norm and zero variance.
inline void widen_embeddings(const ParamList& params, double factor) {
  for (const auto& p : params) {
    const auto& n = p.name;
    auto ends = [&](std::string_view suffix) {
      return n.size() >= suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (ends("token_table") || ends("positions") || ends("patch_proj.weight") || ends("image_proj.weight") ||
        ends("text_proj.weight") || ends("type_table") || ends("mask_token")) {
      Tensor t = p.tensor;
      for (auto& v : t.mutable_values()) v *= factor;
    }
  }
}

inline NeckConfig tiny_neck() {
  NeckConfig n;
  n.image_layers = {1};
  n.image_width = 8;
  n.text_width = 8;
  n.common_width = 8;
  n.fusion_layers = 1;
  n.fusion_heads = 2;
  n.ffn_mult = 2;
  n.max_tokens = 16;
  n.seg_temperature = 0.5;
  return n;
}

inline std::vector<std::size_t> random_ids(Rng& rng, std::size_t n, std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> ids(n);
  for (auto& id : ids) id = lo + rng.index(hi - lo);
  return ids;
}

inline LossCase make_loss_case(LossKind kind, std::uint64_t seed) {
  const EncoderConfig c = tiny_config();
  Rng rng(derive_seed(seed, {0x1055}));
  switch (kind) {
    case LossKind::kMaskedImage: {
      struct M {
        EncoderStack stack;
        MimHead head;
        Tensor patches;
      };
      auto m = std::make_shared<M>(M{EncoderStack(Modality::kImage, c, seed), MimHead::create(rng, c),
                                     normal_patches(4, c.patch_dim(), seed)});
      ParamList params = m->stack.parameters("image");
      m->head.collect(params, "mim");
      widen_embeddings(params, kWiden);
      return {"masked-image", [m, seed](Tape& t, std::span<const Tensor>) {
                return mim_loss(t, m->stack, m->head, m->patches, 0.75, seed);
              },
              tensors_of(params)};
    }
    case LossKind::kMaskedText: {
      struct M {
        EncoderStack stack;
        MlmHead head;
        Vocabulary vocab;
        std::vector<std::size_t> ids;
      };
      auto m = std::make_shared<M>(M{EncoderStack(Modality::kText, c, seed), MlmHead::create(rng, c), tiny_vocab(),
                                     random_ids(rng, 6, 6, 12)});
      ParamList params = m->stack.parameters("text");
      m->head.collect(params, "mlm");
      widen_embeddings(params, kWiden);
      return {"masked-text", [m, seed](Tape& t, std::span<const Tensor>) {
                return mlm_loss(t, m->stack, m->head, m->vocab, m->ids, 0.3, seed);
              },
              tensors_of(params)};
    }
    case LossKind::kContrastive: {
      struct M {
        EncoderStack image;
        EncoderStack text;
        std::vector<Tensor> patches;
        std::vector<std::vector<std::size_t>> ids;
      };
      auto m = std::make_shared<M>(M{EncoderStack(Modality::kImage, c, seed),
                                     EncoderStack(Modality::kText, c, seed + 1), {}, {}});
      for (std::size_t i = 0; i < 3; ++i) {
        m->patches.push_back(normal_patches(4, c.patch_dim(), seed * 10 + i));
        m->ids.push_back(random_ids(rng, 3 + i, 6, 12));
      }
      ParamList params = m->image.parameters("image");
      for (auto& p : m->text.parameters("text")) params.push_back(p);
      widen_embeddings(params, kWiden);
      return {"contrastive", [m](Tape& t, std::span<const Tensor>) {
                std::vector<PairRef> refs;
                for (std::size_t i = 0; i < m->patches.size(); ++i) refs.push_back({&m->patches[i], m->ids[i]});
                return contrastive_loss(t, m->image, m->text, refs, 0.5);
              },
              tensors_of(params)};
    }
    case LossKind::kClassification: {
      struct M {
        EncoderStack stack;
        ClassifierHead head;
        Tensor patches;
      };
      auto m = std::make_shared<M>(M{EncoderStack(Modality::kImage, c, seed), ClassifierHead::create(rng, c.width, 5),
                                     normal_patches(4, c.patch_dim(), seed)});
      ParamList params = m->stack.parameters("image");
      m->head.collect(params, "cls");
      widen_embeddings(params, kWiden);
      const std::size_t label = seed % 5;
      return {"classification", [m, label](Tape& t, std::span<const Tensor>) {
                return supervised_cls_loss(t, m->stack, m->head, m->patches, label);
              },
              tensors_of(params)};
    }
    case LossKind::kSegmentation: {
      struct M {
        UniModel model;
        Tensor patches;
        std::vector<std::uint8_t> mask;
        std::vector<std::vector<std::size_t>> prompts;
      };
      auto m = std::make_shared<M>(M{UniModel(EncoderStack(Modality::kImage, c, seed),
                                              EncoderStack(Modality::kText, c, seed + 1), tiny_neck(), seed + 2),
                                     normal_patches(4, c.patch_dim(), seed), {}, {}});
      const std::uint8_t labels[] = {0, 1, 2, 255};
      for (std::size_t i = 0; i < 16; ++i) m->mask.push_back(labels[rng.index(4)]);
      for (std::size_t k = 0; k < 3; ++k) m->prompts.push_back(random_ids(rng, 1 + k % 2, 6, 12));
      ParamList params = m->model.encoder_parameters();
      for (auto& p : m->model.neck_parameters()) params.push_back(p);
      widen_embeddings(params, kWiden);
      return {"segmentation", [m](Tape& t, std::span<const Tensor>) {
                const std::uint8_t candidates[] = {0, 1, 2};
                return m->model.seg_loss(t, m->patches, m->mask, candidates, m->prompts);
              },
              tensors_of(params)};
    }
    case LossKind::kLanguageModel: {
      struct M {
        UniModel model;
        Tensor patches;
        Vocabulary vocab;
        std::vector<std::size_t> prefix;
        std::vector<std::size_t> target;
      };
      auto m = std::make_shared<M>(M{UniModel(EncoderStack(Modality::kImage, c, seed),
                                              EncoderStack(Modality::kText, c, seed + 1), tiny_neck(), seed + 2),
                                     normal_patches(4, c.patch_dim(), seed), tiny_vocab(),
                                     random_ids(rng, 1 + seed % 2, 6, 12), random_ids(rng, 2, 6, 12)});
      ParamList params = m->model.encoder_parameters();
      for (auto& p : m->model.neck_parameters()) params.push_back(p);
      widen_embeddings(params, kWiden);
      const RouteKind route = seed % 2 ? RouteKind::kDeepFusion : RouteKind::kImageToTextGen;
      return {"language-model", [m, route](Tape& t, std::span<const Tensor>) {
                return m->model.lm_loss(t, route, m->patches, m->prefix, m->target, m->vocab);
              },
              tensors_of(params)};
    }
  }
  throw std::logic_error("unknown loss kind");
}

}  // namespace ub::testing
