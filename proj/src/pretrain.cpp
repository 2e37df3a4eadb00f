// SPDX-License-Identifier: Apache-2.0
#include "ub/pretrain.hpp"

#include <algorithm>
#include <cmath>

#include "ub/error.hpp"
#include "ub/rng.hpp"

namespace ub {

std::string_view pretrain_mode_name(PretrainMode mode) {
  switch (mode) {
    case PretrainMode::kSupervised: return "supervised";
    case PretrainMode::kPairContrastive: return "pair-contrastive";
    case PretrainMode::kMaskedUnimodal: return "masked-unimodal";
  }
  return "?";
}

PretrainMode parse_pretrain_mode(std::string_view text) {
  for (auto m : {PretrainMode::kSupervised, PretrainMode::kPairContrastive, PretrainMode::kMaskedUnimodal}) {
    if (pretrain_mode_name(m) == text) return m;
  }
  throw ConfigError("unknown pretrain mode '" + std::string(text) + "'");
}

std::size_t masked_count(std::size_t n, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("mask ratio must lie in (0, 1)");
  // Guard the ceiling against representation noise such as 0.15 * 20 = 3.0000000000000004.
  const double raw = std::round(ratio * static_cast<double>(n) * 1e9) / 1e9;
  const auto k = static_cast<std::size_t>(std::ceil(raw));
  if (k == 0) throw std::invalid_argument("mask ratio " + std::to_string(ratio) + " masks no position of " +
                                          std::to_string(n));
  return k;
}

std::vector<std::size_t> sample_mask_positions(std::size_t n, double ratio, std::uint64_t seed) {
  Rng rng(seed);
  auto pos = rng.sample_without_replacement(n, masked_count(n, ratio));
  std::sort(pos.begin(), pos.end());
  return pos;
}

MimHead MimHead::create(Rng& rng, const EncoderConfig& config) {
  return {nn::trunc_normal_param(rng, {1, config.width}), nn::Linear::create(rng, config.width, config.patch_dim())};
}

MimHead MimHead::clone() const { return {mask_token.clone_parameter(), decoder.clone()}; }

void MimHead::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".mask_token", mask_token});
  decoder.collect(out, prefix + ".decoder");
}

MlmHead MlmHead::create(Rng& rng, const EncoderConfig& config) {
  return {nn::Linear::create(rng, config.width, config.vocab_size)};
}

MlmHead MlmHead::clone() const { return {out.clone()}; }

void MlmHead::collect(ParamList& params, const std::string& prefix) const { out.collect(params, prefix + ".out"); }

ClassifierHead ClassifierHead::create(Rng& rng, std::size_t width, std::size_t classes) {
  if (classes == 0) throw ConfigError("classifier needs at least one class");
  return {nn::Linear::create(rng, width, classes)};
}

ClassifierHead ClassifierHead::clone() const { return {out.clone()}; }

void ClassifierHead::collect(ParamList& params, const std::string& prefix) const {
  out.collect(params, prefix + ".out");
}

Tensor mim_loss(Tape& tape, const EncoderStack& stack, const MimHead& head, const Tensor& patches,
                const Tensor& targets, double ratio, std::uint64_t seed) {
  if (targets.shape() != patches.shape()) {
    throw ShapeError("mim targets " + shape_str(targets.shape()) + " differ from patches " +
                     shape_str(patches.shape()));
  }
  const std::size_t n = patches.dim(0);
  const std::size_t width = stack.config().width;
  const auto masked = sample_mask_positions(n, ratio, seed);

  std::vector<double> keep(n * width, 1.0), hole(n, 0.0);
  for (std::size_t p : masked) {
    std::fill_n(keep.begin() + static_cast<std::ptrdiff_t>(p * width), width, 0.0);
    hole[p] = 1.0;
  }
  Tensor x = stack.project_patches(tape, patches);
  x = tape.mul(x, Tensor::constant({n, width}, std::move(keep)));
  x = tape.add(x, tape.matmul(Tensor::constant({n, 1}, std::move(hole)), head.mask_token));
  Tensor h = stack.run(tape, stack.add_positions(tape, x), std::vector<std::size_t>{stack.config().layers}).back();
  Tensor recon = tape.gather_rows(head.decoder(tape, h), masked);
  Tensor diff = tape.sub(recon, tape.gather_rows(targets, masked));
  return tape.mean(tape.mul(diff, diff));
}

Tensor mim_loss(Tape& tape, const EncoderStack& stack, const MimHead& head, const Tensor& patches, double ratio,
                std::uint64_t seed) {
  return mim_loss(tape, stack, head, patches, patches, ratio, seed);
}

Tensor mlm_loss(Tape& tape, const EncoderStack& stack, const MlmHead& head, const Vocabulary& vocab,
                std::span<const std::size_t> ids, double ratio, std::uint64_t seed) {
  return mlm_loss(tape, stack, head, vocab, ids, ids, ratio, seed);
}

Tensor mlm_loss(Tape& tape, const EncoderStack& stack, const MlmHead& head, const Vocabulary& vocab,
                std::span<const std::size_t> ids, std::span<const std::size_t> targets, double ratio,
                std::uint64_t seed) {
  const auto mask_id = vocab.mask_id();
  if (!mask_id) throw ConfigError("vocabulary lacks the reserved <mask> token");
  if (ids.size() < 2) throw std::invalid_argument("mlm needs at least 2 tokens");
  if (targets.size() != ids.size()) throw ShapeError("mlm targets do not align with inputs");
  const auto masked = sample_mask_positions(ids.size(), ratio, seed);
  std::vector<std::size_t> input(ids.begin(), ids.end()), picked;
  for (std::size_t p : masked) {
    picked.push_back(targets[p]);
    input[p] = *mask_id;
  }
  Tensor h = stack.encode_final(tape, input);
  return tape.cross_entropy(tape.gather_rows(head.out(tape, h), masked), picked);
}

Tensor info_nce(Tape& tape, const Tensor& image_vectors, const Tensor& text_vectors, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (image_vectors.shape() != text_vectors.shape()) {
    throw ShapeError("contrastive inputs " + shape_str(image_vectors.shape()) + " vs " +
                     shape_str(text_vectors.shape()));
  }
  const std::size_t b = image_vectors.dim(0);
  if (b < 2) throw std::invalid_argument("contrastive loss needs a batch of at least 2 pairs");
  Tensor a = tape.l2_normalize_rows(image_vectors);
  Tensor t = tape.l2_normalize_rows(text_vectors);
  Tensor sim = tape.scale(tape.matmul(a, tape.transpose(t)), 1.0 / temperature);
  std::vector<std::size_t> diag(b);
  for (std::size_t i = 0; i < b; ++i) diag[i] = i;
  Tensor both = tape.add(tape.cross_entropy(sim, diag), tape.cross_entropy(tape.transpose(sim), diag));
  return tape.scale(both, 0.5);
}

Tensor contrastive_loss(Tape& tape, const EncoderStack& image_stack, const EncoderStack& text_stack,
                        std::span<const PairRef> batch, double temperature) {
  if (batch.size() < 2) throw std::invalid_argument("contrastive loss needs a batch of at least 2 pairs");
  std::vector<Tensor> img, txt;
  for (const auto& pair : batch) {
    img.push_back(tape.mean_rows(image_stack.encode_final(tape, *pair.patches)));
    txt.push_back(tape.mean_rows(text_stack.encode_final(tape, pair.ids)));
  }
  return info_nce(tape, tape.concat(img, 0), tape.concat(txt, 0), temperature);
}

Tensor classifier_logits(Tape& tape, const EncoderStack& stack, const ClassifierHead& head, const Tensor& patches) {
  return head.out(tape, tape.mean_rows(stack.encode_final(tape, patches)));
}

Tensor supervised_cls_loss(Tape& tape, const EncoderStack& stack, const ClassifierHead& head, const Tensor& patches,
                           std::size_t label) {
  if (label >= head.classes()) {
    throw std::invalid_argument("label " + std::to_string(label) + " outside " + std::to_string(head.classes()) +
                                " classes");
  }
  const std::size_t target[] = {label};
  return tape.cross_entropy(classifier_logits(tape, stack, head, patches), target);
}

namespace {

// One optimizer and one sample-level loss; per-sample graphs accumulate
// gradients scaled by 1/B before a single update.
struct Trainer {
  LossTrace trace;
  AdamW optimizer;
};

AdamW make_optimizer(const PretrainHyper& hyper, ParamList params) {
  AdamWOptions opts;
  opts.schedule = hyper.schedule;
  ParamGroup group{"all", std::move(params), 1.0, hyper.weight_decay};
  return AdamW(opts, {std::move(group)});
}

std::vector<std::size_t> draw_batch(Rng& rng, std::size_t n, std::size_t b) {
  return rng.sample_without_replacement(n, std::min(n, b));
}

std::vector<std::size_t> probe_indices(std::size_t n, std::size_t k) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < std::min(n, k); ++i) out.push_back(i);
  return out;
}

template <typename SampleLoss>
double probe_loss(const std::vector<std::size_t>& probe, SampleLoss&& loss) {
  double total = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    Tape tape;
    total += loss(tape, probe[i], derive_seed(0x9e3779b9, {i})).item();
  }
  return total / static_cast<double>(probe.size());
}

template <typename SampleLoss>
void train_per_sample(Trainer& tr, Rng& rng, std::size_t n, std::size_t batch, std::size_t steps, std::uint64_t seed,
                      SampleLoss&& loss) {
  for (std::size_t s = 0; s < steps; ++s) {
    const auto idx = draw_batch(rng, n, batch);
    double total = 0.0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      Tape tape;
      Tensor l = loss(tape, idx[i], derive_seed(seed, {s, i}));
      total += l.item();
      tape.backward(tape.scale(l, 1.0 / static_cast<double>(idx.size())));
    }
    tr.trace.steps.push_back(total / static_cast<double>(idx.size()));
    tr.optimizer.step();
  }
}

}  // namespace

PretrainResult pretrain_run(PretrainMode mode, const PretrainCorpora& corpora, const EncoderConfig& image_config,
                            const EncoderConfig& text_config, const Vocabulary& vocab, const PretrainHyper& hyper,
                            std::size_t steps, std::uint64_t seed) {
  if (vocab.size() > text_config.vocab_size) {
    throw ConfigError("vocabulary of " + std::to_string(vocab.size()) + " tokens exceeds text vocab-size " +
                      std::to_string(text_config.vocab_size));
  }
  if (hyper.batch_size == 0) throw ConfigError("pretrain batch size must be positive");
  PretrainResult result{EncoderStack(Modality::kImage, image_config, derive_seed(seed, {1})),
                        EncoderStack(Modality::kText, text_config, derive_seed(seed, {2})),
                        {}};
  Rng head_rng(derive_seed(seed, {3}));
  Rng batch_rng(derive_seed(seed, {4}));

  switch (mode) {
    case PretrainMode::kSupervised: {
      if (corpora.images.empty() || corpora.labels.size() != corpora.images.size()) {
        throw DataError("supervised pretraining needs labelled images (" + std::to_string(corpora.images.size()) +
                        " images, " + std::to_string(corpora.labels.size()) + " labels)");
      }
      if (hyper.num_classes == 0) throw ConfigError("supervised pretraining needs num_classes");
      ClassifierHead head = ClassifierHead::create(head_rng, image_config.width, hyper.num_classes);
      ParamList params = result.image.parameters("image");
      head.collect(params, "cls");
      Trainer tr{{"supervised", {}, 0.0, 0.0}, make_optimizer(hyper, params)};
      auto loss = [&](Tape& tape, std::size_t i, std::uint64_t) {
        return supervised_cls_loss(tape, result.image, head, corpora.images[i], corpora.labels[i]);
      };
      const auto probe = probe_indices(corpora.images.size(), hyper.probe_size);
      tr.trace.probe_initial = probe_loss(probe, loss);
      train_per_sample(tr, batch_rng, corpora.images.size(), hyper.batch_size, steps, seed, loss);
      tr.trace.probe_final = probe_loss(probe, loss);
      result.traces.push_back(std::move(tr.trace));
      break;
    }
    case PretrainMode::kPairContrastive: {
      if (corpora.pair_images.size() < 2 || corpora.pair_images.size() != corpora.pair_texts.size()) {
        throw DataError("contrastive pretraining needs at least 2 aligned pairs (" +
                        std::to_string(corpora.pair_images.size()) + " images, " +
                        std::to_string(corpora.pair_texts.size()) + " texts)");
      }
      ParamList params = result.image.parameters("image");
      for (auto& p : result.text.parameters("text")) params.push_back(p);
      Trainer tr{{"pair-contrastive", {}, 0.0, 0.0}, make_optimizer(hyper, params)};
      auto batch_loss = [&](Tape& tape, const std::vector<std::size_t>& idx) {
        std::vector<PairRef> refs;
        for (std::size_t i : idx) refs.push_back({&corpora.pair_images[i], corpora.pair_texts[i]});
        return contrastive_loss(tape, result.image, result.text, refs, hyper.temperature);
      };
      const auto probe = probe_indices(corpora.pair_images.size(), hyper.probe_size);
      auto probe_eval = [&] {
        Tape tape;
        return batch_loss(tape, probe).item();
      };
      tr.trace.probe_initial = probe_eval();
      for (std::size_t s = 0; s < steps; ++s) {
        auto idx = draw_batch(batch_rng, corpora.pair_images.size(), std::max<std::size_t>(hyper.batch_size, 2));
        Tape tape;
        Tensor l = batch_loss(tape, idx);
        tr.trace.steps.push_back(l.item());
        tape.backward(l);
        tr.optimizer.step();
      }
      tr.trace.probe_final = probe_eval();
      result.traces.push_back(std::move(tr.trace));
      break;
    }
    case PretrainMode::kMaskedUnimodal: {
      if (corpora.images.empty() || corpora.texts.empty()) {
        throw DataError("masked unimodal pretraining needs both an image and a text corpus");
      }
      MimHead mim = MimHead::create(head_rng, image_config);
      MlmHead mlm = MlmHead::create(head_rng, text_config);
      ParamList ip = result.image.parameters("image");
      mim.collect(ip, "mim");
      ParamList tp = result.text.parameters("text");
      mlm.collect(tp, "mlm");
      Trainer image_tr{{"masked-image", {}, 0.0, 0.0}, make_optimizer(hyper, ip)};
      Trainer text_tr{{"masked-text", {}, 0.0, 0.0}, make_optimizer(hyper, tp)};
      auto image_loss = [&](Tape& tape, std::size_t i, std::uint64_t s) {
        return mim_loss(tape, result.image, mim, corpora.images[i], hyper.mim_ratio, s);
      };
      auto text_loss = [&](Tape& tape, std::size_t i, std::uint64_t s) {
        return mlm_loss(tape, result.text, mlm, vocab, corpora.texts[i], hyper.mlm_ratio, s);
      };
      const auto iprobe = probe_indices(corpora.images.size(), hyper.probe_size);
      const auto tprobe = probe_indices(corpora.texts.size(), hyper.probe_size);
      image_tr.trace.probe_initial = probe_loss(iprobe, image_loss);
      text_tr.trace.probe_initial = probe_loss(tprobe, text_loss);
      Rng image_rng(derive_seed(seed, {5})), text_rng(derive_seed(seed, {6}));
      train_per_sample(image_tr, image_rng, corpora.images.size(), hyper.batch_size, steps, derive_seed(seed, {7}),
                       image_loss);
      train_per_sample(text_tr, text_rng, corpora.texts.size(), hyper.batch_size, steps, derive_seed(seed, {8}),
                       text_loss);
      image_tr.trace.probe_final = probe_loss(iprobe, image_loss);
      text_tr.trace.probe_final = probe_loss(tprobe, text_loss);
      result.traces.push_back(std::move(image_tr.trace));
      result.traces.push_back(std::move(text_tr.trace));
      break;
    }
  }
  return result;
}

}  // namespace ub
