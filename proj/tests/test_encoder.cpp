// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "support/loss_cases.hpp"
#include "ub/encoder.hpp"
#include "ub/error.hpp"
#include "ub/gradcheck.hpp"
#include "ub/pretrain.hpp"
#include "ub/rng.hpp"
#include "ub/vocab.hpp"

using namespace ub;
using ub::testing::normal_patches;

namespace {

Image ramp_image(std::size_t h, std::size_t w, std::size_t c) {
  Image img{h, w, c, {}};
  for (std::size_t i = 0; i < h * w * c; ++i) img.pixels.push_back(static_cast<double>(i) * 0.5 - 3.0);
  return img;
}

Vocabulary small_vocab() {
  std::vector<std::string> words;
  for (int i = 0; i < 40; ++i) words.push_back("w" + std::to_string(i));
  return Vocabulary::with_specials(words);
}

}  // namespace

TEST_CASE("patchify splits a 32x32 image into four 256-long patches") {
  auto seq = patchify(ramp_image(32, 32, 1), 16);
  CHECK(seq.count() == 4);
  CHECK(seq.patches.shape() == Shape{4, 256});
  // second patch starts at column 16 of row 0
  CHECK(seq.patches.at(1, 0) == ramp_image(32, 32, 1).at(0, 16, 0));
}

TEST_CASE("a single patch is the flattened image") {
  Image img = ramp_image(4, 4, 1);
  auto seq = patchify(img, 4);
  REQUIRE(seq.patches.shape() == Shape{1, 16});
  for (std::size_t i = 0; i < 16; ++i) CHECK(seq.patches.values()[i] == img.pixels[i]);
}

TEST_CASE("patches reassemble into the original image") {
  Image img = ramp_image(8, 8, 3);
  auto seq = patchify(img, 4);
  CHECK(seq.count() == 4);
  CHECK(unpatchify(seq) == img);
  CHECK_THROWS_AS(patchify(img, 3), ShapeError);
}

TEST_CASE("encoder config validation") {
  EncoderConfig c;
  c.heads = 5;
  CHECK_THROWS_AS(EncoderStack(Modality::kImage, c, 1), ConfigError);
  c = EncoderConfig{};
  c.patch_size = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("encode returns one sequence per requested layer") {
  EncoderConfig c;
  EncoderStack stack(Modality::kImage, c, 7);
  Tensor p = normal_patches(4, c.patch_dim(), 1);
  Tape tape;
  const std::size_t both[] = {1, 2};
  auto out = stack.encode_patches(tape, p, both);
  REQUIRE(out.size() == 2);
  CHECK(out[0].shape() == Shape{4, c.width});
  CHECK(out[1].shape() == Shape{4, c.width});

  const std::size_t second[] = {2};
  auto only = stack.encode_patches(tape, p, second);
  REQUIRE(only.size() == 1);
  for (std::size_t i = 0; i < only[0].numel(); ++i) CHECK(only[0].values()[i] == out[1].values()[i]);

  Tape again;
  auto rerun = stack.encode_patches(again, p, both);
  for (std::size_t i = 0; i < rerun[1].numel(); ++i) CHECK(rerun[1].values()[i] == out[1].values()[i]);
}

TEST_CASE("encode rejects empty, oversized and out-of-range requests") {
  EncoderConfig c;
  c.max_tokens = 6;
  EncoderStack text(Modality::kText, c, 3);
  Tape tape;
  std::vector<std::size_t> none, seven(7, 1), fine(3, 1);
  const std::size_t last[] = {2}, bad[] = {3}, zero[] = {0};
  CHECK_THROWS_AS(text.encode_tokens(tape, none, last), ShapeError);
  CHECK_THROWS_AS(text.encode_tokens(tape, seven, last), ShapeError);
  CHECK_THROWS_AS(text.encode_tokens(tape, fine, bad), std::invalid_argument);
  CHECK_THROWS_AS(text.encode_tokens(tape, fine, zero), std::invalid_argument);
  CHECK(text.encode_tokens(tape, fine, last)[0].shape() == Shape{3, c.width});
}

TEST_CASE("parameter count follows the config alone") {
  EncoderConfig c;
  const std::size_t w = c.width, f = c.ffn_mult * w;
  const std::size_t block = 2 * (2 * w) + (w * 3 * w + 3 * w) + (w * w + w) + (w * f + f) + (f * w + w);
  const std::size_t image = c.patch_dim() * w + w + c.max_tokens * w + c.layers * block;
  const std::size_t text = c.vocab_size * w + c.max_tokens * w + c.layers * block;
  CHECK(EncoderStack(Modality::kImage, c, 1).parameter_count() == image);
  CHECK(EncoderStack(Modality::kImage, c, 99).parameter_count() == image);
  CHECK(EncoderStack(Modality::kText, c, 5).parameter_count() == text);
}

TEST_CASE("clone is independent of the original") {
  EncoderConfig c;
  EncoderStack a(Modality::kText, c, 11);
  EncoderStack b = a.clone();
  auto pa = a.parameters("a"), pb = b.parameters("b");
  REQUIRE(pa.size() == pb.size());
  CHECK(pa[0].tensor.values()[0] == pb[0].tensor.values()[0]);
  pb[0].tensor.mutable_values()[0] += 1.0;
  CHECK(pa[0].tensor.values()[0] != pb[0].tensor.values()[0]);
}

TEST_CASE("masked counts use the ceiling") {
  CHECK(masked_count(16, 0.75) == 12);
  CHECK(masked_count(20, 0.15) == 3);
  CHECK(masked_count(3, 0.01) == 1);
  CHECK_THROWS(masked_count(0, 0.5));
  CHECK_THROWS(masked_count(10, 0.0));
  CHECK_THROWS(masked_count(10, 1.0));
  auto pos = sample_mask_positions(16, 0.75, 4);
  CHECK(pos.size() == 12);
  CHECK(std::adjacent_find(pos.begin(), pos.end()) == pos.end());
  CHECK(pos == sample_mask_positions(16, 0.75, 4));
}

TEST_CASE("mim loss ignores targets at unmasked positions") {
  EncoderConfig c;
  EncoderStack stack(Modality::kImage, c, 2);
  Rng rng(9);
  MimHead head = MimHead::create(rng, c);
  Tensor patches = normal_patches(16, c.patch_dim(), 3);
  Tensor targets = Tensor::parameter({16, c.patch_dim()}, std::vector<double>(patches.values().begin(),
                                                                             patches.values().end()));
  const auto masked = sample_mask_positions(16, 0.75, 21);
  Tape tape;
  Tensor loss = mim_loss(tape, stack, head, patches, targets, 0.75, 21);
  tape.backward(loss);
  std::vector<bool> is_masked(16, false);
  for (auto p : masked) is_masked[p] = true;
  double masked_grad = 0.0;
  for (std::size_t r = 0; r < 16; ++r) {
    for (std::size_t j = 0; j < c.patch_dim(); ++j) {
      const double g = targets.grad()[r * c.patch_dim() + j];
      if (is_masked[r]) masked_grad += std::abs(g);
      else CHECK(g == 0.0);
    }
  }
  CHECK(masked_grad > 0.0);

  Tensor shifted = targets.detach();
  {
    auto v = shifted.values();
    std::vector<double> w(v.begin(), v.end());
    for (std::size_t r = 0; r < 16; ++r)
      if (!is_masked[r])
        for (std::size_t j = 0; j < c.patch_dim(); ++j) w[r * c.patch_dim() + j] += 5.0;
    shifted = Tensor::constant({16, c.patch_dim()}, std::move(w));
  }
  Tape t2;
  CHECK(mim_loss(t2, stack, head, patches, shifted, 0.75, 21).item() == loss.item());
}

TEST_CASE("mim loss at init is close to the target variance") {
  EncoderConfig c;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EncoderStack stack(Modality::kImage, c, seed);
    Rng rng(seed + 100);
    MimHead head = MimHead::create(rng, c);
    Tensor patches = normal_patches(16, c.patch_dim(), seed + 200);
    const auto masked = sample_mask_positions(16, 0.75, seed);
    double sum = 0.0, sq = 0.0, n = 0.0;
    for (auto r : masked) {
      for (std::size_t j = 0; j < c.patch_dim(); ++j) {
        const double v = patches.at(r, j);
        sum += v;
        sq += v * v;
        n += 1.0;
      }
    }
    const double var = sq / n - (sum / n) * (sum / n);
    Tape tape;
    const double loss = mim_loss(tape, stack, head, patches, 0.75, seed).item();
    CHECK(loss > 0.5 * var);
    CHECK(loss < 1.5 * var);
  }
}

TEST_CASE("mlm loss at init is near ln of the vocabulary size") {
  EncoderConfig c;
  Vocabulary vocab = small_vocab();
  c.vocab_size = vocab.size();
  EncoderStack stack(Modality::kText, c, 4);
  Rng rng(5);
  MlmHead head = MlmHead::create(rng, c);
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < 20; ++i) ids.push_back(6 + (i * 7) % 40);
  CHECK(sample_mask_positions(ids.size(), 0.15, 1).size() == 3);
  const double expect = std::log(static_cast<double>(c.vocab_size));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tape tape;
    const double loss = mlm_loss(tape, stack, head, vocab, ids, 0.15, seed).item();
    CHECK(std::abs(loss - expect) < 0.05 * expect);
  }
}

TEST_CASE("mlm loss ignores targets at unmasked positions") {
  EncoderConfig c;
  Vocabulary vocab = small_vocab();
  c.vocab_size = vocab.size();
  EncoderStack stack(Modality::kText, c, 4);
  Rng rng(5);
  MlmHead head = MlmHead::create(rng, c);
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < 20; ++i) ids.push_back(6 + i);
  const auto masked = sample_mask_positions(ids.size(), 0.15, 8);
  std::vector<std::size_t> targets = ids;
  for (std::size_t i = 0; i < targets.size(); ++i)
    if (std::find(masked.begin(), masked.end(), i) == masked.end()) targets[i] = 30;
  Tape a, b;
  CHECK(mlm_loss(a, stack, head, vocab, ids, 0.15, 8).item() ==
        mlm_loss(b, stack, head, vocab, ids, targets, 0.15, 8).item());
}

TEST_CASE("mlm needs the reserved mask token") {
  EncoderConfig c;
  Vocabulary plain({"<unk>", "a", "b"});
  EncoderStack stack(Modality::kText, c, 1);
  Rng rng(2);
  MlmHead head = MlmHead::create(rng, c);
  std::vector<std::size_t> ids = {1, 2, 1, 2};
  Tape tape;
  CHECK_THROWS_AS(mlm_loss(tape, stack, head, plain, ids, 0.5, 1), ConfigError);
}

TEST_CASE("contrastive closed form and symmetries") {
  Tape tape;
  Tensor a = Tensor::constant({2, 2}, {1, 0, 0, 1});
  const double expect = std::log(1.0 + std::exp(-1.0));
  CHECK(info_nce(tape, a, a, 1.0).item() == doctest::Approx(expect).epsilon(1e-12));
  CHECK(expect == doctest::Approx(0.3133).epsilon(1e-4));

  Tensor same = Tensor::constant({4, 3}, {1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3});
  CHECK(info_nce(tape, same, same, 0.07).item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  Tensor img = normal_patches(5, 6, 1), txt = normal_patches(5, 6, 2);
  const double base = info_nce(tape, img, txt, 0.07).item();
  CHECK(info_nce(tape, txt, img, 0.07).item() == doctest::Approx(base).epsilon(1e-12));

  const std::size_t perm[] = {3, 0, 4, 1, 2};
  Tensor pi = tape.gather_rows(img, perm), pt = tape.gather_rows(txt, perm);
  CHECK(info_nce(tape, pi, pt, 0.07).item() == doctest::Approx(base).epsilon(1e-12));

  Tensor one = Tensor::constant({1, 2}, {1, 0});
  CHECK_THROWS(info_nce(tape, one, one, 1.0));
  CHECK_THROWS(info_nce(tape, a, a, 0.0));
}

TEST_CASE("contrastive loss over stacks rejects a single pair") {
  EncoderConfig c;
  Vocabulary vocab = small_vocab();
  c.vocab_size = vocab.size();
  EncoderStack img(Modality::kImage, c, 1), txt(Modality::kText, c, 2);
  Tensor p = normal_patches(16, c.patch_dim(), 3);
  std::vector<std::size_t> ids = {6, 7, 8};
  std::vector<PairRef> one = {{&p, ids}};
  Tape tape;
  CHECK_THROWS(contrastive_loss(tape, img, txt, one, 0.07));
  std::vector<PairRef> two = {{&p, ids}, {&p, ids}};
  CHECK(contrastive_loss(tape, img, txt, two, 0.07).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("classification loss limits") {
  EncoderConfig c;
  EncoderStack stack(Modality::kImage, c, 1);
  Rng rng(1);
  ClassifierHead head = ClassifierHead::create(rng, c.width, 10);
  for (auto& v : head.out.weight.mutable_values()) v = 0.0;
  Tensor p = normal_patches(16, c.patch_dim(), 2);
  Tape tape;
  CHECK(supervised_cls_loss(tape, stack, head, p, 3).item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  head.out.bias.mutable_values()[3] = 1e3;
  CHECK(supervised_cls_loss(tape, stack, head, p, 3).item() < 1e-12);
  CHECK_THROWS_AS(supervised_cls_loss(tape, stack, head, p, 10), std::invalid_argument);
}

TEST_CASE("supervised training separates a small labelled set") {
  EncoderConfig c;
  EncoderStack stack(Modality::kImage, c, 3);
  Rng rng(4);
  ClassifierHead head = ClassifierHead::create(rng, c.width, 2);
  std::vector<Tensor> xs;
  std::vector<std::size_t> ys;
  for (std::size_t i = 0; i < 50; ++i) {
    const std::size_t y = i % 2;
    std::vector<double> v(16 * c.patch_dim());
    for (auto& x : v) x = rng.normal() * 0.5 + (y ? 1.0 : -1.0);
    xs.push_back(Tensor::constant({16, c.patch_dim()}, std::move(v)));
    ys.push_back(y);
  }
  ParamList params = stack.parameters("image");
  head.collect(params, "cls");
  AdamWOptions opts;
  opts.schedule.total_steps = 200;
  AdamW opt(opts, {{"all", params, 1.0, 0.01}});
  Rng pick(5);
  for (std::size_t s = 0; s < 200; ++s) {
    for (std::size_t i : pick.sample_without_replacement(50, 4)) {
      Tape tape;
      tape.backward(tape.scale(supervised_cls_loss(tape, stack, head, xs[i], ys[i]), 0.25));
    }
    opt.step();
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    Tape tape;
    Tensor logits = classifier_logits(tape, stack, head, xs[i]);
    correct += (logits.values()[1] > logits.values()[0]) == (ys[i] == 1);
  }
  CHECK(correct >= 45);
}

TEST_CASE("composed pretraining losses pass finite differences") {
  for (auto kind : ub::testing::pretrain_loss_kinds()) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      auto lc = ub::testing::make_loss_case(kind, seed);
      auto report = grad_check(lc.fn, lc.inputs, {});
      INFO(lc.name << " seed " << seed << ": " << report.worst);
      CHECK(report.passed);
    }
  }
}

TEST_CASE("pretrain run with zero steps keeps the initial weights") {
  EncoderConfig ic, tc;
  Vocabulary vocab = small_vocab();
  tc.vocab_size = vocab.size();
  PretrainCorpora corpora;
  for (std::size_t i = 0; i < 4; ++i) {
    corpora.images.push_back(normal_patches(16, ic.patch_dim(), i));
    corpora.texts.push_back({6, 7, 8, 9, 10});
  }
  auto result = pretrain_run(PretrainMode::kMaskedUnimodal, corpora, ic, tc, vocab, {}, 0, 42);
  EncoderStack fresh(Modality::kImage, ic, derive_seed(42, {1}));
  auto got = result.image.parameters("x"), want = fresh.parameters("x");
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    auto g = got[i].tensor.values(), w = want[i].tensor.values();
    CHECK(std::equal(g.begin(), g.end(), w.begin(), w.end()));
  }
  CHECK(result.traces.size() == 2);
  CHECK(result.traces[0].steps.empty());
}

TEST_CASE("pretrain run checks the corpus against the mode") {
  EncoderConfig ic, tc;
  Vocabulary vocab = small_vocab();
  tc.vocab_size = vocab.size();
  PretrainCorpora images_only;
  images_only.images.push_back(normal_patches(16, ic.patch_dim(), 1));
  CHECK_THROWS_AS(pretrain_run(PretrainMode::kMaskedUnimodal, images_only, ic, tc, vocab, {}, 1, 1), DataError);
  CHECK_THROWS_AS(pretrain_run(PretrainMode::kPairContrastive, images_only, ic, tc, vocab, {}, 1, 1), DataError);
  PretrainHyper hyper;
  hyper.num_classes = 3;
  CHECK_THROWS_AS(pretrain_run(PretrainMode::kSupervised, images_only, ic, tc, vocab, hyper, 1, 1), DataError);
  CHECK(parse_pretrain_mode("masked-unimodal") == PretrainMode::kMaskedUnimodal);
  CHECK_THROWS_AS(parse_pretrain_mode("mae"), ConfigError);
}

TEST_CASE("vocabulary tokenization") {
  Vocabulary v = Vocabulary::with_specials({"red", "disc"});
  CHECK(v.size() == 8);
  auto ids = v.encode("  red   cube disc ");
  REQUIRE(ids.size() == 3);
  CHECK(ids[1] == v.unk_id());
  CHECK(v.decode(ids) == "red <unk> disc");
  CHECK(v.mask_id().has_value());
  CHECK_THROWS_AS(Vocabulary({"<unk>", "a", "a"}), ConfigError);
  CHECK_THROWS_AS(Vocabulary({"a"}), ConfigError);
}
