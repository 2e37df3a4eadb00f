// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "support/loss_cases.hpp"
#include "ub/neck.hpp"
#include "ub/rng.hpp"

namespace ub::testing {

inline EmbeddingSequence random_sequence(std::size_t n, std::size_t w, Modality m, std::uint64_t seed) {
  return EmbeddingSequence::of(normal_patches(n, w, seed), m);
}

// Every route given the wrong modality must throw.
inline std::vector<std::string> check_route_purity() {
  std::vector<std::string> bad;
  Neck neck(NeckConfig{}, 3);
  auto img = random_sequence(4, 32, Modality::kImage, 1);
  auto txt = random_sequence(3, 32, Modality::kText, 2);
  auto expect_throw = [&](const std::string& what, RouteKind r, const EmbeddingSequence* a,
                          const EmbeddingSequence* b) {
    Tape tape;
    try {
      neck.route_forward(tape, r, a, b);
      bad.push_back(what + ": no error");
    } catch (const std::invalid_argument&) {
    }
  };
  expect_throw("image-only with text", RouteKind::kImageOnly, &img, &txt);
  expect_throw("image-only with nothing", RouteKind::kImageOnly, nullptr, nullptr);
  expect_throw("text-only with image", RouteKind::kTextOnly, &img, &txt);
  expect_throw("text-only with image first", RouteKind::kTextOnly, &img, nullptr);
  for (auto r : {RouteKind::kLanguageGuidedVision, RouteKind::kImageToTextGen, RouteKind::kDeepFusion}) {
    const std::string name(route_name(r));
    expect_throw(name + " without text", r, &img, nullptr);
    expect_throw(name + " without image", r, nullptr, &txt);
    expect_throw(name + " with swapped modalities", r, &txt, &img);
  }
  return bad;
}

// Exhaustive over every image/text split of sequences up to six tokens: the
// mask must match the leftward rule, and perturbing a text token must leave
// every earlier fused position bit-identical.
inline std::vector<std::string> check_generative_causality() {
  std::vector<std::string> bad;
  for (auto route : all_routes()) {
    for (std::size_t n = 0; n <= 6; ++n) {
      for (std::size_t ni = 0; ni <= n; ++ni) {
        const std::size_t nt = n - ni;
        auto m = attention_mask(route, ni, nt);
        for (std::size_t q = 0; q < n; ++q)
          for (std::size_t k = 0; k < n; ++k) {
            const bool k_text = k >= ni, q_text = q >= ni;
            const bool want = route_is_generative(route) && k_text ? (q_text && k <= q) : true;
            if (m.at(q, k) != want) {
              bad.push_back(std::string(route_name(route)) + " mask " + std::to_string(ni) + "+" +
                            std::to_string(nt) + " at (" + std::to_string(q) + "," + std::to_string(k) + ")");
            }
          }
      }
    }
  }
  Neck neck(NeckConfig{}, 5);
  for (auto route : {RouteKind::kImageToTextGen, RouteKind::kDeepFusion}) {
    for (std::size_t ni = 1; ni <= 5; ++ni) {
      for (std::size_t nt = 1; ni + nt <= 6; ++nt) {
        auto img = random_sequence(ni, 32, Modality::kImage, 10 + ni);
        auto txt = random_sequence(nt, 32, Modality::kText, 20 + nt);
        for (std::size_t j = 0; j < nt; ++j) {
          Tape tape;
          auto base = neck.route_forward(tape, route, &img, &txt).fused.tokens;
          std::vector<double> v(txt.tokens.values().begin(), txt.tokens.values().end());
          for (std::size_t k = 0; k < 32; ++k) v[j * 32 + k] += 0.7;
          auto moved = EmbeddingSequence::of(Tensor::constant({nt, 32}, v), Modality::kText);
          auto out = neck.route_forward(tape, route, &img, &moved).fused.tokens;
          for (std::size_t r = 0; r < ni + j; ++r)
            for (std::size_t k = 0; k < 32; ++k)
              if (out.at(r, k) != base.at(r, k)) {
                bad.push_back(std::string(route_name(route)) + ": text token " + std::to_string(j) +
                              " moved position " + std::to_string(r));
                r = ni + j;
                break;
              }
        }
      }
    }
  }
  return bad;
}

// Scaling one class embedding by a positive factor never changes the argmax.
inline std::vector<std::string> check_seg_scale_invariance(std::size_t trials) {
  std::vector<std::string> bad;
  Rng rng(8);
  const std::vector<std::uint8_t> labels = {0, 1, 2, 3, 4};
  for (std::size_t t = 0; t < trials; ++t) {
    Tape tape;
    Tensor patches = normal_patches(16, 8, t);
    Tensor classes = normal_patches(5, 8, t + 1000);
    auto base = upsample_argmax(seg_logits(tape, patches, classes, 0.07), 4, 1, labels);
    std::vector<double> v(classes.values().begin(), classes.values().end());
    const std::size_t k = rng.index(5);
    const double s = std::exp(rng.uniform(-5.0, 5.0));
    for (std::size_t j = 0; j < 8; ++j) v[k * 8 + j] *= s;
    auto scaled = upsample_argmax(seg_logits(tape, patches, Tensor::constant({5, 8}, v), 0.07), 4, 1, labels);
    if (base != scaled) bad.push_back("trial " + std::to_string(t) + ": argmax moved after scaling class " +
                                      std::to_string(k));
  }
  return bad;
}

}  // namespace ub::testing
