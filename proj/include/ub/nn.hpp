// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ub/rng.hpp"
#include "ub/tensor.hpp"

namespace ub::nn {

inline constexpr double kInitStd = 0.02;

// Truncated normal (std 0.02, cut at 2 std) parameter.
Tensor trunc_normal_param(Rng& rng, Shape shape, double std = kInitStd);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  static Linear create(Rng& rng, std::size_t in, std::size_t out);
  Tensor operator()(Tape& tape, const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
  Linear clone() const { return {weight.clone_parameter(), bias.clone_parameter()}; }
};

struct LayerNorm {
  Tensor gain;
  Tensor shift;

  static LayerNorm create(std::size_t width);
  Tensor operator()(Tape& tape, const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
  LayerNorm clone() const { return {gain.clone_parameter(), shift.clone_parameter()}; }
};

// Row-major n x n "may attend" matrix. An empty `allowed` means full attention.
struct AttentionMask {
  std::size_t n = 0;
  std::vector<bool> allowed;

  bool full() const { return allowed.empty(); }
  bool at(std::size_t query, std::size_t key) const { return full() || allowed[query * n + key]; }
  static AttentionMask all(std::size_t n) { return {n, {}}; }
  static AttentionMask causal(std::size_t n);
};

// Pre-norm transformer block: x + MHA(LN(x)), then x + FFN(LN(x)).
struct TransformerBlock {
  LayerNorm ln_attn;
  Linear qkv;  // width -> 3 width
  Linear attn_out;
  LayerNorm ln_ffn;
  Linear ffn_in;
  Linear ffn_out;
  std::size_t heads = 1;

  static TransformerBlock create(Rng& rng, std::size_t width, std::size_t heads, std::size_t ffn_mult);
  Tensor operator()(Tape& tape, const Tensor& x, const AttentionMask* mask = nullptr) const;
  void collect(ParamList& out, const std::string& prefix) const;
  TransformerBlock clone() const;
};

std::size_t count_parameters(const ParamList& params);

}  // namespace ub::nn
