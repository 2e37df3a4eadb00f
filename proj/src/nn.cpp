// SPDX-License-Identifier: Apache-2.0
#include "ub/nn.hpp"

#include <cmath>

#include "ub/error.hpp"

namespace ub::nn {

Tensor trunc_normal_param(Rng& rng, Shape shape, double std) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.truncated_normal(std);
  return Tensor::parameter(std::move(shape), std::move(v));
}

Linear Linear::create(Rng& rng, std::size_t in, std::size_t out) {
  return {trunc_normal_param(rng, {in, out}), Tensor::parameter({out}, std::vector<double>(out, 0.0))};
}

Tensor Linear::operator()(Tape& tape, const Tensor& x) const { return tape.add(tape.matmul(x, weight), bias); }

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

LayerNorm LayerNorm::create(std::size_t width) {
  return {Tensor::parameter({width}, std::vector<double>(width, 1.0)),
          Tensor::parameter({width}, std::vector<double>(width, 0.0))};
}

Tensor LayerNorm::operator()(Tape& tape, const Tensor& x) const { return tape.layer_norm(x, gain, shift); }

void LayerNorm::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".shift", shift});
}

AttentionMask AttentionMask::causal(std::size_t n) {
  AttentionMask m{n, std::vector<bool>(n * n, false)};
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t k = 0; k <= q; ++k) m.allowed[q * n + k] = true;
  return m;
}

TransformerBlock TransformerBlock::create(Rng& rng, std::size_t width, std::size_t heads, std::size_t ffn_mult) {
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("width " + std::to_string(width) + " is not divisible by " + std::to_string(heads) + " heads");
  }
  TransformerBlock b;
  b.ln_attn = LayerNorm::create(width);
  b.qkv = Linear::create(rng, width, 3 * width);
  b.attn_out = Linear::create(rng, width, width);
  b.ln_ffn = LayerNorm::create(width);
  b.ffn_in = Linear::create(rng, width, ffn_mult * width);
  b.ffn_out = Linear::create(rng, ffn_mult * width, width);
  b.heads = heads;
  return b;
}

Tensor TransformerBlock::operator()(Tape& tape, const Tensor& x, const AttentionMask* mask) const {
  const std::size_t n = x.dim(0);
  const std::size_t width = x.dim(1);
  const std::size_t head_dim = width / heads;
  if (mask && !mask->full() && mask->n != n) {
    throw ShapeError("attention mask is " + std::to_string(mask->n) + "x" + std::to_string(mask->n) +
                     " for " + std::to_string(n) + " tokens");
  }
  std::vector<bool> blocked;
  if (mask && !mask->full()) {
    blocked.resize(n * n);
    for (std::size_t i = 0; i < n * n; ++i) blocked[i] = !mask->allowed[i];
  }

  Tensor h = ln_attn(tape, x);
  Tensor qkv_all = qkv(tape, h);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  for (std::size_t k = 0; k < heads; ++k) {
    Tensor q = tape.slice(qkv_all, 1, k * head_dim, (k + 1) * head_dim);
    Tensor kk = tape.slice(qkv_all, 1, width + k * head_dim, width + (k + 1) * head_dim);
    Tensor v = tape.slice(qkv_all, 1, 2 * width + k * head_dim, 2 * width + (k + 1) * head_dim);
    Tensor scores = tape.scale(tape.matmul(q, tape.transpose(kk)), inv_sqrt);
    if (!blocked.empty()) scores = tape.masked_fill(scores, blocked);
    head_out.push_back(tape.matmul(tape.softmax(scores), v));
  }
  Tensor attn = heads == 1 ? head_out[0] : tape.concat(head_out, 1);
  Tensor x1 = tape.add(x, attn_out(tape, attn));
  Tensor f = ffn_out(tape, tape.gelu(ffn_in(tape, ln_ffn(tape, x1))));
  return tape.add(x1, f);
}

void TransformerBlock::collect(ParamList& out, const std::string& prefix) const {
  ln_attn.collect(out, prefix + ".ln_attn");
  qkv.collect(out, prefix + ".qkv");
  attn_out.collect(out, prefix + ".attn_out");
  ln_ffn.collect(out, prefix + ".ln_ffn");
  ffn_in.collect(out, prefix + ".ffn_in");
  ffn_out.collect(out, prefix + ".ffn_out");
}

TransformerBlock TransformerBlock::clone() const {
  return {ln_attn.clone(), qkv.clone(), attn_out.clone(), ln_ffn.clone(), ffn_in.clone(), ffn_out.clone(), heads};
}

std::size_t count_parameters(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

}  // namespace ub::nn
