// SPDX-License-Identifier: Apache-2.0
#include "ub/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "ub/error.hpp"

namespace ub {

using detail::TensorImpl;

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape, std::size_t nvalues) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dim");
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != nvalues) {
    throw ShapeError("tensor shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(nvalues));
  }
}

void ensure_grad(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.values.size(), 0.0);
}

void require_rank(const Tensor& t, std::size_t rank, std::string_view op, std::string_view name) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + std::string(name) + " must be rank " +
                     std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  validate_shape(shape, values.size());
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape) {
  std::size_t n = shape_numel(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double v) { return constant({1}, {v}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.impl_->requires_grad = true;
  t.impl_->grad.assign(t.impl_->values.size(), 0.0);
  return t;
}

const Shape& Tensor::shape() const {
  if (!impl_) throw std::logic_error("undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }
std::size_t Tensor::rows() const { return dim(0); }
std::size_t Tensor::cols() const { return dim(1); }

std::span<const double> Tensor::values() const {
  if (!impl_) throw std::logic_error("undefined tensor");
  return impl_->values;
}

std::span<double> Tensor::mutable_values() {
  if (!impl_) throw std::logic_error("undefined tensor");
  if (impl_->tape) throw std::logic_error("only leaf tensors may be mutated");
  return impl_->values;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() needs a single-element tensor, got " + shape_str(shape()));
  return impl_->values[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (rank() != 2) throw ShapeError("at(r,c) needs rank 2, got " + shape_str(shape()));
  return impl_->values.at(r * impl_->shape[1] + c);
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
bool Tensor::is_leaf() const { return impl_ && impl_->tape == nullptr; }
bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("tensor has no gradient buffer");
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!has_grad()) throw std::logic_error("tensor has no gradient buffer");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return constant(shape(), impl_->values); }
Tensor Tensor::clone_parameter() const { return parameter(shape(), impl_->values); }

Tensor ones_column(std::size_t rows) { return Tensor::constant({rows, 1}, std::vector<double>(rows, 1.0)); }

// ---------------------------------------------------------------------------
// Op tags

namespace {
struct TagName {
  OpTag tag;
  std::string_view name;
};
constexpr TagName kTagNames[] = {
    {OpTag::kMatMul, "matmul"},
    {OpTag::kAdd, "add"},
    {OpTag::kSub, "sub"},
    {OpTag::kMul, "elementwise-mul"},
    {OpTag::kScale, "scale"},
    {OpTag::kSoftmax, "softmax"},
    {OpTag::kLogSoftmax, "log-softmax"},
    {OpTag::kLayerNorm, "layer-norm"},
    {OpTag::kGelu, "gelu"},
    {OpTag::kEmbedding, "embedding-lookup"},
    {OpTag::kConcat, "concat"},
    {OpTag::kSlice, "slice"},
    {OpTag::kMean, "mean"},
    {OpTag::kMeanRows, "mean-rows"},
    {OpTag::kSum, "sum"},
    {OpTag::kTranspose, "transpose"},
    {OpTag::kMaskedFill, "masked-fill"},
    {OpTag::kCrossEntropy, "cross-entropy"},
    {OpTag::kGatherRows, "gather-rows"},
    {OpTag::kL2NormalizeRows, "l2-normalize-rows"},
};
}  // namespace

std::string_view op_name(OpTag tag) {
  for (const auto& tn : kTagNames) {
    if (tn.tag == tag) return tn.name;
  }
  return "?";
}

std::optional<OpTag> parse_op_tag(std::string_view name) {
  for (const auto& tn : kTagNames) {
    if (tn.name == name) return tn.tag;
  }
  return std::nullopt;
}

std::vector<OpTag> all_op_tags() {
  std::vector<OpTag> out;
  for (const auto& tn : kTagNames) out.push_back(tn.tag);
  return out;
}

// ---------------------------------------------------------------------------
// Tape plumbing

void Tape::check_input(const Tensor& t, std::string_view op) const {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined input tensor");
  if (t.impl_->tape && t.impl_->tape != this) {
    throw std::invalid_argument(std::string(op) + ": input registered on a different record");
  }
}

Tape::ImplPtr Tape::make_output(Shape shape, std::initializer_list<const Tensor*> inputs) {
  auto out = std::make_shared<TensorImpl>();
  out->values.assign(shape_numel(shape), 0.0);
  out->shape = std::move(shape);
  out->tape = this;
  for (const Tensor* t : inputs) out->requires_grad = out->requires_grad || t->requires_grad();
  return out;
}

Tape::ImplPtr Tape::make_output(Shape shape, std::span<const Tensor> inputs) {
  auto out = std::make_shared<TensorImpl>();
  out->values.assign(shape_numel(shape), 0.0);
  out->shape = std::move(shape);
  out->tape = this;
  for (const Tensor& t : inputs) out->requires_grad = out->requires_grad || t.requires_grad();
  return out;
}

Tensor Tape::record(OpTag tag, std::vector<ImplPtr> inputs, ImplPtr out,
                    std::function<void(const Node&)> backward) {
  if (backward_done_) throw std::logic_error("record already consumed by backward; call reset()");
  nodes_.push_back(Node{tag, std::move(inputs), out, std::move(backward)});
  return Tensor(std::move(out));
}

void Tape::reset() {
  nodes_.clear();
  backward_done_ = false;
}

void Tape::backward(const Tensor& loss) {
  if (backward_done_) throw std::logic_error("backward called twice without reset()");
  check_input(loss, "backward");
  if (loss.numel() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_str(loss.shape()));
  backward_done_ = true;
  if (!loss.requires_grad()) return;
  if (loss.is_leaf()) {
    ensure_grad(*loss.impl_);
    loss.impl_->grad[0] += 1.0;
    return;
  }
  ensure_grad(*loss.impl_);
  loss.impl_->grad[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    const Node& node = *it;
    if (!node.output->requires_grad || node.output->grad.empty()) continue;
    for (const auto& in : node.inputs) {
      if (in->requires_grad) ensure_grad(*in);
    }
    node.backward(node);
  }
}

// ---------------------------------------------------------------------------
// Ops

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  check_input(a, "matmul");
  check_input(b, "matmul");
  require_rank(a, 2, "matmul", "lhs");
  require_rank(b, 2, "matmul", "rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dims differ, lhs " + shape_str(a.shape()) + " has " +
                     std::to_string(k) + " cols but rhs " + shape_str(b.shape()) + " has " +
                     std::to_string(b.dim(0)) + " rows");
  }
  auto out = make_output({m, n}, {&a, &b});
  const double* av = a.impl_->values.data();
  const double* bv = b.impl_->values.data();
  double* ov = out->values.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = ov + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = av[i * k + p];
      if (s == 0.0) continue;
      const double* brow = bv + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += s * brow[j];
    }
  }
  return record(OpTag::kMatMul, {a.impl_, b.impl_}, out, [m, k, n](const Node& node) {
    const TensorImpl& A = *node.inputs[0];
    const TensorImpl& B = *node.inputs[1];
    const double* g = node.output->grad.data();
    if (A.requires_grad) {
      double* ga = node.inputs[0]->grad.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = B.values.data() + p * n;
          const double* grow = g + i * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (B.requires_grad) {
      double* gb = node.inputs[1]->grad.data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double s = A.values[i * k + p];
          if (s == 0.0) continue;
          double* gbrow = gb + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += s * grow[j];
        }
      }
    }
  });
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  check_input(a, "add");
  check_input(b, "add");
  const bool bias = a.rank() == 2 && b.rank() == 1;
  if (bias) {
    if (b.dim(0) != a.dim(1)) {
      throw ShapeError("add: bias length " + std::to_string(b.dim(0)) + " does not match last dim of " +
                       shape_str(a.shape()));
    }
  } else {
    require_same_shape(a, b, "add");
  }
  auto out = make_output(a.shape(), {&a, &b});
  const std::size_t n = bias ? b.dim(0) : a.numel();
  for (std::size_t i = 0; i < out->values.size(); ++i) {
    out->values[i] = a.impl_->values[i] + b.impl_->values[bias ? i % n : i];
  }
  return record(OpTag::kAdd, {a.impl_, b.impl_}, out, [bias, n](const Node& node) {
    const auto& g = node.output->grad;
    if (node.inputs[0]->requires_grad) {
      auto& ga = node.inputs[0]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (node.inputs[1]->requires_grad) {
      auto& gb = node.inputs[1]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) gb[bias ? i % n : i] += g[i];
    }
  });
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  check_input(a, "sub");
  check_input(b, "sub");
  require_same_shape(a, b, "sub");
  auto out = make_output(a.shape(), {&a, &b});
  for (std::size_t i = 0; i < out->values.size(); ++i) {
    out->values[i] = a.impl_->values[i] - b.impl_->values[i];
  }
  return record(OpTag::kSub, {a.impl_, b.impl_}, out, [](const Node& node) {
    const auto& g = node.output->grad;
    if (node.inputs[0]->requires_grad) {
      auto& ga = node.inputs[0]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (node.inputs[1]->requires_grad) {
      auto& gb = node.inputs[1]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  check_input(a, "elementwise-mul");
  check_input(b, "elementwise-mul");
  require_same_shape(a, b, "elementwise-mul");
  auto out = make_output(a.shape(), {&a, &b});
  for (std::size_t i = 0; i < out->values.size(); ++i) {
    out->values[i] = a.impl_->values[i] * b.impl_->values[i];
  }
  return record(OpTag::kMul, {a.impl_, b.impl_}, out, [](const Node& node) {
    const auto& g = node.output->grad;
    const auto& A = *node.inputs[0];
    const auto& B = *node.inputs[1];
    if (A.requires_grad) {
      auto& ga = node.inputs[0]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B.values[i];
    }
    if (B.requires_grad) {
      auto& gb = node.inputs[1]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A.values[i];
    }
  });
}

Tensor Tape::scale(const Tensor& x, double factor) {
  check_input(x, "scale");
  auto out = make_output(x.shape(), {&x});
  for (std::size_t i = 0; i < out->values.size(); ++i) out->values[i] = x.impl_->values[i] * factor;
  return record(OpTag::kScale, {x.impl_}, out, [factor](const Node& node) {
    const auto& g = node.output->grad;
    auto& gx = node.inputs[0]->grad;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
}

Tensor Tape::softmax(const Tensor& x) {
  check_input(x, "softmax");
  const std::size_t n = x.shape().back();
  const std::size_t m = x.numel() / n;
  auto out = make_output(x.shape(), {&x});
  const auto& xv = x.impl_->values;
  auto& ov = out->values;
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = xv.data() + r * n;
    double* orow = ov.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (orow[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) orow[j] /= z;
  }
  return record(OpTag::kSoftmax, {x.impl_}, out, [m, n](const Node& node) {
    const auto& y = node.output->values;
    const auto& g = node.output->grad;
    auto& gx = node.inputs[0]->grad;
    for (std::size_t r = 0; r < m; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
    }
  });
}

Tensor Tape::log_softmax(const Tensor& x) {
  check_input(x, "log-softmax");
  const std::size_t n = x.shape().back();
  const std::size_t m = x.numel() / n;
  auto out = make_output(x.shape(), {&x});
  const auto& xv = x.impl_->values;
  auto& ov = out->values;
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = xv.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) ov[r * n + j] = row[j] - lse;
  }
  return record(OpTag::kLogSoftmax, {x.impl_}, out, [m, n](const Node& node) {
    const auto& y = node.output->values;
    const auto& g = node.output->grad;
    auto& gx = node.inputs[0]->grad;
    for (std::size_t r = 0; r < m; ++r) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < n; ++j) gsum += g[r * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[r * n + j] - std::exp(y[r * n + j]) * gsum;
    }
  });
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift) {
  check_input(x, "layer-norm");
  check_input(gain, "layer-norm");
  check_input(shift, "layer-norm");
  require_rank(x, 2, "layer-norm", "input");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gain.shape() != Shape{n} || shift.shape() != Shape{n}) {
    throw ShapeError("layer-norm: gain " + shape_str(gain.shape()) + " and shift " +
                     shape_str(shift.shape()) + " must be [" + std::to_string(n) + "]");
  }
  auto out = make_output(x.shape(), {&x, &gain, &shift});
  // Saved per-row normalized values and inverse std for backward.
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  const auto& xv = x.impl_->values;
  const auto& gv = gain.impl_->values;
  const auto& sv = shift.impl_->values;
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = xv.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + kLayerNormEps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[r * n + j] = h;
      out->values[r * n + j] = h * gv[j] + sv[j];
    }
  }
  return record(OpTag::kLayerNorm, {x.impl_, gain.impl_, shift.impl_}, out,
                [m, n, xhat, inv_std](const Node& node) {
                  const auto& g = node.output->grad;
                  const auto& gv = node.inputs[1]->values;
                  const bool need_x = node.inputs[0]->requires_grad;
                  const bool need_gain = node.inputs[1]->requires_grad;
                  const bool need_shift = node.inputs[2]->requires_grad;
                  const double inv_n = 1.0 / static_cast<double>(n);
                  for (std::size_t r = 0; r < m; ++r) {
                    double sum_dh = 0.0, sum_dh_h = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                      const double dh = g[r * n + j] * gv[j];
                      const double h = (*xhat)[r * n + j];
                      sum_dh += dh;
                      sum_dh_h += dh * h;
                      if (need_gain) node.inputs[1]->grad[j] += g[r * n + j] * h;
                      if (need_shift) node.inputs[2]->grad[j] += g[r * n + j];
                    }
                    if (!need_x) continue;
                    auto& gx = node.inputs[0]->grad;
                    const double is = (*inv_std)[r];
                    for (std::size_t j = 0; j < n; ++j) {
                      const double dh = g[r * n + j] * gv[j];
                      const double h = (*xhat)[r * n + j];
                      gx[r * n + j] += is * (dh - inv_n * sum_dh - h * inv_n * sum_dh_h);
                    }
                  }
                });
}

Tensor Tape::gelu(const Tensor& x) {
  check_input(x, "gelu");
  auto out = make_output(x.shape(), {&x});
  const auto& xv = x.impl_->values;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out->values[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] / std::numbers::sqrt2));
  }
  return record(OpTag::kGelu, {x.impl_}, out, [](const Node& node) {
    const auto& xv = node.inputs[0]->values;
    const auto& g = node.output->grad;
    auto& gx = node.inputs[0]->grad;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(xv[i] / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xv[i] * xv[i]);
      gx[i] += g[i] * (cdf + xv[i] * pdf);
    }
  });
}

Tensor Tape::embedding(const Tensor& table, std::span<const std::size_t> ids) {
  check_input(table, "embedding-lookup");
  require_rank(table, 2, "embedding-lookup", "table");
  if (ids.empty()) throw ShapeError("embedding-lookup: empty id list");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  for (std::size_t id : ids) {
    if (id >= vocab) {
      throw ShapeError("embedding-lookup: id " + std::to_string(id) + " outside table of " +
                       std::to_string(vocab) + " rows");
    }
  }
  auto out = make_output({ids.size(), d}, {&table});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    std::copy_n(table.impl_->values.data() + ids[r] * d, d, out->values.data() + r * d);
  }
  std::vector<std::size_t> saved(ids.begin(), ids.end());
  return record(OpTag::kEmbedding, {table.impl_}, out, [saved = std::move(saved), d](const Node& node) {
    const auto& g = node.output->grad;
    auto& gt = node.inputs[0]->grad;
    for (std::size_t r = 0; r < saved.size(); ++r) {
      for (std::size_t j = 0; j < d; ++j) gt[saved[r] * d + j] += g[r * d + j];
    }
  });
}

Tensor Tape::concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis > 1) throw ShapeError("concat: axis must be 0 or 1, got " + std::to_string(axis));
  for (const Tensor& p : parts) {
    check_input(p, "concat");
    require_rank(p, 2, "concat", "part");
  }
  const std::size_t other = 1 - axis;
  const std::size_t fixed = parts[0].dim(other);
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const Tensor& p : parts) {
    if (p.dim(other) != fixed) {
      throw ShapeError("concat: dim " + std::to_string(other) + " mismatch, " +
                       shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    offsets.push_back(total);
    total += p.dim(axis);
  }
  Shape shape = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
  auto out = make_output(shape, parts);
  const std::size_t out_cols = shape[1];
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].impl_->values;
    const std::size_t pr = parts[k].dim(0), pc = parts[k].dim(1);
    for (std::size_t r = 0; r < pr; ++r) {
      for (std::size_t c = 0; c < pc; ++c) {
        const std::size_t orow = axis == 0 ? r + offsets[k] : r;
        const std::size_t ocol = axis == 0 ? c : c + offsets[k];
        out->values[orow * out_cols + ocol] = pv[r * pc + c];
      }
    }
  }
  std::vector<ImplPtr> inputs;
  for (const Tensor& p : parts) inputs.push_back(p.impl_);
  return record(OpTag::kConcat, std::move(inputs), out, [axis, offsets, out_cols](const Node& node) {
    const auto& g = node.output->grad;
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      auto& in = *node.inputs[k];
      if (!in.requires_grad) continue;
      const std::size_t pr = in.shape[0], pc = in.shape[1];
      for (std::size_t r = 0; r < pr; ++r) {
        for (std::size_t c = 0; c < pc; ++c) {
          const std::size_t orow = axis == 0 ? r + offsets[k] : r;
          const std::size_t ocol = axis == 0 ? c : c + offsets[k];
          in.grad[r * pc + c] += g[orow * out_cols + ocol];
        }
      }
    }
  });
}

Tensor Tape::slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  check_input(x, "slice");
  require_rank(x, 2, "slice", "input");
  if (axis > 1) throw ShapeError("slice: axis must be 0 or 1, got " + std::to_string(axis));
  if (begin >= end || end > x.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for dim " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Shape shape = axis == 0 ? Shape{end - begin, cols} : Shape{rows, end - begin};
  auto out = make_output(shape, {&x});
  const std::size_t oc = shape[1];
  const auto& xv = x.impl_->values;
  for (std::size_t r = 0; r < shape[0]; ++r) {
    for (std::size_t c = 0; c < oc; ++c) {
      const std::size_t sr = axis == 0 ? r + begin : r;
      const std::size_t sc = axis == 0 ? c : c + begin;
      out->values[r * oc + c] = xv[sr * cols + sc];
    }
  }
  return record(OpTag::kSlice, {x.impl_}, out, [axis, begin, cols, shape](const Node& node) {
    const auto& g = node.output->grad;
    auto& gx = node.inputs[0]->grad;
    const std::size_t oc = shape[1];
    for (std::size_t r = 0; r < shape[0]; ++r) {
      for (std::size_t c = 0; c < oc; ++c) {
        const std::size_t sr = axis == 0 ? r + begin : r;
        const std::size_t sc = axis == 0 ? c : c + begin;
        gx[sr * cols + sc] += g[r * oc + c];
      }
    }
  });
}

Tensor Tape::mean(const Tensor& x) {
  check_input(x, "mean");
  auto out = make_output({1}, {&x});
  const double n = static_cast<double>(x.numel());
  double s = 0.0;
  for (double v : x.impl_->values) s += v;
  out->values[0] = s / n;
  return record(OpTag::kMean, {x.impl_}, out, [n](const Node& node) {
    const double g = node.output->grad[0] / n;
    for (double& gx : node.inputs[0]->grad) gx += g;
  });
}

Tensor Tape::mean_rows(const Tensor& x) {
  check_input(x, "mean-rows");
  require_rank(x, 2, "mean-rows", "input");
  const std::size_t m = x.dim(0), n = x.dim(1);
  auto out = make_output({1, n}, {&x});
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = 0; j < n; ++j) out->values[j] += x.impl_->values[r * n + j];
  }
  for (double& v : out->values) v /= static_cast<double>(m);
  return record(OpTag::kMeanRows, {x.impl_}, out, [m, n](const Node& node) {
    const auto& g = node.output->grad;
    auto& gx = node.inputs[0]->grad;
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[j] * inv;
    }
  });
}

Tensor Tape::sum(const Tensor& x) {
  check_input(x, "sum");
  auto out = make_output({1}, {&x});
  double s = 0.0;
  for (double v : x.impl_->values) s += v;
  out->values[0] = s;
  return record(OpTag::kSum, {x.impl_}, out, [](const Node& node) {
    const double g = node.output->grad[0];
    for (double& gx : node.inputs[0]->grad) gx += g;
  });
}

Tensor Tape::transpose(const Tensor& x) {
  check_input(x, "transpose");
  require_rank(x, 2, "transpose", "input");
  const std::size_t m = x.dim(0), n = x.dim(1);
  auto out = make_output({n, m}, {&x});
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out->values[c * m + r] = x.impl_->values[r * n + c];
  }
  return record(OpTag::kTranspose, {x.impl_}, out, [m, n](const Node& node) {
    const auto& g = node.output->grad;
    auto& gx = node.inputs[0]->grad;
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += g[c * m + r];
    }
  });
}

Tensor Tape::masked_fill(const Tensor& x, const std::vector<bool>& mask, double value) {
  check_input(x, "masked-fill");
  if (mask.size() != x.numel()) {
    throw ShapeError("masked-fill: mask has " + std::to_string(mask.size()) + " entries for tensor " +
                     shape_str(x.shape()));
  }
  auto out = make_output(x.shape(), {&x});
  for (std::size_t i = 0; i < mask.size(); ++i) out->values[i] = mask[i] ? value : x.impl_->values[i];
  return record(OpTag::kMaskedFill, {x.impl_}, out, [mask](const Node& node) {
    const auto& g = node.output->grad;
    auto& gx = node.inputs[0]->grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!mask[i]) gx[i] += g[i];
    }
  });
}

Tensor Tape::cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  check_input(logits, "cross-entropy");
  require_rank(logits, 2, "cross-entropy", "logits");
  const std::size_t m = logits.dim(0), n = logits.dim(1);
  if (targets.size() != m) {
    throw ShapeError("cross-entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(m) + " rows");
  }
  for (std::size_t t : targets) {
    if (t >= n) throw ShapeError("cross-entropy: target " + std::to_string(t) + " outside " + std::to_string(n) + " classes");
  }
  auto out = make_output({1}, {&logits});
  auto probs = std::make_shared<std::vector<double>>(m * n);
  const auto& lv = logits.impl_->values;
  double total = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = lv.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += ((*probs)[r * n + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) (*probs)[r * n + j] /= z;
    total += -(row[targets[r]] - mx - std::log(z));
  }
  out->values[0] = total / static_cast<double>(m);
  std::vector<std::size_t> saved(targets.begin(), targets.end());
  return record(OpTag::kCrossEntropy, {logits.impl_}, out,
                [m, n, probs, saved = std::move(saved)](const Node& node) {
                  const double g = node.output->grad[0] / static_cast<double>(m);
                  auto& gx = node.inputs[0]->grad;
                  for (std::size_t r = 0; r < m; ++r) {
                    for (std::size_t j = 0; j < n; ++j) {
                      gx[r * n + j] += g * ((*probs)[r * n + j] - (j == saved[r] ? 1.0 : 0.0));
                    }
                  }
                });
}

Tensor Tape::gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  check_input(x, "gather-rows");
  require_rank(x, 2, "gather-rows", "input");
  if (rows.empty()) throw ShapeError("gather-rows: empty row list");
  const std::size_t m = x.dim(0), n = x.dim(1);
  for (std::size_t r : rows) {
    if (r >= m) throw ShapeError("gather-rows: row " + std::to_string(r) + " outside " + shape_str(x.shape()));
  }
  auto out = make_output({rows.size(), n}, {&x});
  for (std::size_t k = 0; k < rows.size(); ++k) {
    std::copy_n(x.impl_->values.data() + rows[k] * n, n, out->values.data() + k * n);
  }
  std::vector<std::size_t> saved(rows.begin(), rows.end());
  return record(OpTag::kGatherRows, {x.impl_}, out, [saved = std::move(saved), n](const Node& node) {
    const auto& g = node.output->grad;
    auto& gx = node.inputs[0]->grad;
    for (std::size_t k = 0; k < saved.size(); ++k) {
      for (std::size_t j = 0; j < n; ++j) gx[saved[k] * n + j] += g[k * n + j];
    }
  });
}

Tensor Tape::l2_normalize_rows(const Tensor& x) {
  check_input(x, "l2-normalize-rows");
  require_rank(x, 2, "l2-normalize-rows", "input");
  const std::size_t m = x.dim(0), n = x.dim(1);
  auto out = make_output(x.shape(), {&x});
  auto norms = std::make_shared<std::vector<double>>(m);
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += x.impl_->values[r * n + j] * x.impl_->values[r * n + j];
    const double nrm = std::sqrt(s);
    if (nrm == 0.0 || !std::isfinite(nrm)) {
      throw std::domain_error("l2-normalize-rows: row " + std::to_string(r) + " has zero or non-finite norm");
    }
    (*norms)[r] = nrm;
    for (std::size_t j = 0; j < n; ++j) out->values[r * n + j] = x.impl_->values[r * n + j] / nrm;
  }
  return record(OpTag::kL2NormalizeRows, {x.impl_}, out, [m, n, norms](const Node& node) {
    const auto& y = node.output->values;
    const auto& g = node.output->grad;
    auto& gx = node.inputs[0]->grad;
    for (std::size_t r = 0; r < m; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += (g[r * n + j] - y[r * n + j] * dot) / (*norms)[r];
    }
  });
}

// ---------------------------------------------------------------------------
// Dispatch

Tensor Tape::apply(std::string_view tag, std::span<const Tensor> inputs, const OpAttrs& attrs) {
  auto parsed = parse_op_tag(tag);
  if (!parsed) throw std::invalid_argument("unknown op-tag '" + std::string(tag) + "'");
  return apply(*parsed, inputs, attrs);
}

Tensor Tape::apply(OpTag tag, std::span<const Tensor> inputs, const OpAttrs& attrs) {
  auto need = [&](std::size_t k) {
    if (inputs.size() != k) {
      throw std::invalid_argument(std::string(op_name(tag)) + " takes " + std::to_string(k) +
                                  " inputs, got " + std::to_string(inputs.size()));
    }
  };
  switch (tag) {
    case OpTag::kMatMul: need(2); return matmul(inputs[0], inputs[1]);
    case OpTag::kAdd: need(2); return add(inputs[0], inputs[1]);
    case OpTag::kSub: need(2); return sub(inputs[0], inputs[1]);
    case OpTag::kMul: need(2); return mul(inputs[0], inputs[1]);
    case OpTag::kScale: need(1); return scale(inputs[0], attrs.scalar);
    case OpTag::kSoftmax: need(1); return softmax(inputs[0]);
    case OpTag::kLogSoftmax: need(1); return log_softmax(inputs[0]);
    case OpTag::kLayerNorm: need(3); return layer_norm(inputs[0], inputs[1], inputs[2]);
    case OpTag::kGelu: need(1); return gelu(inputs[0]);
    case OpTag::kEmbedding: need(1); return embedding(inputs[0], attrs.indices);
    case OpTag::kConcat: return concat(inputs, attrs.axis);
    case OpTag::kSlice: need(1); return slice(inputs[0], attrs.axis, attrs.begin, attrs.end);
    case OpTag::kMean: need(1); return mean(inputs[0]);
    case OpTag::kMeanRows: need(1); return mean_rows(inputs[0]);
    case OpTag::kSum: need(1); return sum(inputs[0]);
    case OpTag::kTranspose: need(1); return transpose(inputs[0]);
    case OpTag::kMaskedFill: need(1); return masked_fill(inputs[0], attrs.mask, attrs.scalar);
    case OpTag::kCrossEntropy: need(1); return cross_entropy(inputs[0], attrs.indices);
    case OpTag::kGatherRows: need(1); return gather_rows(inputs[0], attrs.indices);
    case OpTag::kL2NormalizeRows: need(1); return l2_normalize_rows(inputs[0]);
  }
  throw std::invalid_argument("unknown op-tag");
}

}  // namespace ub
