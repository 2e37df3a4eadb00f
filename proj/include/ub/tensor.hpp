// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ub {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  const Tape* tape = nullptr;  // null for leaves (parameters, constants)
};
}  // namespace detail

// Dense row-major float64 tensor. Copies share storage; the shape never changes
// after construction. Leaves are parameters (with a gradient buffer) or
// constants. Every other tensor is produced by a Tape op and belongs to it.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor scalar(double v);
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  std::size_t rows() const;  // dim(0) of a rank-2 tensor
  std::size_t cols() const;  // dim(1) of a rank-2 tensor

  std::span<const double> values() const;
  // Writable view. Only leaves may be mutated (optimizer, checkpoint load).
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Fresh constant leaf holding a copy of the values.
  Tensor detach() const;
  // Fresh parameter leaf holding a copy of the values.
  Tensor clone_parameter() const;

  const void* identity() const { return impl_.get(); }

 private:
  friend class Tape;
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

enum class OpTag {
  kMatMul,
  kAdd,
  kSub,
  kMul,
  kScale,
  kSoftmax,
  kLogSoftmax,
  kLayerNorm,
  kGelu,
  kEmbedding,
  kConcat,
  kSlice,
  kMean,
  kMeanRows,
  kSum,
  kTranspose,
  kMaskedFill,
  kCrossEntropy,
  kGatherRows,
  kL2NormalizeRows,
};

std::string_view op_name(OpTag tag);
std::optional<OpTag> parse_op_tag(std::string_view name);
std::vector<OpTag> all_op_tags();

// Extra arguments for the string-dispatched entry point Tape::apply.
struct OpAttrs {
  std::size_t axis = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  double scalar = 1.0;
  std::vector<std::size_t> indices;
  std::vector<bool> mask;
};

inline constexpr double kMaskFillValue = -1e9;
inline constexpr double kLayerNormEps = 1e-10;

// Append-only computation record. Ops run eagerly and push a node holding the
// saved state for backward. Nodes are topologically ordered by construction.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // [m,k] x [k,n] -> [m,n]
  Tensor matmul(const Tensor& a, const Tensor& b);
  // Same shape, or a rank-2 [m,n] plus a rank-1 [n] bias.
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& x, double factor);
  // Along the last axis.
  Tensor softmax(const Tensor& x);
  Tensor log_softmax(const Tensor& x);
  // x: [m,n], gain/shift: [n]. Normalizes along the last axis.
  Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift);
  Tensor gelu(const Tensor& x);
  // table: [V,d] -> [ids.size(), d]
  Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);
  // Rank-2 concat along axis 0 or 1.
  Tensor concat(std::span<const Tensor> parts, std::size_t axis);
  // Rank-2 half-open slice [begin,end) along axis 0 or 1.
  Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
  // Mean of all elements -> [1].
  Tensor mean(const Tensor& x);
  // [m,n] -> [1,n]
  Tensor mean_rows(const Tensor& x);
  Tensor sum(const Tensor& x);
  Tensor transpose(const Tensor& x);
  // Elements where mask is true become `value`; their gradient is zero.
  Tensor masked_fill(const Tensor& x, const std::vector<bool>& mask, double value = kMaskFillValue);
  // Mean over rows of -log softmax(logits)[target]. logits: [m,V].
  Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);
  Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
  // Unit L2 norm per row. Throws on a zero-norm row.
  Tensor l2_normalize_rows(const Tensor& x);

  // String-dispatched entry point. Throws std::invalid_argument on an unknown tag.
  Tensor apply(std::string_view tag, std::span<const Tensor> inputs, const OpAttrs& attrs = {});
  Tensor apply(OpTag tag, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

  // Seeds d(loss)/d(loss) = 1 and walks nodes in reverse, accumulating into
  // every grad-requiring input. Throws if the loss is not a scalar or if called
  // twice without reset().
  void backward(const Tensor& loss);
  void reset();

  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }
  OpTag node_tag(std::size_t i) const { return nodes_.at(i).tag; }

 private:
  using ImplPtr = std::shared_ptr<detail::TensorImpl>;
  struct Node {
    OpTag tag;
    std::vector<ImplPtr> inputs;
    ImplPtr output;
    std::function<void(const Node&)> backward;
  };

  ImplPtr make_output(Shape shape, std::initializer_list<const Tensor*> inputs);
  ImplPtr make_output(Shape shape, std::span<const Tensor> inputs);
  void check_input(const Tensor& t, std::string_view op) const;
  Tensor record(OpTag tag, std::vector<ImplPtr> inputs, ImplPtr out,
                std::function<void(const Node&)> backward);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// [rows,1] column of ones; matmul with a [1,n] row broadcasts it.
Tensor ones_column(std::size_t rows);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

}  // namespace ub
