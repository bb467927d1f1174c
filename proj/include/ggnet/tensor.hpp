#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "ggnet/errors.hpp"
#include "ggnet/rng.hpp"

namespace ggnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);

namespace detail {
struct Node;
}

/// Dense row-major f64 tensor with tape-based reverse-mode autodiff.
///
/// A Tensor is a cheap handle onto a tape node. Values are immutable once an
/// operation has consumed them; only leaf tensors (parameters) may be
/// rewritten in place via set_data / apply_update between training steps.
/// Node creation order doubles as the tape: every node's parents carry
/// smaller ids, and backward() walks ids in descending order, visiting each
/// reachable node exactly once.
class Tensor {
 public:
  Tensor();  // empty handle

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from_data(const Shape& shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// Uniform init in [lo, hi) from the given generator.
  static Tensor uniform(const Shape& shape, double lo, double hi, Rng& rng,
                        bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t size() const;
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }

  const std::vector<double>& data() const;
  double value() const;  // scalar tensors only
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  /// Gradient accumulated by backward(); zeros if no backward touched this leaf.
  const std::vector<double>& grad() const;
  void zero_grad();
  /// In-place gradient rescale (gradient clipping).
  void scale_grad(double factor);

  /// Replace the values of a leaf tensor (optimizer update, grad check probes).
  void set_data(std::vector<double> data);
  /// In-place axpy on a leaf: data += alpha * delta.
  void apply_update(const std::vector<double>& delta, double alpha);

  Tensor detached() const;  // same values, no tape history

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// ------------------------------------------------------------------ primitives
// All primitives record tape nodes when an input requires grad.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
/// a[..., C] + bias[C], broadcast over all leading axes.
Tensor add_rowvec(const Tensor& a, const Tensor& bias);
/// 2-D matrix product [R,K]x[K,C] -> [R,C].
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& a);
Tensor elu(const Tensor& a);
Tensor tanh_f(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// Row-wise softmax of a 2-D tensor; max-subtraction guards overflow.
Tensor softmax_rows(const Tensor& m);

/// Centered 1-D convolution with symmetric zero padding.
/// input [T,H] or [B,T,H]; kernel [k,H,H'] with k odd; output keeps T.
/// output[t] = sum_j kernel[j] . input[t + (j-(k-1)/2)*dilation]
Tensor conv1d_centered(const Tensor& input, const Tensor& kernel,
                       std::size_t dilation);

/// Matrix product [V,V]x[V,M] whose inner sums run in value-sorted order, so
/// the result is invariant under simultaneous relabeling of the V nodes.
/// Used for graph aggregations, where permutation equivariance must be exact.
Tensor aggregate_nodes(const Tensor& adjacency, const Tensor& features);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Gather slices along `axis`; indices may repeat. Backward scatter-adds.
Tensor index_select(const Tensor& a, std::size_t axis,
                    const std::vector<std::size_t>& indices);
Tensor reshape(const Tensor& a, const Shape& shape);
/// Axis permutation: out.shape[i] = a.shape[axes[i]].
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor sum(const Tensor& a);  // -> scalar

/// Reverse-mode sweep from a scalar root. Leaf gradients accumulate (+=);
/// call zero_grad on leaves between steps.
void backward(const Tensor& root);

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
/// `f` must rebuild its graph from `point` on every call.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor point,
                  double epsilon);

/// Suppresses tape recording for its scope (inference paths).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace ggnet
