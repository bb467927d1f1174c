#include "ggnet/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

namespace ggnet {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  mutable std::vector<double> grad;  // allocated on first touch
  bool requires_grad = false;
  bool leaf = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  std::size_t size() const { return value.size(); }
  void ensure_grad() const {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool g_grad_enabled = true;

std::shared_ptr<Node> make_leaf(Shape shape, std::vector<double> value,
                                bool requires_grad) {
  if (shape_size(shape) != value.size()) {
    throw ShapeError("tensor data length does not match shape");
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->leaf = true;
  n->id = g_next_id.fetch_add(1);
  return n;
}

std::shared_ptr<Node> make_op(Shape shape, std::vector<double> value,
                              std::vector<std::shared_ptr<Node>> parents,
                              std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->id = g_next_id.fetch_add(1);
  if (g_grad_enabled) {
    for (const auto& p : parents) {
      if (p->requires_grad) {
        n->requires_grad = true;
        break;
      }
    }
  }
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

}  // namespace
}  // namespace detail

using detail::Node;

Tensor::Tensor() = default;

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return Tensor(detail::make_leaf(shape, std::vector<double>(shape_size(shape), 0.0),
                                  requires_grad));
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return Tensor(detail::make_leaf(shape, std::vector<double>(shape_size(shape), value),
                                  requires_grad));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data,
                         bool requires_grad) {
  return Tensor(detail::make_leaf(shape, std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(detail::make_leaf(Shape{}, {value}, requires_grad));
}

Tensor Tensor::uniform(const Shape& shape, double lo, double hi, Rng& rng,
                       bool requires_grad) {
  std::vector<double> data(shape_size(shape));
  for (double& x : data) x = rng.uniform(lo, hi);
  return Tensor(detail::make_leaf(shape, std::move(data), requires_grad));
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }
const std::vector<double>& Tensor::data() const { return node_->value; }

double Tensor::value() const {
  if (size() != 1) throw ShapeError("value() requires a scalar tensor");
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) throw ShapeError("index rank mismatch in at()");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= s[axis]) throw ShapeError("index out of range in at()");
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

const std::vector<double>& Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  node_->grad.assign(node_->value.size(), 0.0);
}

void Tensor::scale_grad(double factor) {
  node_->ensure_grad();
  for (double& g : node_->grad) g *= factor;
}

void Tensor::set_data(std::vector<double> data) {
  if (data.size() != node_->value.size()) {
    throw ShapeError("set_data length mismatch");
  }
  if (!node_->leaf) throw ConfigError("set_data is only valid on leaf tensors");
  node_->value = std::move(data);
}

void Tensor::apply_update(const std::vector<double>& delta, double alpha) {
  if (delta.size() != node_->value.size()) {
    throw ShapeError("apply_update length mismatch");
  }
  if (!node_->leaf) throw ConfigError("apply_update is only valid on leaf tensors");
  for (std::size_t i = 0; i < delta.size(); ++i) node_->value[i] += alpha * delta[i];
}

Tensor Tensor::detached() const {
  return Tensor(detail::make_leaf(node_->shape, node_->value, false));
}

// ----------------------------------------------------------------- helpers

namespace {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> strides(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) strides[i - 1] = strides[i] * s[i];
  return strides;
}

}  // namespace

// -------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto an = a.node();
  auto bn = b.node();
  std::vector<double> out(an->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->value[i] + bn->value[i];
  return Tensor(detail::make_op(a.shape(), std::move(out), {an, bn}, [an, bn](Node& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] += n.grad[i];
    }
  }));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto an = a.node();
  auto bn = b.node();
  std::vector<double> out(an->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->value[i] - bn->value[i];
  return Tensor(detail::make_op(a.shape(), std::move(out), {an, bn}, [an, bn](Node& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] -= n.grad[i];
    }
  }));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto an = a.node();
  auto bn = b.node();
  std::vector<double> out(an->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->value[i] * bn->value[i];
  return Tensor(detail::make_op(a.shape(), std::move(out), {an, bn}, [an, bn](Node& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        an->grad[i] += n.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        bn->grad[i] += n.grad[i] * an->value[i];
    }
  }));
}

Tensor scale(const Tensor& a, double c) {
  auto an = a.node();
  std::vector<double> out(an->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * an->value[i];
  return Tensor(detail::make_op(a.shape(), std::move(out), {an}, [an, c](Node& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += c * n.grad[i];
  }));
}

Tensor add_scalar(const Tensor& a, double c) {
  auto an = a.node();
  std::vector<double> out(an->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->value[i] + c;
  return Tensor(detail::make_op(a.shape(), std::move(out), {an}, [an](Node& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
  }));
}

Tensor add_rowvec(const Tensor& a, const Tensor& bias) {
  if (bias.ndim() != 1) throw ShapeError("add_rowvec: bias must be 1-D");
  const std::size_t c = bias.size();
  if (a.ndim() == 0 || a.shape().back() != c) {
    throw ShapeError("add_rowvec: trailing axis mismatch");
  }
  auto an = a.node();
  auto bn = bias.node();
  std::vector<double> out(an->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->value[i] + bn->value[i % c];
  return Tensor(detail::make_op(a.shape(), std::move(out), {an, bn}, [an, bn, c](Node& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) bn->grad[i % c] += n.grad[i];
    }
  }));
}

// ------------------------------------------------------------------- matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2) throw ShapeError("matmul: operands must be 2-D");
  const std::size_t r = a.dim(0), k = a.dim(1), c = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimension mismatch " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  auto an = a.node();
  auto bn = b.node();
  std::vector<double> out(r * c, 0.0);
  const double* pa = an->value.data();
  const double* pb = bn->value.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = pa[i * k + kk];
      if (aik == 0.0) continue;
      const double* brow = pb + kk * c;
      double* orow = out.data() + i * c;
      for (std::size_t j = 0; j < c; ++j) orow[j] += aik * brow[j];
    }
  }
  return Tensor(detail::make_op(
      Shape{r, c}, std::move(out), {an, bn}, [an, bn, r, k, c](Node& n) {
        const double* g = n.grad.data();
        if (an->requires_grad) {
          an->ensure_grad();
          // dA = G . B^T
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t kk = 0; kk < k; ++kk) {
              double acc = 0.0;
              const double* grow = g + i * c;
              const double* brow = bn->value.data() + kk * c;
              for (std::size_t j = 0; j < c; ++j) acc += grow[j] * brow[j];
              an->grad[i * k + kk] += acc;
            }
          }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          // dB = A^T . G
          for (std::size_t i = 0; i < r; ++i) {
            const double* arow = an->value.data() + i * k;
            const double* grow = g + i * c;
            for (std::size_t kk = 0; kk < k; ++kk) {
              const double aik = arow[kk];
              if (aik == 0.0) continue;
              double* brow = bn->grad.data() + kk * c;
              for (std::size_t j = 0; j < c; ++j) brow[j] += aik * grow[j];
            }
          }
        }
      }));
}

// -------------------------------------------------------------- activations

namespace {

Tensor unary_op(const Tensor& a, const std::function<double(double)>& f,
                std::function<void(const Node&, Node&)> backprop) {
  auto an = a.node();
  std::vector<double> out(an->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(an->value[i]);
  auto bp = [an, backprop = std::move(backprop)](Node& n) {
    an->ensure_grad();
    backprop(*an, n);
  };
  return Tensor(detail::make_op(a.shape(), std::move(out), {an}, std::move(bp)));
}

}  // namespace

Tensor relu(const Tensor& a) {
  auto an = a.node();
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [an](const Node& p, Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i)
          if (p.value[i] > 0.0) an->grad[i] += n.grad[i];
      });
}

Tensor elu(const Tensor& a) {
  auto an = a.node();
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
      [an](const Node& p, Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          const double d = p.value[i] > 0.0 ? 1.0 : n.value[i] + 1.0;
          an->grad[i] += d * n.grad[i];
        }
      });
}

Tensor tanh_f(const Tensor& a) {
  auto an = a.node();
  return unary_op(
      a, [](double x) { return std::tanh(x); },
      [an](const Node&, Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i)
          an->grad[i] += (1.0 - n.value[i] * n.value[i]) * n.grad[i];
      });
}

Tensor sigmoid(const Tensor& a) {
  auto an = a.node();
  return unary_op(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [an](const Node&, Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i)
          an->grad[i] += n.value[i] * (1.0 - n.value[i]) * n.grad[i];
      });
}

namespace {

// Sum in ascending value order: the result depends only on the multiset of
// addends, which keeps graph operations exactly permutation-equivariant.
double sorted_sum(std::vector<double>& terms) {
  if (terms.size() <= 16) {
    for (std::size_t i = 1; i < terms.size(); ++i) {
      double key = terms[i];
      std::size_t j = i;
      while (j > 0 && terms[j - 1] > key) {
        terms[j] = terms[j - 1];
        --j;
      }
      terms[j] = key;
    }
  } else {
    std::sort(terms.begin(), terms.end());
  }
  double acc = 0.0;
  for (double t : terms) acc += t;
  return acc;
}

}  // namespace

Tensor softmax_rows(const Tensor& m) {
  if (m.ndim() != 2) throw ShapeError("softmax_rows: input must be 2-D");
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  auto an = m.node();
  std::vector<double> out(rows * cols);
  std::vector<double> terms(cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* x = an->value.data() + i * cols;
    double mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    for (std::size_t j = 0; j < cols; ++j) {
      out[i * cols + j] = std::exp(x[j] - mx);
      terms[j] = out[i * cols + j];
    }
    const double z = sorted_sum(terms);
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] /= z;
  }
  return Tensor(detail::make_op(
      m.shape(), std::move(out), {an}, [an, rows, cols](Node& n) {
        an->ensure_grad();
        for (std::size_t i = 0; i < rows; ++i) {
          const double* y = n.value.data() + i * cols;
          const double* g = n.grad.data() + i * cols;
          double dot = 0.0;
          for (std::size_t j = 0; j < cols; ++j) dot += g[j] * y[j];
          double* d = an->grad.data() + i * cols;
          for (std::size_t j = 0; j < cols; ++j) d[j] += y[j] * (g[j] - dot);
        }
      }));
}

// ------------------------------------------------------------------- conv1d

Tensor conv1d_centered(const Tensor& input, const Tensor& kernel,
                       std::size_t dilation) {
  if (kernel.ndim() != 3) throw ShapeError("conv1d_centered: kernel must be [k,H,H']");
  const std::size_t k = kernel.dim(0);
  if (k % 2 == 0) throw ConfigError("conv1d_centered: kernel length must be odd");
  if (dilation < 1) throw ConfigError("conv1d_centered: dilation must be >= 1");
  const bool batched = input.ndim() == 3;
  if (!batched && input.ndim() != 2) {
    throw ShapeError("conv1d_centered: input must be [T,H] or [B,T,H]");
  }
  const std::size_t b = batched ? input.dim(0) : 1;
  const std::size_t t_len = batched ? input.dim(1) : input.dim(0);
  const std::size_t h_in = batched ? input.dim(2) : input.dim(1);
  const std::size_t h_out = kernel.dim(2);
  if (kernel.dim(1) != h_in) {
    throw ShapeError("conv1d_centered: kernel input width mismatch");
  }
  const std::ptrdiff_t center = static_cast<std::ptrdiff_t>((k - 1) / 2);

  auto in_node = input.node();
  auto k_node = kernel.node();
  std::vector<double> out(b * t_len * h_out, 0.0);
  const double* pin = in_node->value.data();
  const double* pk = k_node->value.data();
  for (std::size_t bb = 0; bb < b; ++bb) {
    for (std::size_t t = 0; t < t_len; ++t) {
      double* orow = out.data() + (bb * t_len + t) * h_out;
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t tau =
            static_cast<std::ptrdiff_t>(t) +
            (static_cast<std::ptrdiff_t>(j) - center) * static_cast<std::ptrdiff_t>(dilation);
        if (tau < 0 || tau >= static_cast<std::ptrdiff_t>(t_len)) continue;  // zero pad
        const double* irow = pin + (bb * t_len + static_cast<std::size_t>(tau)) * h_in;
        const double* krow = pk + j * h_in * h_out;
        for (std::size_t hi = 0; hi < h_in; ++hi) {
          const double v = irow[hi];
          if (v == 0.0) continue;
          const double* kcol = krow + hi * h_out;
          for (std::size_t ho = 0; ho < h_out; ++ho) orow[ho] += v * kcol[ho];
        }
      }
    }
  }

  Shape out_shape = batched ? Shape{b, t_len, h_out} : Shape{t_len, h_out};
  return Tensor(detail::make_op(
      std::move(out_shape), std::move(out), {in_node, k_node},
      [in_node, k_node, b, t_len, h_in, h_out, k, center, dilation](Node& n) {
        const double* g = n.grad.data();
        const bool din = in_node->requires_grad;
        const bool dk = k_node->requires_grad;
        if (din) in_node->ensure_grad();
        if (dk) k_node->ensure_grad();
        for (std::size_t bb = 0; bb < b; ++bb) {
          for (std::size_t t = 0; t < t_len; ++t) {
            const double* grow = g + (bb * t_len + t) * h_out;
            for (std::size_t j = 0; j < k; ++j) {
              const std::ptrdiff_t tau =
                  static_cast<std::ptrdiff_t>(t) +
                  (static_cast<std::ptrdiff_t>(j) - center) *
                      static_cast<std::ptrdiff_t>(dilation);
              if (tau < 0 || tau >= static_cast<std::ptrdiff_t>(t_len)) continue;
              const std::size_t in_off =
                  (bb * t_len + static_cast<std::size_t>(tau)) * h_in;
              const double* kslice = k_node->value.data() + j * h_in * h_out;
              for (std::size_t hi = 0; hi < h_in; ++hi) {
                double acc = 0.0;
                const double* kcol = kslice + hi * h_out;
                for (std::size_t ho = 0; ho < h_out; ++ho) acc += kcol[ho] * grow[ho];
                if (din) in_node->grad[in_off + hi] += acc;
                if (dk) {
                  const double v = in_node->value[in_off + hi];
                  if (v != 0.0) {
                    double* kg = k_node->grad.data() + (j * h_in + hi) * h_out;
                    for (std::size_t ho = 0; ho < h_out; ++ho)
                      kg[ho] += v * grow[ho];
                  }
                }
              }
            }
          }
        }
      }));
}

Tensor aggregate_nodes(const Tensor& adjacency, const Tensor& features) {
  if (adjacency.ndim() != 2 || adjacency.dim(0) != adjacency.dim(1)) {
    throw ShapeError("aggregate_nodes: adjacency must be square");
  }
  if (features.ndim() != 2 || features.dim(0) != adjacency.dim(0)) {
    throw ShapeError("aggregate_nodes: feature rows must match adjacency");
  }
  const std::size_t v = adjacency.dim(0), m = features.dim(1);
  auto an = adjacency.node();
  auto fn = features.node();
  std::vector<double> out(v * m, 0.0);
  std::vector<double> terms(v);
  const double* pa = an->value.data();
  const double* pf = fn->value.data();
  for (std::size_t i = 0; i < v; ++i) {
    const double* arow = pa + i * v;
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t k = 0; k < v; ++k) terms[k] = arow[k] * pf[k * m + j];
      out[i * m + j] = sorted_sum(terms);
    }
  }
  return Tensor(detail::make_op(
      Shape{v, m}, std::move(out), {an, fn}, [an, fn, v, m](Node& n) {
        const double* g = n.grad.data();
        if (an->requires_grad) {
          an->ensure_grad();
          // dA = G . X^T
          for (std::size_t i = 0; i < v; ++i) {
            for (std::size_t k = 0; k < v; ++k) {
              double acc = 0.0;
              const double* grow = g + i * m;
              const double* frow = fn->value.data() + k * m;
              for (std::size_t j = 0; j < m; ++j) acc += grow[j] * frow[j];
              an->grad[i * v + k] += acc;
            }
          }
        }
        if (fn->requires_grad) {
          fn->ensure_grad();
          // dX = A^T . G
          for (std::size_t i = 0; i < v; ++i) {
            const double* arow = an->value.data() + i * v;
            const double* grow = g + i * m;
            for (std::size_t k = 0; k < v; ++k) {
              const double a = arow[k];
              if (a == 0.0) continue;
              double* frow = fn->grad.data() + k * m;
              for (std::size_t j = 0; j < m; ++j) frow[j] += a * grow[j];
            }
          }
        }
      }));
}

// --------------------------------------------------------------- structural

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range");
  std::size_t total_axis = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis && p.shape()[d] != first[d]) {
        throw ShapeError("concat: non-axis dimension mismatch");
      }
    }
    total_axis += p.shape()[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total_axis;

  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  std::vector<double> out(shape_size(out_shape));
  std::vector<std::shared_ptr<Node>> nodes;
  nodes.reserve(parts.size());
  std::vector<std::size_t> axis_sizes;
  for (const Tensor& p : parts) {
    nodes.push_back(p.node());
    axis_sizes.push_back(p.shape()[axis]);
  }
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const std::size_t a = axis_sizes[pi];
    const double* src = nodes[pi]->value.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(src + o * a * inner, src + (o + 1) * a * inner,
                out.begin() + (o * total_axis + offset) * inner);
    }
    offset += a;
  }

  return Tensor(detail::make_op(
      std::move(out_shape), std::move(out), nodes,
      [nodes, axis_sizes, outer, inner, total_axis](Node& n) {
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
          const std::size_t a = axis_sizes[pi];
          if (nodes[pi]->requires_grad) {
            nodes[pi]->ensure_grad();
            double* dst = nodes[pi]->grad.data();
            for (std::size_t o = 0; o < outer; ++o) {
              const double* src = n.grad.data() + (o * total_axis + off) * inner;
              double* d = dst + o * a * inner;
              for (std::size_t i = 0; i < a * inner; ++i) d[i] += src[i];
            }
          }
          off += a;
        }
      }));
}

Tensor index_select(const Tensor& a, std::size_t axis,
                    const std::vector<std::size_t>& indices) {
  const Shape& s = a.shape();
  if (axis >= s.size()) throw ShapeError("index_select: axis out of range");
  for (std::size_t i : indices) {
    if (i >= s[axis]) throw ShapeError("index_select: index out of range");
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t in_axis = s[axis];
  const std::size_t out_axis = indices.size();

  Shape out_shape = s;
  out_shape[axis] = out_axis;
  std::vector<double> out(outer * out_axis * inner);
  auto an = a.node();
  const double* src = an->value.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < out_axis; ++j) {
      std::copy(src + (o * in_axis + indices[j]) * inner,
                src + (o * in_axis + indices[j] + 1) * inner,
                out.begin() + (o * out_axis + j) * inner);
    }
  }
  return Tensor(detail::make_op(
      std::move(out_shape), std::move(out), {an},
      [an, indices, outer, inner, in_axis, out_axis](Node& n) {
        an->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t j = 0; j < out_axis; ++j) {
            const double* g = n.grad.data() + (o * out_axis + j) * inner;
            double* d = an->grad.data() + (o * in_axis + indices[j]) * inner;
            for (std::size_t i = 0; i < inner; ++i) d[i] += g[i];
          }
        }
      }));
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: element count mismatch " + shape_str(a.shape()) +
                     " -> " + shape_str(shape));
  }
  auto an = a.node();
  std::vector<double> out = an->value;
  return Tensor(detail::make_op(shape, std::move(out), {an}, [an](Node& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
  }));
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const Shape& s = a.shape();
  if (axes.size() != s.size()) throw ShapeError("permute: axes rank mismatch");
  std::vector<bool> seen(s.size(), false);
  for (std::size_t ax : axes) {
    if (ax >= s.size() || seen[ax]) throw ShapeError("permute: invalid axes");
    seen[ax] = true;
  }
  Shape out_shape(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out_shape[i] = s[axes[i]];
  const auto in_strides = row_major_strides(s);
  // stride in the input for each output axis
  std::vector<std::size_t> contrib(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) contrib[i] = in_strides[axes[i]];

  auto an = a.node();
  const std::size_t n_elem = a.size();
  std::vector<double> out(n_elem);
  std::vector<std::size_t> idx(s.size(), 0);
  std::size_t in_flat = 0;
  for (std::size_t of = 0; of < n_elem; ++of) {
    out[of] = an->value[in_flat];
    // increment output multi-index, tracking the input offset
    for (std::size_t d = s.size(); d-- > 0;) {
      ++idx[d];
      in_flat += contrib[d];
      if (idx[d] < out_shape[d]) break;
      in_flat -= contrib[d] * idx[d];
      idx[d] = 0;
    }
  }
  return Tensor(detail::make_op(
      std::move(out_shape), std::move(out), {an},
      [an, contrib, shape = Shape(s)](Node& n) {
        an->ensure_grad();
        Shape out_s = n.shape;
        std::vector<std::size_t> idx(out_s.size(), 0);
        std::size_t in_flat = 0;
        for (std::size_t of = 0; of < n.grad.size(); ++of) {
          an->grad[in_flat] += n.grad[of];
          for (std::size_t d = out_s.size(); d-- > 0;) {
            ++idx[d];
            in_flat += contrib[d];
            if (idx[d] < out_s[d]) break;
            in_flat -= contrib[d] * idx[d];
            idx[d] = 0;
          }
        }
      }));
}

Tensor sum(const Tensor& a) {
  auto an = a.node();
  double acc = 0.0;
  for (double v : an->value) acc += v;
  return Tensor(detail::make_op(Shape{}, {acc}, {an}, [an](Node& n) {
    an->ensure_grad();
    const double g = n.grad[0];
    for (double& d : an->grad) d += g;
  }));
}

// ----------------------------------------------------------------- backward

void backward(const Tensor& root) {
  if (root.size() != 1) throw ShapeError("backward: root must be scalar");
  auto root_node = root.node();
  if (!root_node->requires_grad) return;

  // Collect reachable grad-requiring nodes; creation ids give topological order.
  std::vector<std::shared_ptr<Node>> order;
  std::vector<Node*> stack{root_node.get()};
  std::vector<std::shared_ptr<Node>> keep{root_node};
  // Use a sorted id set for visited tracking.
  std::vector<std::uint64_t> visited;
  auto mark = [&visited](std::uint64_t id) {
    auto it = std::lower_bound(visited.begin(), visited.end(), id);
    if (it != visited.end() && *it == id) return false;
    visited.insert(it, id);
    return true;
  };
  mark(root_node->id);
  order.push_back(root_node);
  while (!stack.empty()) {
    Node* cur = stack.back();
    stack.pop_back();
    for (const auto& p : cur->parents) {
      if (!p->requires_grad) continue;
      if (mark(p->id)) {
        order.push_back(p);
        stack.push_back(p.get());
      }
    }
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a->id > b->id; });

  root_node->ensure_grad();
  root_node->grad[0] += 1.0;
  for (const auto& n : order) {
    if (n->backprop) {
      n->ensure_grad();
      n->backprop(*n);
    }
  }
}

NoGradGuard::NoGradGuard() : previous_(detail::g_grad_enabled) {
  detail::g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { detail::g_grad_enabled = previous_; }

// --------------------------------------------------------------- grad check

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor point,
                  double epsilon) {
  if (epsilon < 1e-8 || epsilon > 1e-4) {
    throw ConfigError("grad_check: epsilon must lie in [1e-8, 1e-4]");
  }
  Tensor p = Tensor::from_data(point.shape(), point.data(), true);
  Tensor y = f(p);
  if (y.size() != 1) throw ShapeError("grad_check: f must return a scalar");
  if (!std::isfinite(y.value())) throw NumericError("grad_check: non-finite value");
  p.zero_grad();
  backward(y);
  const std::vector<double> analytic = p.grad();

  std::vector<double> probe = p.data();
  double max_err = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + epsilon;
    p.set_data(probe);
    const double y_plus = f(p).value();
    probe[i] = saved - epsilon;
    p.set_data(probe);
    const double y_minus = f(p).value();
    probe[i] = saved;
    p.set_data(probe);
    if (!std::isfinite(y_plus) || !std::isfinite(y_minus)) {
      throw NumericError("grad_check: non-finite value at probe");
    }
    const double numeric = (y_plus - y_minus) / (2.0 * epsilon);
    const double err =
        std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace ggnet
