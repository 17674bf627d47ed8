#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pcqa/errors.hpp"

namespace pcqa::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

/// Runtime switch for the non-finite output check; on by default in debug builds.
inline bool& numerics_checks() {
#ifdef NDEBUG
  static bool enabled = false;
#else
  static bool enabled = true;
#endif
  return enabled;
}

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until gradient flows here
  bool requires_grad = false;

  double* ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad.data();
  }
};

/// Shared handle to a dense row-major tensor of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor constant(Shape shape, std::vector<double> values) {
    if (values.size() != ad::numel(shape))
      throw ShapeError("value-count", std::to_string(values.size()) + " values for shape " + to_string(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    return Tensor(std::move(n));
  }
  static Tensor zeros(Shape shape) {
    const std::size_t n = ad::numel(shape);
    return constant(std::move(shape), std::vector<double>(n, 0.0));
  }
  static Tensor scalar(double v) { return constant({}, {v}); }
  /// Leaf that accumulates gradients across backward passes.
  static Tensor parameter(Shape shape, std::vector<double> values) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    t.node_->grad.assign(t.node_->value.size(), 0.0);
    return t;
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<double> values() { return node_->value; }
  std::span<const double> values() const { return node_->value; }
  double item() const {
    if (numel() != 1) throw ShapeError("not-scalar", to_string(shape()));
    return node_->value[0];
  }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * node_->shape.back() + c]; }

  /// Gradient buffer; zeros when nothing has flowed into this tensor yet.
  std::span<const double> grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

  Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node>& shared() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Ordered record of executed primitives. Supports exactly one backward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// A tape that records nothing; used for inference and finite differences.
  static Tape inference() {
    Tape t;
    t.recording_ = false;
    return t;
  }

  bool recording() const noexcept { return recording_; }
  bool consumed() const noexcept { return consumed_; }
  std::size_t size() const noexcept { return records_.size(); }

  template <class Backward>
  void record(const char* name, std::vector<std::shared_ptr<Node>> inputs, const std::shared_ptr<Node>& output,
              Backward&& backward) {
    records_.push_back({name, std::move(inputs), output, std::forward<Backward>(backward)});
  }

  void check_usable() const {
    if (consumed_) throw TapeError("consumed", "tape already used for a backward pass");
  }

  /// Seeds d(loss)/d(loss) = 1 and sweeps the records in reverse.
  void backward(const Tensor& loss) {
    check_usable();
    if (!loss.defined() || loss.numel() != 1) throw ShapeError("non-scalar-loss", loss.defined() ? to_string(loss.shape()) : "undefined");
    bool found = false;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it)
      if (it->output.get() == loss.node()) {
        found = true;
        break;
      }
    if (!found) throw TapeError("foreign-loss", "loss was not produced on this tape");
    consumed_ = true;
    loss.node()->ensure_grad()[0] += 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      if (it->output->grad.empty()) continue;
      it->backward();
    }
    // Intermediate buffers are released with the tape; leaf gradients persist.
    records_.clear();
  }

 private:
  struct Record {
    const char* name;
    std::vector<std::shared_ptr<Node>> inputs;
    std::shared_ptr<Node> output;
    std::function<void()> backward;
  };
  std::vector<Record> records_;
  bool recording_ = true;
  bool consumed_ = false;
};

namespace detail {

inline void check_finite(const Node& n, const char* op) {
  if (!numerics_checks()) return;
  for (double v : n.value)
    if (!std::isfinite(v)) throw NumericsError("non-finite", std::string(op) + " produced a non-finite value");
}

inline std::shared_ptr<Node> make_output(Shape shape) {
  auto n = std::make_shared<Node>();
  n->value.assign(numel(shape), 0.0);
  n->shape = std::move(shape);
  return n;
}

inline bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

/// Finishes a primitive: numerics check, then records it when gradients are needed.
template <class Backward>
Tensor finish(Tape& tape, const char* name, std::vector<Tensor> inputs, std::shared_ptr<Node> out,
              Backward&& backward) {
  tape.check_usable();
  check_finite(*out, name);
  bool needs = false;
  for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (tape.recording() && needs) {
    out->requires_grad = true;
    std::vector<std::shared_ptr<Node>> nodes;
    nodes.reserve(inputs.size());
    for (auto& t : inputs) nodes.push_back(t.shared());
    tape.record(name, std::move(nodes), out, std::forward<Backward>(backward));
  }
  return Tensor(std::move(out));
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) throw ShapeError("bad-axis", std::string(op) + ": axis " + std::to_string(axis) + " for shape " + to_string(s));
  AxisSplit a{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

inline Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape out = s;
  out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  return out;
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError("mismatch", std::string(op) + ": " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

inline void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank)
    throw ShapeError("rank", std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + to_string(a.shape()));
}

template <class Fwd, class Dfdx>
Tensor unary(Tape& tape, const char* name, const Tensor& x, Fwd fwd, Dfdx dfdx) {
  auto out = make_output(x.shape());
  const auto xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) out->value[i] = fwd(xv[i]);
  Node* xn = x.node();
  Node* on = out.get();
  return finish(tape, name, {x}, out, [xn, on, dfdx] {
    if (!xn->requires_grad) return;
    double* g = xn->ensure_grad();
    for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] += on->grad[i] * dfdx(xn->value[i], on->value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives. Each one computes its forward value and, when any input needs
// gradients, records the exact vector-Jacobian product on the tape.
// ---------------------------------------------------------------------------

/// (m x k) * (k x n)
inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  using namespace detail;
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0))
    throw ShapeError("mismatch", "matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = make_output({m, n});
  MapMat(out->value.data(), m, n).noalias() =
      MapConstMat(a.values().data(), m, k) * MapConstMat(b.values().data(), k, n);
  Node* an = a.node();
  Node* bn = b.node();
  Node* on = out.get();
  return finish(tape, "matmul", {a, b}, out, [an, bn, on, m, k, n] {
    MapConstMat g(on->grad.data(), m, n);
    if (an->requires_grad) MapMat(an->ensure_grad(), m, k).noalias() += g * MapConstMat(bn->value.data(), k, n).transpose();
    if (bn->requires_grad) MapMat(bn->ensure_grad(), k, n).noalias() += MapConstMat(an->value.data(), m, k).transpose() * g;
  });
}

inline Tensor transpose(Tape& tape, const Tensor& a) {
  using namespace detail;
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  auto out = make_output({n, m});
  MapMat(out->value.data(), n, m) = MapConstMat(a.values().data(), m, n).transpose();
  Node* an = a.node();
  Node* on = out.get();
  return finish(tape, "transpose", {a}, out, [an, on, m, n] {
    if (an->requires_grad) MapMat(an->ensure_grad(), m, n) += MapConstMat(on->grad.data(), n, m).transpose();
  });
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  using namespace detail;
  require_same_shape(a, b, "add");
  auto out = make_output(a.shape());
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a[i] + b[i];
  Node* an = a.node();
  Node* bn = b.node();
  Node* on = out.get();
  return finish(tape, "add", {a, b}, out, [an, bn, on] {
    for (Node* x : {an, bn}) {
      if (!x->requires_grad) continue;
      double* g = x->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] += on->grad[i];
    }
  });
}

inline Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  using namespace detail;
  require_same_shape(a, b, "sub");
  auto out = make_output(a.shape());
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a[i] - b[i];
  Node* an = a.node();
  Node* bn = b.node();
  Node* on = out.get();
  return finish(tape, "sub", {a, b}, out, [an, bn, on] {
    if (an->requires_grad) {
      double* g = an->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      double* g = bn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] -= on->grad[i];
    }
  });
}

/// Elementwise product of equally shaped tensors.
inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  using namespace detail;
  require_same_shape(a, b, "mul");
  auto out = make_output(a.shape());
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a[i] * b[i];
  Node* an = a.node();
  Node* bn = b.node();
  Node* on = out.get();
  return finish(tape, "mul", {a, b}, out, [an, bn, on] {
    if (an->requires_grad) {
      double* g = an->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] += on->grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      double* g = bn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] += on->grad[i] * an->value[i];
    }
  });
}

namespace detail {

inline void require_trailing(const Tensor& x, const Tensor& v, const char* op) {
  if (v.rank() != 1 || x.rank() == 0 || x.shape().back() != v.dim(0))
    throw ShapeError("mismatch", std::string(op) + ": " + to_string(x.shape()) + " with " + to_string(v.shape()));
}

}  // namespace detail

/// x[..., j] + bias[j]
inline Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  using namespace detail;
  require_trailing(x, bias, "add_bias");
  const std::size_t n = bias.numel(), rows = x.numel() / n;
  auto out = make_output(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out->value[r * n + j] = x[r * n + j] + bias[j];
  Node* xn = x.node();
  Node* bn = bias.node();
  Node* on = out.get();
  return finish(tape, "add_bias", {x, bias}, out, [xn, bn, on, rows, n] {
    if (xn->requires_grad) {
      double* g = xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      double* g = bn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) g[j] += on->grad[r * n + j];
    }
  });
}

/// x[..., j] * scale[j]
inline Tensor mul_bias(Tape& tape, const Tensor& x, const Tensor& scale) {
  using namespace detail;
  require_trailing(x, scale, "mul_bias");
  const std::size_t n = scale.numel(), rows = x.numel() / n;
  auto out = make_output(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out->value[r * n + j] = x[r * n + j] * scale[j];
  Node* xn = x.node();
  Node* sn = scale.node();
  Node* on = out.get();
  return finish(tape, "mul_bias", {x, scale}, out, [xn, sn, on, rows, n] {
    if (xn->requires_grad) {
      double* g = xn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) g[r * n + j] += on->grad[r * n + j] * sn->value[j];
    }
    if (sn->requires_grad) {
      double* g = sn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) g[j] += on->grad[r * n + j] * xn->value[r * n + j];
    }
  });
}

inline Tensor scale(Tape& tape, const Tensor& x, double c) {
  return detail::unary(tape, "scale", x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Tensor square(Tape& tape, const Tensor& x) {
  return detail::unary(tape, "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

/// sqrt(x + eps)
inline Tensor sqrt_eps(Tape& tape, const Tensor& x, double eps) {
  return detail::unary(
      tape, "sqrt_eps", x, [eps](double v) { return std::sqrt(v + eps); },
      [](double, double y) { return 0.5 / y; });
}

inline Tensor reciprocal(Tape& tape, const Tensor& x) {
  return detail::unary(
      tape, "reciprocal", x, [](double v) { return 1.0 / v; }, [](double, double y) { return -y * y; });
}

inline Tensor leaky_relu(Tape& tape, const Tensor& x, double slope) {
  return detail::unary(
      tape, "leaky_relu", x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

/// Same values, new shape with the same element count.
inline Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  using namespace detail;
  if (numel(shape) != x.numel()) throw ShapeError("mismatch", "reshape: " + to_string(x.shape()) + " to " + to_string(shape));
  auto out = make_output(std::move(shape));
  std::copy(x.values().begin(), x.values().end(), out->value.begin());
  Node* xn = x.node();
  Node* on = out.get();
  return finish(tape, "reshape", {x}, out, [xn, on] {
    if (!xn->requires_grad) return;
    double* g = xn->ensure_grad();
    for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] += on->grad[i];
  });
}

/// Rows [begin, end) of a matrix.
inline Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t begin, std::size_t end) {
  using namespace detail;
  require_rank(x, 2, "slice_rows");
  if (begin > end || end > x.dim(0))
    throw ShapeError("index", "slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " + to_string(x.shape()));
  const std::size_t n = x.dim(1);
  auto out = make_output({end - begin, n});
  std::copy_n(x.values().data() + begin * n, (end - begin) * n, out->value.data());
  Node* xn = x.node();
  Node* on = out.get();
  return finish(tape, "slice_rows", {x}, out, [xn, on, begin, n] {
    if (!xn->requires_grad) return;
    double* g = xn->ensure_grad() + begin * n;
    for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] += on->grad[i];
  });
}

/// Concatenation along `axis`; all other dimensions must agree.
inline Tensor concat(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis) {
  using namespace detail;
  if (parts.empty()) throw ShapeError("empty", "concat of no tensors");
  Shape shape = parts.front().shape();
  if (axis >= shape.size()) throw ShapeError("bad-axis", "concat axis " + std::to_string(axis));
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = shape;
    if (a.size() != b.size()) throw ShapeError("mismatch", "concat: " + to_string(p.shape()) + " vs " + to_string(shape));
    a[axis] = b[axis] = 0;
    if (a != b) throw ShapeError("mismatch", "concat: " + to_string(p.shape()) + " vs " + to_string(shape));
    total += p.dim(axis);
  }
  shape[axis] = total;
  const AxisSplit s = split_axis(shape, axis, "concat");
  auto out = make_output(shape);
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(axis) * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(p.values().data() + o * w, w, out->value.data() + o * total * s.inner + offset);
    widths.push_back(w);
    offset += w;
  }
  std::vector<Node*> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  Node* on = out.get();
  return finish(tape, "concat", parts, out, [nodes, widths, on, s, total] {
    std::size_t off = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const std::size_t w = widths[k];
      if (nodes[k]->requires_grad) {
        double* g = nodes[k]->ensure_grad();
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t i = 0; i < w; ++i) g[o * w + i] += on->grad[o * total * s.inner + off + i];
      }
      off += w;
    }
  });
}

/// Rows of an (m x n) matrix picked by `indices`; the result has shape
/// index_shape + [n]. Backward scatter-adds, so repeated indices accumulate.
inline Tensor gather_rows(Tape& tape, const Tensor& x, std::vector<std::size_t> indices, Shape index_shape) {
  using namespace detail;
  require_rank(x, 2, "gather_rows");
  if (numel(index_shape) != indices.size()) throw ShapeError("mismatch", "gather_rows: index shape does not match index count");
  const std::size_t m = x.dim(0), n = x.dim(1);
  for (std::size_t idx : indices)
    if (idx >= m) throw ShapeError("index", "gather_rows: index " + std::to_string(idx) + " >= " + std::to_string(m));
  Shape shape = std::move(index_shape);
  shape.push_back(n);
  auto out = make_output(std::move(shape));
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(x.values().data() + indices[r] * n, n, out->value.data() + r * n);
  Node* xn = x.node();
  Node* on = out.get();
  return finish(tape, "gather_rows", {x}, out, [xn, on, idx = std::move(indices), n] {
    if (!xn->requires_grad) return;
    double* g = xn->ensure_grad();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const double* src = on->grad.data() + r * n;
      double* dst = g + idx[r] * n;
      for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
    }
  });
}

/// Maximum along `axis`; the gradient goes to the first maximal element.
inline Tensor max_over_axis(Tape& tape, const Tensor& x, std::size_t axis) {
  using namespace detail;
  const AxisSplit s = split_axis(x.shape(), axis, "max_over_axis");
  if (s.len == 0) throw ShapeError("empty", "max over an empty axis");
  auto out = make_output(drop_axis(x.shape(), axis));
  std::vector<std::size_t> arg(s.outer * s.inner);
  const double* xv = x.values().data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = o * s.len * s.inner + i;
      for (std::size_t l = 1; l < s.len; ++l) {
        const std::size_t at = (o * s.len + l) * s.inner + i;
        if (xv[at] > xv[best]) best = at;
      }
      arg[o * s.inner + i] = best;
      out->value[o * s.inner + i] = xv[best];
    }
  Node* xn = x.node();
  Node* on = out.get();
  return finish(tape, "max_over_axis", {x}, out, [xn, on, arg = std::move(arg)] {
    if (!xn->requires_grad) return;
    double* g = xn->ensure_grad();
    for (std::size_t r = 0; r < arg.size(); ++r) g[arg[r]] += on->grad[r];
  });
}

inline Tensor sum_over_axis(Tape& tape, const Tensor& x, std::size_t axis) {
  using namespace detail;
  const AxisSplit s = split_axis(x.shape(), axis, "sum_over_axis");
  auto out = make_output(drop_axis(x.shape(), axis));
  const double* xv = x.values().data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i) out->value[o * s.inner + i] += xv[(o * s.len + l) * s.inner + i];
  Node* xn = x.node();
  Node* on = out.get();
  return finish(tape, "sum_over_axis", {x}, out, [xn, on, s] {
    if (!xn->requires_grad) return;
    double* g = xn->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t l = 0; l < s.len; ++l)
        for (std::size_t i = 0; i < s.inner; ++i) g[(o * s.len + l) * s.inner + i] += on->grad[o * s.inner + i];
  });
}

inline Tensor mean_over_axis(Tape& tape, const Tensor& x, std::size_t axis) {
  using namespace detail;
  const AxisSplit s = split_axis(x.shape(), axis, "mean_over_axis");
  if (s.len == 0) throw ShapeError("empty", "mean over an empty axis");
  auto out = make_output(drop_axis(x.shape(), axis));
  const double* xv = x.values().data();
  const double inv = 1.0 / static_cast<double>(s.len);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      double acc = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) acc += xv[(o * s.len + l) * s.inner + i];
      out->value[o * s.inner + i] = acc * inv;
    }
  Node* xn = x.node();
  Node* on = out.get();
  return finish(tape, "mean_over_axis", {x}, out, [xn, on, s, inv] {
    if (!xn->requires_grad) return;
    double* g = xn->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t l = 0; l < s.len; ++l)
        for (std::size_t i = 0; i < s.inner; ++i) g[(o * s.len + l) * s.inner + i] += on->grad[o * s.inner + i] * inv;
  });
}

/// Population variance (divide by the axis length).
inline Tensor variance_over_axis(Tape& tape, const Tensor& x, std::size_t axis) {
  using namespace detail;
  const AxisSplit s = split_axis(x.shape(), axis, "variance_over_axis");
  if (s.len == 0) throw ShapeError("empty", "variance over an empty axis");
  auto out = make_output(drop_axis(x.shape(), axis));
  std::vector<double> mean(s.outer * s.inner, 0.0);
  const double* xv = x.values().data();
  const double inv = 1.0 / static_cast<double>(s.len);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      double acc = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) acc += xv[(o * s.len + l) * s.inner + i];
      const double mu = acc * inv;
      double var = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) {
        const double d = xv[(o * s.len + l) * s.inner + i] - mu;
        var += d * d;
      }
      mean[o * s.inner + i] = mu;
      out->value[o * s.inner + i] = var * inv;
    }
  Node* xn = x.node();
  Node* on = out.get();
  return finish(tape, "variance_over_axis", {x}, out, [xn, on, s, inv, mean = std::move(mean)] {
    if (!xn->requires_grad) return;
    double* g = xn->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t l = 0; l < s.len; ++l)
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t at = (o * s.len + l) * s.inner + i;
          g[at] += on->grad[o * s.inner + i] * 2.0 * inv * (xn->value[at] - mean[o * s.inner + i]);
        }
  });
}

inline Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis) {
  using namespace detail;
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  auto out = make_output(x.shape());
  const double* xv = x.values().data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      auto at = [&](std::size_t l) { return (o * s.len + l) * s.inner + i; };
      double mx = xv[at(0)];
      for (std::size_t l = 1; l < s.len; ++l) mx = std::max(mx, xv[at(l)]);
      double z = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) z += (out->value[at(l)] = std::exp(xv[at(l)] - mx));
      for (std::size_t l = 0; l < s.len; ++l) out->value[at(l)] /= z;
    }
  Node* xn = x.node();
  Node* on = out.get();
  return finish(tape, "softmax", {x}, out, [xn, on, s] {
    if (!xn->requires_grad) return;
    double* g = xn->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        auto at = [&](std::size_t l) { return (o * s.len + l) * s.inner + i; };
        double dot = 0.0;
        for (std::size_t l = 0; l < s.len; ++l) dot += on->grad[at(l)] * on->value[at(l)];
        for (std::size_t l = 0; l < s.len; ++l) g[at(l)] += on->value[at(l)] * (on->grad[at(l)] - dot);
      }
  });
}

/// (x - mean) / sqrt(var + eps) over the last axis, without affine terms.
inline Tensor layer_norm_core(Tape& tape, const Tensor& x, double eps) {
  using namespace detail;
  if (x.rank() == 0) throw ShapeError("rank", "layer_norm_core on a scalar");
  const std::size_t n = x.shape().back(), rows = x.numel() / n;
  auto out = make_output(x.shape());
  std::vector<double> rstd(rows);
  const double* xv = x.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xv[r * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xv[r * n + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) out->value[r * n + j] = (xv[r * n + j] - mu) * rstd[r];
  }
  Node* xn = x.node();
  Node* on = out.get();
  return finish(tape, "layer_norm_core", {x}, out, [xn, on, n, rows, rstd = std::move(rstd)] {
    if (!xn->requires_grad) return;
    double* g = xn->ensure_grad();
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* dy = on->grad.data() + r * n;
      const double* y = on->value.data() + r * n;
      double mdy = 0.0, mdyy = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        mdy += dy[j];
        mdyy += dy[j] * y[j];
      }
      mdy *= inv;
      mdyy *= inv;
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += rstd[r] * (dy[j] - mdy - y[j] * mdyy);
    }
  });
}

}  // namespace pcqa::ad
