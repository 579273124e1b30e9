#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "enecg/error.hpp"
#include "enecg/numerics/tensor.hpp"

namespace enecg::numerics {

/// Backward rule identifier stored with every recorded node.
enum class Op : std::uint8_t {
  leaf,
  constant,
  matmul,
  transpose,
  reshape,
  add,
  mul,
  scale,
  sqrt,
  relu,
  softmax,
  conv1d,
  mean_pool,
  max_pool,
  dft_magnitude,
  slice,
  concat,
  sum_all,
  mean_all,
  sum_axis,
  mse,
  bce_logits,
  cross_entropy,
};

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

namespace detail {

// Op-specific parameters and forward caches.
struct Aux {
  std::size_t p0 = 0, p1 = 0, p2 = 0;
  double scalar = 0.0;
  std::vector<double> buf;
  std::vector<std::size_t> idx;
  Shape shape;
};

// Splits a shape around one axis into (outer, extent, inner) strides.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// True when `b` equals `a` or a trailing suffix of it.
inline bool broadcastable(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

inline double softplus(double u) { return std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u))); }
inline double sigmoid(double u) {
  if (u >= 0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

}  // namespace detail

/// Define-by-run record of primitive applications. Nodes are appended in
/// evaluation order, so the node sequence is always topologically sorted.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Binds an external tensor by address; gradients flow into it when it
  /// has requires_grad set. The tensor must outlive the tape's use.
  Var leaf(Tensor& t) {
    Node n;
    n.op = Op::leaf;
    n.external = &t;
    n.needs_grad = t.requires_grad();
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  /// Leaf bound to a tensor that never receives gradient.
  Var leaf(const Tensor& t) { return leaf(const_cast<Tensor&>(t), false); }

  Var constant(Tensor t) {
    Node n;
    n.op = Op::constant;
    n.value = std::move(t);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  const Tensor& value(const Var& v) const { return node(v).val(); }
  bool needs_grad(const Var& v) const { return node(v).needs_grad; }

  /// Gradient of the last backward() target w.r.t. an intermediate node;
  /// empty when the node received none.
  std::span<const double> grad(const Var& v) const { return node(v).grad; }

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Bytes held by intermediate values plus gradient buffers.
  std::size_t activation_bytes() const {
    std::size_t n = 0;
    for (const auto& node : nodes_) {
      if (node.op != Op::leaf) n += node.value.size();
      n += node.grad.size();
    }
    return n * sizeof(double);
  }

  Var record(Op op, std::vector<std::size_t> inputs, Tensor value, detail::Aux aux = {}) {
    Node n;
    n.op = op;
    for (std::size_t in : inputs) n.needs_grad = n.needs_grad || nodes_[in].needs_grad;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.aux = std::move(aux);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  void check_owned(const Var& v) const {
    if (v.tape() != this || v.id() >= nodes_.size()) {
      throw UsageError("variable does not belong to this tape");
    }
  }

  /// Reverse sweep from a single-element output. Intermediate gradients are
  /// recomputed on every call; leaf tensors accumulate (+=).
  void backward(const Var& output) {
    check_owned(output);
    Node& out = nodes_[output.id()];
    if (out.val().size() != 1) {
      throw UsageError("backward() needs a single-element output, got shape " +
                       shape_str(out.val().shape()));
    }
    for (auto& n : nodes_) n.grad.clear();
    if (!out.needs_grad) return;
    out.grad.assign(1, 1.0);
    for (std::size_t i = output.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.needs_grad) continue;
      if (n.op == Op::leaf) {
        if (n.external != nullptr && n.external->requires_grad()) {
          auto g = n.external->ensure_grad();
          for (std::size_t j = 0; j < g.size(); ++j) g[j] += n.grad[j];
        }
        continue;
      }
      apply_rule(n);
    }
  }

 private:
  struct Node {
    Op op = Op::constant;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor* external = nullptr;
    bool needs_grad = false;
    std::vector<double> grad;
    detail::Aux aux;

    const Tensor& val() const { return external != nullptr ? *external : value; }
  };

  Var leaf(Tensor& t, bool needs_grad) {
    Node n;
    n.op = Op::leaf;
    n.external = &t;
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  const Node& node(const Var& v) const {
    check_owned(v);
    return nodes_[v.id()];
  }

  // Returns the gradient buffer of input `k` of `n`, or nullptr when that
  // input does not need one.
  std::vector<double>* input_grad(const Node& n, std::size_t k) {
    Node& in = nodes_[n.inputs[k]];
    if (!in.needs_grad) return nullptr;
    if (in.grad.empty()) in.grad.assign(in.val().size(), 0.0);
    return &in.grad;
  }

  const Tensor& input_value(const Node& n, std::size_t k) const {
    return nodes_[n.inputs[k]].val();
  }

  void apply_rule(const Node& n);

  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const {
  if (tape_ == nullptr) throw UsageError("unbound variable");
  return tape_->value(*this);
}

namespace detail {

inline Tape& same_tape(const Var& a, const Var& b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw UsageError("operands recorded on different tapes");
  }
  return *a.tape();
}

inline Tape& tape_of(const Var& a) {
  if (a.tape() == nullptr) throw UsageError("unbound variable");
  return *a.tape();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives

inline Var matmul(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_str(x.shape()) + " * " +
                         shape_str(y.shape()));
  }
  const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
  Tensor out({m, n});
  const double* xp = x.data().data();
  const double* yp = y.data().data();
  double* op = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = op + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = xp[i * k + p];
      if (s == 0.0) continue;
      const double* yrow = yp + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * yrow[j];
    }
  }
  return tape.record(Op::matmul, {a.id(), b.id()}, std::move(out));
}

inline Var transpose(const Var& a) {
  const Tensor& x = a.value();
  if (x.rank() != 2) throw DimensionError("transpose needs a matrix, got " + shape_str(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return detail::tape_of(a).record(Op::transpose, {a.id()}, std::move(out));
}

inline Var reshape(const Var& a, Shape shape) {
  const Tensor& x = a.value();
  if (shape_size(shape) != x.size()) {
    throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  return detail::tape_of(a).record(Op::reshape, {a.id()}, x.reshaped(std::move(shape)));
}

/// Elementwise sum; `b` may match a trailing suffix of `a`'s shape and is
/// then broadcast over the leading axes.
inline Var add(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (!detail::broadcastable(x.shape(), y.shape())) {
    throw DimensionError("add shape mismatch: " + shape_str(x.shape()) + " + " +
                         shape_str(y.shape()));
  }
  Tensor out = x;
  const std::size_t nb = y.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i % nb];
  return tape.record(Op::add, {a.id(), b.id()}, std::move(out));
}

/// Elementwise product with the same broadcast rule as add().
inline Var mul(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (!detail::broadcastable(x.shape(), y.shape())) {
    throw DimensionError("mul shape mismatch: " + shape_str(x.shape()) + " * " +
                         shape_str(y.shape()));
  }
  Tensor out = x;
  const std::size_t nb = y.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i % nb];
  return tape.record(Op::mul, {a.id(), b.id()}, std::move(out));
}

inline Var scale(const Var& a, double c) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= c;
  detail::Aux aux;
  aux.scalar = c;
  return detail::tape_of(a).record(Op::scale, {a.id()}, std::move(out), std::move(aux));
}

/// sqrt(max(x, 0)); subgradient 0 where the result is 0.
inline Var sqrt(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? std::sqrt(v) : 0.0;
  return detail::tape_of(a).record(Op::sqrt, {a.id()}, std::move(out));
}

inline Var relu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return detail::tape_of(a).record(Op::relu, {a.id()}, std::move(out));
}

inline Var softmax(const Var& a, std::size_t axis) {
  const Tensor& x = a.value();
  const auto s = detail::split_axis(x.shape(), axis);
  Tensor out(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double mx = x[base];
      for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, x[base + e * s.inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double v = std::exp(x[base + e * s.inner] - mx);
        out[base + e * s.inner] = v;
        z += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= z;
    }
  }
  detail::Aux aux;
  aux.p0 = axis;
  return detail::tape_of(a).record(Op::softmax, {a.id()}, std::move(out), std::move(aux));
}

/// Valid cross-correlation: x [ch_in x T], kernels [ch_out x ch_in x w].
inline Var conv1d(const Var& x, const Var& kernels, std::size_t stride) {
  Tape& tape = detail::same_tape(x, kernels);
  const Tensor& in = x.value();
  const Tensor& k = kernels.value();
  if (stride == 0) throw UsageError("conv1d stride must be positive");
  if (in.rank() != 2 || k.rank() != 3 || k.dim(1) != in.dim(0)) {
    throw DimensionError("conv1d shape mismatch: input " + shape_str(in.shape()) + ", kernels " +
                         shape_str(k.shape()));
  }
  const std::size_t cin = in.dim(0), len = in.dim(1), cout = k.dim(0), w = k.dim(2);
  if (w > len) {
    throw DimensionError("conv1d kernel width " + std::to_string(w) + " exceeds signal length " +
                         std::to_string(len));
  }
  const std::size_t tout = (len - w) / stride + 1;
  Tensor out({cout, tout});
  for (std::size_t o = 0; o < cout; ++o) {
    double* orow = &out[o * tout];
    for (std::size_t c = 0; c < cin; ++c) {
      const double* xrow = &in[c * len];
      const double* krow = &k[(o * cin + c) * w];
      for (std::size_t t = 0; t < tout; ++t) {
        const double* xs = xrow + t * stride;
        double acc = 0.0;
        for (std::size_t u = 0; u < w; ++u) acc += krow[u] * xs[u];
        orow[t] += acc;
      }
    }
  }
  detail::Aux aux;
  aux.p0 = stride;
  return tape.record(Op::conv1d, {x.id(), kernels.id()}, std::move(out), std::move(aux));
}

namespace detail {

inline Tensor pooled_shape_tensor(const Tensor& x, std::size_t window, const char* name) {
  if (window == 0) throw UsageError(std::string(name) + " window must be positive");
  const std::size_t len = x.shape().back();
  if (window > len) {
    throw DimensionError(std::string(name) + " window " + std::to_string(window) +
                         " exceeds axis length " + std::to_string(len));
  }
  Shape shape = x.shape();
  shape.back() = len / window;
  return Tensor(std::move(shape));
}

}  // namespace detail

/// Non-overlapping mean over windows of the last axis; a trailing remainder
/// shorter than the window is dropped.
inline Var mean_pool(const Var& a, std::size_t window) {
  const Tensor& x = a.value();
  Tensor out = detail::pooled_shape_tensor(x, window, "mean_pool");
  const std::size_t len = x.shape().back(), nout = out.shape().back();
  const std::size_t rows = x.size() / len;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < nout; ++j) {
      double acc = 0.0;
      for (std::size_t u = 0; u < window; ++u) acc += x[r * len + j * window + u];
      out[r * nout + j] = acc / static_cast<double>(window);
    }
  }
  detail::Aux aux;
  aux.p0 = window;
  return detail::tape_of(a).record(Op::mean_pool, {a.id()}, std::move(out), std::move(aux));
}

/// Non-overlapping max over windows of the last axis. Gradient goes to the
/// first maximal index of each window.
inline Var max_pool(const Var& a, std::size_t window) {
  const Tensor& x = a.value();
  Tensor out = detail::pooled_shape_tensor(x, window, "max_pool");
  const std::size_t len = x.shape().back(), nout = out.shape().back();
  const std::size_t rows = x.size() / len;
  detail::Aux aux;
  aux.p0 = window;
  aux.idx.resize(out.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < nout; ++j) {
      std::size_t best = r * len + j * window;
      for (std::size_t u = 1; u < window; ++u) {
        const std::size_t p = r * len + j * window + u;
        if (x[p] > x[best]) best = p;
      }
      out[r * nout + j] = x[best];
      aux.idx[r * nout + j] = best;
    }
  }
  return detail::tape_of(a).record(Op::max_pool, {a.id()}, std::move(out), std::move(aux));
}

/// |DFT| of the last axis for the first `bins` frequency bins.
inline Var dft_magnitude(const Var& a, std::size_t bins) {
  const Tensor& x = a.value();
  const std::size_t len = x.shape().back();
  if (bins == 0 || bins > len) {
    throw DimensionError("dft_magnitude needs 1 <= bins <= " + std::to_string(len) + ", got " +
                         std::to_string(bins));
  }
  Shape shape = x.shape();
  shape.back() = bins;
  Tensor out(shape);
  const std::size_t rows = x.size() / len;
  std::vector<double> cos_t(len), sin_t(len);
  for (std::size_t m = 0; m < len; ++m) {
    const double th = 2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(len);
    cos_t[m] = std::cos(th);
    sin_t[m] = std::sin(th);
  }
  detail::Aux aux;
  aux.p0 = bins;
  aux.buf.resize(2 * out.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &x[r * len];
    for (std::size_t f = 0; f < bins; ++f) {
      double re = 0.0, im = 0.0;
      std::size_t m = 0;
      for (std::size_t t = 0; t < len; ++t) {
        re += xr[t] * cos_t[m];
        im -= xr[t] * sin_t[m];
        m += f;
        if (m >= len) m -= len;
      }
      const std::size_t o = r * bins + f;
      out[o] = std::hypot(re, im);
      aux.buf[2 * o] = re;
      aux.buf[2 * o + 1] = im;
    }
  }
  return detail::tape_of(a).record(Op::dft_magnitude, {a.id()}, std::move(out), std::move(aux));
}

/// Half-open range [begin, end) along `axis`.
inline Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  const auto s = detail::split_axis(x.shape(), axis);
  if (begin >= end || end > s.extent) {
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for axis " + std::to_string(axis) + " of " +
                         shape_str(x.shape()));
  }
  Shape shape = x.shape();
  shape[axis] = end - begin;
  Tensor out(shape);
  const std::size_t n = end - begin;
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < n; ++e)
      for (std::size_t in = 0; in < s.inner; ++in)
        out[(o * n + e) * s.inner + in] = x[(o * s.extent + begin + e) * s.inner + in];
  detail::Aux aux;
  aux.p0 = axis;
  aux.p1 = begin;
  aux.p2 = end;
  return detail::tape_of(a).record(Op::slice, {a.id()}, std::move(out), std::move(aux));
}

inline Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  Tape& tape = detail::tape_of(parts[0]);
  const Shape& first = parts[0].shape();
  const auto s0 = detail::split_axis(first, axis);
  std::size_t total = 0;
  std::vector<std::size_t> inputs;
  for (const Var& p : parts) {
    detail::same_tape(parts[0], p);
    Shape sh = p.shape();
    if (sh.size() != first.size()) {
      throw DimensionError("concat rank mismatch: " + shape_str(first) + " vs " + shape_str(sh));
    }
    for (std::size_t i = 0; i < sh.size(); ++i) {
      if (i != axis && sh[i] != first[i]) {
        throw DimensionError("concat shape mismatch: " + shape_str(first) + " vs " +
                             shape_str(sh));
      }
    }
    total += sh[axis];
    inputs.push_back(p.id());
  }
  Shape shape = first;
  shape[axis] = total;
  Tensor out(shape);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& x = p.value();
    const std::size_t n = x.shape()[axis];
    for (std::size_t o = 0; o < s0.outer; ++o)
      for (std::size_t e = 0; e < n; ++e)
        for (std::size_t in = 0; in < s0.inner; ++in)
          out[(o * total + offset + e) * s0.inner + in] = x[(o * n + e) * s0.inner + in];
    offset += n;
  }
  detail::Aux aux;
  aux.p0 = axis;
  return tape.record(Op::concat, std::move(inputs), std::move(out), std::move(aux));
}

inline Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

inline Var sum(const Var& a) {
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  return detail::tape_of(a).record(Op::sum_all, {a.id()}, Tensor::scalar(acc));
}

inline Var mean(const Var& a) {
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  return detail::tape_of(a).record(Op::mean_all, {a.id()},
                                   Tensor::scalar(acc / static_cast<double>(a.value().size())));
}

/// Sum over one axis; the axis is removed (a rank-1 input yields shape [1]).
inline Var sum(const Var& a, std::size_t axis) {
  const Tensor& x = a.value();
  const auto s = detail::split_axis(x.shape(), axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape = {1};
  Tensor out(shape);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t in = 0; in < s.inner; ++in)
        out[o * s.inner + in] += x[(o * s.extent + e) * s.inner + in];
  detail::Aux aux;
  aux.p0 = axis;
  return detail::tape_of(a).record(Op::sum_axis, {a.id()}, std::move(out), std::move(aux));
}

// ---------------------------------------------------------------------------
// Fused losses. Targets are constants carried in the node.

/// Mean squared error over all elements.
inline Var mse_loss(const Var& pred, const Tensor& target) {
  const Tensor& p = pred.value();
  if (p.size() != target.size()) {
    throw DimensionError("mse_loss shape mismatch: " + shape_str(p.shape()) + " vs " +
                         shape_str(target.shape()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += (p[i] - target[i]) * (p[i] - target[i]);
  detail::Aux aux;
  aux.buf.assign(target.data().begin(), target.data().end());
  return detail::tape_of(pred).record(Op::mse, {pred.id()},
                                      Tensor::scalar(acc / static_cast<double>(p.size())),
                                      std::move(aux));
}

/// Mean binary cross-entropy on logits; positives weighted by `pos_weight`.
inline Var bce_with_logits(const Var& logits, const Tensor& target, double pos_weight = 1.0) {
  const Tensor& z = logits.value();
  if (z.size() != target.size()) {
    throw DimensionError("bce_with_logits shape mismatch: " + shape_str(z.shape()) + " vs " +
                         shape_str(target.shape()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double y = target[i];
    acc += pos_weight * y * detail::softplus(-z[i]) + (1.0 - y) * detail::softplus(z[i]);
  }
  detail::Aux aux;
  aux.scalar = pos_weight;
  aux.buf.assign(target.data().begin(), target.data().end());
  return detail::tape_of(logits).record(Op::bce_logits, {logits.id()},
                                        Tensor::scalar(acc / static_cast<double>(z.size())),
                                        std::move(aux));
}

/// Mean softmax cross-entropy: logits [B x K], one class index per row.
inline Var cross_entropy(const Var& logits, std::span<const std::size_t> labels) {
  const Tensor& z = logits.value();
  if (z.rank() != 2 || z.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy expects [" + std::to_string(labels.size()) +
                         " x K] logits, got " + shape_str(z.shape()));
  }
  const std::size_t rows = z.dim(0), k = z.dim(1);
  detail::Aux aux;
  aux.buf.resize(z.size());
  aux.idx.assign(labels.begin(), labels.end());
  double acc = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] >= k) {
      throw DimensionError("class label " + std::to_string(labels[r]) + " out of range for " +
                           std::to_string(k) + " classes");
    }
    const double* zr = &z[r * k];
    const double mx = *std::max_element(zr, zr + k);
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) sum += std::exp(zr[c] - mx);
    const double lse = mx + std::log(sum);
    acc += lse - zr[labels[r]];
    for (std::size_t c = 0; c < k; ++c) aux.buf[r * k + c] = std::exp(zr[c] - lse);
  }
  return detail::tape_of(logits).record(Op::cross_entropy, {logits.id()},
                                        Tensor::scalar(acc / static_cast<double>(rows)),
                                        std::move(aux));
}

// ---------------------------------------------------------------------------

inline void backward(const Var& output, Tape& tape) {
  if (output.tape() != &tape) throw UsageError("backward target was not recorded on this tape");
  tape.backward(output);
}

inline void Tape::apply_rule(const Node& n) {
  const std::vector<double>& g = n.grad;
  const Tensor& out = n.value;
  switch (n.op) {
    case Op::leaf:
    case Op::constant:
      return;
    case Op::matmul: {
      const Tensor& a = input_value(n, 0);
      const Tensor& b = input_value(n, 1);
      const std::size_t m = a.dim(0), k = a.dim(1), cols = b.dim(1);
      if (auto* ga = input_grad(n, 0)) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            const double* gr = &g[i * cols];
            const double* br = &b[p * cols];
            for (std::size_t j = 0; j < cols; ++j) acc += gr[j] * br[j];
            (*ga)[i * k + p] += acc;
          }
      }
      if (auto* gb = input_grad(n, 1)) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double s = a[i * k + p];
            if (s == 0.0) continue;
            double* gbr = gb->data() + p * cols;
            const double* gr = &g[i * cols];
            for (std::size_t j = 0; j < cols; ++j) gbr[j] += s * gr[j];
          }
      }
      return;
    }
    case Op::transpose: {
      if (auto* ga = input_grad(n, 0)) {
        const std::size_t rows = out.dim(0), cols = out.dim(1);
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < cols; ++j) (*ga)[j * rows + i] += g[i * cols + j];
      }
      return;
    }
    case Op::reshape:
    case Op::sum_all: {
      if (auto* ga = input_grad(n, 0)) {
        if (n.op == Op::reshape) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        } else {
          for (double& v : *ga) v += g[0];
        }
      }
      return;
    }
    case Op::mean_all: {
      if (auto* ga = input_grad(n, 0)) {
        const double s = g[0] / static_cast<double>(ga->size());
        for (double& v : *ga) v += s;
      }
      return;
    }
    case Op::add: {
      if (auto* ga = input_grad(n, 0))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
      if (auto* gb = input_grad(n, 1)) {
        const std::size_t nb = gb->size();
        for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % nb] += g[i];
      }
      return;
    }
    case Op::mul: {
      const Tensor& a = input_value(n, 0);
      const Tensor& b = input_value(n, 1);
      const std::size_t nb = b.size();
      if (auto* ga = input_grad(n, 0))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * b[i % nb];
      if (auto* gb = input_grad(n, 1))
        for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % nb] += g[i] * a[i];
      return;
    }
    case Op::scale: {
      if (auto* ga = input_grad(n, 0))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += n.aux.scalar * g[i];
      return;
    }
    case Op::sqrt: {
      if (auto* ga = input_grad(n, 0))
        for (std::size_t i = 0; i < g.size(); ++i)
          if (out[i] > 0.0) (*ga)[i] += 0.5 * g[i] / out[i];
      return;
    }
    case Op::relu: {
      if (auto* ga = input_grad(n, 0))
        for (std::size_t i = 0; i < g.size(); ++i)
          if (out[i] > 0.0) (*ga)[i] += g[i];
      return;
    }
    case Op::softmax: {
      if (auto* ga = input_grad(n, 0)) {
        const auto s = detail::split_axis(out.shape(), n.aux.p0);
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.extent * s.inner + in;
            double dot = 0.0;
            for (std::size_t e = 0; e < s.extent; ++e)
              dot += g[base + e * s.inner] * out[base + e * s.inner];
            for (std::size_t e = 0; e < s.extent; ++e) {
              const std::size_t p = base + e * s.inner;
              (*ga)[p] += out[p] * (g[p] - dot);
            }
          }
      }
      return;
    }
    case Op::conv1d: {
      const Tensor& x = input_value(n, 0);
      const Tensor& k = input_value(n, 1);
      const std::size_t stride = n.aux.p0;
      const std::size_t cin = x.dim(0), len = x.dim(1), cout = k.dim(0), w = k.dim(2);
      const std::size_t tout = out.dim(1);
      auto* gx = input_grad(n, 0);
      auto* gk = input_grad(n, 1);
      for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t c = 0; c < cin; ++c) {
          const double* krow = &k[(o * cin + c) * w];
          const double* xrow = &x[c * len];
          for (std::size_t t = 0; t < tout; ++t) {
            const double go = g[o * tout + t];
            if (go == 0.0) continue;
            if (gx != nullptr) {
              double* gxr = gx->data() + c * len + t * stride;
              for (std::size_t u = 0; u < w; ++u) gxr[u] += go * krow[u];
            }
            if (gk != nullptr) {
              double* gkr = gk->data() + (o * cin + c) * w;
              const double* xs = xrow + t * stride;
              for (std::size_t u = 0; u < w; ++u) gkr[u] += go * xs[u];
            }
          }
        }
      return;
    }
    case Op::mean_pool: {
      if (auto* ga = input_grad(n, 0)) {
        const std::size_t window = n.aux.p0;
        const std::size_t nout = out.shape().back();
        const std::size_t len = input_value(n, 0).shape().back();
        const std::size_t rows = out.size() / nout;
        const double inv = 1.0 / static_cast<double>(window);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < nout; ++j) {
            const double s = g[r * nout + j] * inv;
            for (std::size_t u = 0; u < window; ++u) (*ga)[r * len + j * window + u] += s;
          }
      }
      return;
    }
    case Op::max_pool: {
      if (auto* ga = input_grad(n, 0))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[n.aux.idx[i]] += g[i];
      return;
    }
    case Op::dft_magnitude: {
      if (auto* ga = input_grad(n, 0)) {
        const std::size_t bins = n.aux.p0;
        const std::size_t len = input_value(n, 0).shape().back();
        const std::size_t rows = out.size() / bins;
        std::vector<double> cos_t(len), sin_t(len);
        for (std::size_t m = 0; m < len; ++m) {
          const double th =
              2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(len);
          cos_t[m] = std::cos(th);
          sin_t[m] = std::sin(th);
        }
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t f = 0; f < bins; ++f) {
            const std::size_t o = r * bins + f;
            if (out[o] == 0.0 || g[o] == 0.0) continue;
            const double re = n.aux.buf[2 * o] / out[o] * g[o];
            const double im = n.aux.buf[2 * o + 1] / out[o] * g[o];
            double* gr = ga->data() + r * len;
            std::size_t m = 0;
            for (std::size_t t = 0; t < len; ++t) {
              gr[t] += re * cos_t[m] - im * sin_t[m];
              m += f;
              if (m >= len) m -= len;
            }
          }
      }
      return;
    }
    case Op::slice: {
      if (auto* ga = input_grad(n, 0)) {
        const auto s = detail::split_axis(input_value(n, 0).shape(), n.aux.p0);
        const std::size_t begin = n.aux.p1, cnt = n.aux.p2 - n.aux.p1;
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t e = 0; e < cnt; ++e)
            for (std::size_t in = 0; in < s.inner; ++in)
              (*ga)[(o * s.extent + begin + e) * s.inner + in] += g[(o * cnt + e) * s.inner + in];
      }
      return;
    }
    case Op::concat: {
      const std::size_t axis = n.aux.p0;
      const auto s = detail::split_axis(out.shape(), axis);
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t cnt = input_value(n, k).shape()[axis];
        if (auto* ga = input_grad(n, k)) {
          for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t e = 0; e < cnt; ++e)
              for (std::size_t in = 0; in < s.inner; ++in)
                (*ga)[(o * cnt + e) * s.inner + in] +=
                    g[(o * s.extent + offset + e) * s.inner + in];
        }
        offset += cnt;
      }
      return;
    }
    case Op::sum_axis: {
      if (auto* ga = input_grad(n, 0)) {
        const auto s = detail::split_axis(input_value(n, 0).shape(), n.aux.p0);
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t e = 0; e < s.extent; ++e)
            for (std::size_t in = 0; in < s.inner; ++in)
              (*ga)[(o * s.extent + e) * s.inner + in] += g[o * s.inner + in];
      }
      return;
    }
    case Op::mse: {
      if (auto* ga = input_grad(n, 0)) {
        const Tensor& p = input_value(n, 0);
        const double c = 2.0 * g[0] / static_cast<double>(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) (*ga)[i] += c * (p[i] - n.aux.buf[i]);
      }
      return;
    }
    case Op::bce_logits: {
      if (auto* ga = input_grad(n, 0)) {
        const Tensor& z = input_value(n, 0);
        const double c = g[0] / static_cast<double>(z.size());
        const double pw = n.aux.scalar;
        for (std::size_t i = 0; i < z.size(); ++i) {
          const double y = n.aux.buf[i];
          (*ga)[i] += c * (-pw * y * detail::sigmoid(-z[i]) + (1.0 - y) * detail::sigmoid(z[i]));
        }
      }
      return;
    }
    case Op::cross_entropy: {
      if (auto* ga = input_grad(n, 0)) {
        const Tensor& z = input_value(n, 0);
        const std::size_t rows = z.dim(0), k = z.dim(1);
        const double c = g[0] / static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < k; ++j) {
            const double target = (j == n.aux.idx[r]) ? 1.0 : 0.0;
            (*ga)[r * k + j] += c * (n.aux.buf[r * k + j] - target);
          }
      }
      return;
    }
  }
}

}  // namespace enecg::numerics

namespace enecg {
using numerics::Tape;
using numerics::Var;
}  // namespace enecg
