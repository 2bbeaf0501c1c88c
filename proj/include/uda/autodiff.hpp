#pragma once

// Reverse-mode automatic differentiation over an append-only tape.
//
// Every operation appends one node holding its value and a backward rule. The
// backward rules are themselves written in terms of taped operations, so a
// gradient computed with create_graph=true is an ordinary Var that can be
// differentiated again (needed by the gradient-norm penalty of the one-class
// loss). With create_graph=false the tape stops recording rules while the
// gradients are formed and they become constants.

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "uda/error.hpp"
#include "uda/tensor.hpp"

namespace uda {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  double item() const { return value().item(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Given the gradient flowing into a node's output and the output itself,
/// returns one gradient per input (an invalid Var means "no contribution").
using BackwardRule =
    std::function<std::vector<Var>(const Var& grad_out, const Var& out)>;

/// Gradients of a scalar loss with respect to every leaf that requires grad.
class Gradients {
 public:
  /// Gradient for the given leaf; zeros when the leaf was unreachable.
  Tensor of(const Var& leaf) const {
    auto it = grads_.find(leaf.id());
    if (it == grads_.end()) return Tensor::zeros(leaf.shape());
    return it->second;
  }

  bool reached(const Var& leaf) const { return grads_.contains(leaf.id()); }

 private:
  friend class Tape;
  std::unordered_map<std::size_t, Tensor> grads_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  /// A value that never receives gradient.
  Var constant(Tensor value) {
    return push("constant", std::move(value), {}, nullptr, false);
  }

  /// A leaf whose gradient is collected by backward().
  Var leaf(Tensor value, bool requires_grad = true) {
    Var v = push("leaf", std::move(value), {}, nullptr, requires_grad);
    if (requires_grad) leaves_.push_back(v.id());
    return v;
  }

  /// Appends an operation node. Used by the op library below.
  Var record(std::string_view op, Tensor value, std::vector<Var> inputs,
             BackwardRule rule) {
    if (!value.all_finite()) {
      throw NumericError("non-finite result in op '" + std::string(op) + "'");
    }
    bool needs_grad = false;
    if (recording_) {
      for (const Var& in : inputs) needs_grad = needs_grad || in.requires_grad();
    }
    if (!needs_grad) {
      inputs.clear();
      rule = nullptr;
    }
    return push(op, std::move(value), std::move(inputs), std::move(rule),
                needs_grad);
  }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  std::string_view op_name(std::size_t id) const { return nodes_.at(id).op; }

  /// Gradients of `out` (any shape; seeded with ones) with respect to `wrt`.
  /// Does not consume the tape. With create_graph the results are
  /// differentiable.
  std::vector<Var> grad(const Var& out, std::span<const Var> wrt,
                        bool create_graph = false) {
    check_owned(out);
    std::vector<Var> grads = propagate(out, create_graph);
    std::vector<Var> result;
    result.reserve(wrt.size());
    for (const Var& w : wrt) {
      check_owned(w);
      if (w.id() < grads.size() && grads[w.id()].valid()) {
        result.push_back(grads[w.id()]);
      } else {
        result.push_back(constant(Tensor::zeros(w.shape())));
      }
    }
    return result;
  }

  /// Full reverse sweep from a scalar loss. Consumes the tape.
  Gradients backward(const Var& loss) {
    check_owned(loss);
    if (loss.value().size() != 1) {
      throw ShapeError("backward() needs a scalar loss, got shape " +
                       shape_string(loss.shape()));
    }
    if (consumed_) throw ContractError("tape already consumed by backward()");
    std::vector<Var> grads = propagate(loss, false);
    Gradients out;
    for (std::size_t id : leaves_) {
      if (id < grads.size() && grads[id].valid()) {
        out.grads_.emplace(id, grads[id].value());
      }
    }
    consumed_ = true;
    return out;
  }

 private:
  friend class Var;

  struct Node {
    std::string op;
    Tensor value;
    std::vector<Var> inputs;
    BackwardRule rule;
    bool requires_grad = false;
  };

  Var push(std::string_view op, Tensor value, std::vector<Var> inputs,
           BackwardRule rule, bool requires_grad) {
    nodes_.push_back(Node{std::string(op), std::move(value), std::move(inputs),
                          std::move(rule), requires_grad});
    return Var(this, nodes_.size() - 1);
  }

  void check_owned(const Var& v) const {
    if (!v.valid() || v.tape_ != this || v.id() >= nodes_.size()) {
      throw ContractError("variable does not belong to this tape");
    }
  }

  std::vector<Var> propagate(const Var& out, bool create_graph);

  // deque: appending never invalidates references to earlier values.
  std::deque<Node> nodes_;
  std::vector<std::size_t> leaves_;
  bool recording_ = true;
  bool consumed_ = false;
};

inline const Tensor& Var::value() const { return tape_->nodes_[id_].value; }
inline bool Var::requires_grad() const {
  return tape_->nodes_[id_].requires_grad;
}

// ---------------------------------------------------------------------------
// Broadcasting helpers (rank <= 2, numpy alignment from the right).

namespace detail {

struct View2 {
  std::size_t rows;
  std::size_t cols;
};

inline View2 view2(const Shape& s) {
  if (s.size() > 2) throw ShapeError("rank > 2 not supported: " + shape_string(s));
  if (s.empty()) return {1, 1};
  if (s.size() == 1) return {1, s[0]};
  return {s[0], s[1]};
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a.size() > 2 || b.size() > 2) {
    throw ShapeError("rank > 2 not supported");
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_string(a) + " with " +
                       shape_string(b));
    }
    out[rank - 1 - i] = std::max(da, db);
  }
  return out;
}

template <class F>
Tensor binary_map(const Tensor& a, const Tensor& b, F f) {
  Shape shape = broadcast_shape(a.shape(), b.shape());
  const View2 vo = view2(shape);
  const View2 va = view2(a.shape());
  const View2 vb = view2(b.shape());
  Tensor out = Tensor::zeros(std::move(shape));
  auto od = out.data();
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t r = 0; r < vo.rows; ++r) {
    const std::size_t ra = va.rows == 1 ? 0 : r;
    const std::size_t rb = vb.rows == 1 ? 0 : r;
    for (std::size_t c = 0; c < vo.cols; ++c) {
      const std::size_t ca = va.cols == 1 ? 0 : c;
      const std::size_t cb = vb.cols == 1 ? 0 : c;
      od[r * vo.cols + c] = f(ad[ra * va.cols + ca], bd[rb * vb.cols + cb]);
    }
  }
  return out;
}

template <class F>
Tensor unary_map(const Tensor& a, F f) {
  Tensor out = a;
  for (double& v : out.data()) v = f(v);
  return out;
}

inline Tensor sum_to_shape(const Tensor& x, const Shape& target) {
  if (x.shape() == target) return x;
  const View2 vx = view2(x.shape());
  const View2 vt = view2(target);
  if ((vt.rows != 1 && vt.rows != vx.rows) || (vt.cols != 1 && vt.cols != vx.cols)) {
    throw ShapeError("cannot reduce " + shape_string(x.shape()) + " to " +
                     shape_string(target));
  }
  Tensor out = Tensor::zeros(target);
  auto od = out.data();
  const auto xd = x.data();
  for (std::size_t r = 0; r < vx.rows; ++r) {
    const std::size_t rt = vt.rows == 1 ? 0 : r;
    for (std::size_t c = 0; c < vx.cols; ++c) {
      const std::size_t ct = vt.cols == 1 ? 0 : c;
      od[rt * vt.cols + ct] += xd[r * vx.cols + c];
    }
  }
  return out;
}

inline Tensor broadcast_to_shape(const Tensor& x, const Shape& target) {
  if (x.shape() == target) return x;
  if (broadcast_shape(x.shape(), target) != target) {
    throw ShapeError("cannot broadcast " + shape_string(x.shape()) + " to " +
                     shape_string(target));
  }
  return binary_map(Tensor::zeros(target), x, [](double, double v) { return v; });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Operation library.

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var sum_to(const Var& x, const Shape& shape);
Var broadcast_to(const Var& x, const Shape& shape);

inline Var constant_like(const Var& anchor, Tensor value) {
  return anchor.tape().constant(std::move(value));
}

inline Var scalar_const(const Var& anchor, double v) {
  return constant_like(anchor, Tensor::scalar(v));
}

inline Var sum_to(const Var& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  Tensor value = detail::sum_to_shape(x.value(), shape);
  const Shape from = x.shape();
  return x.tape().record("sum_to", std::move(value), {x},
                         [from](const Var& g, const Var&) {
                           return std::vector<Var>{broadcast_to(g, from)};
                         });
}

inline Var broadcast_to(const Var& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  Tensor value = detail::broadcast_to_shape(x.value(), shape);
  const Shape from = x.shape();
  return x.tape().record("broadcast_to", std::move(value), {x},
                         [from](const Var& g, const Var&) {
                           return std::vector<Var>{sum_to(g, from)};
                         });
}

inline Var add(const Var& a, const Var& b) {
  Tensor value = detail::binary_map(a.value(), b.value(), std::plus<>());
  const Shape sa = a.shape(), sb = b.shape();
  return a.tape().record("add", std::move(value), {a, b},
                         [sa, sb](const Var& g, const Var&) {
                           return std::vector<Var>{sum_to(g, sa), sum_to(g, sb)};
                         });
}

inline Var neg(const Var& a);

inline Var sub(const Var& a, const Var& b) {
  Tensor value = detail::binary_map(a.value(), b.value(), std::minus<>());
  const Shape sa = a.shape(), sb = b.shape();
  return a.tape().record("sub", std::move(value), {a, b},
                         [sa, sb](const Var& g, const Var&) {
                           return std::vector<Var>{sum_to(g, sa),
                                                   sum_to(neg(g), sb)};
                         });
}

inline Var mul(const Var& a, const Var& b) {
  Tensor value = detail::binary_map(a.value(), b.value(), std::multiplies<>());
  return a.tape().record(
      "mul", std::move(value), {a, b}, [a, b](const Var& g, const Var&) {
        std::vector<Var> out(2);
        if (a.requires_grad()) out[0] = sum_to(mul(g, b), a.shape());
        if (b.requires_grad()) out[1] = sum_to(mul(g, a), b.shape());
        return out;
      });
}

inline Var div(const Var& a, const Var& b) {
  Tensor value = detail::binary_map(a.value(), b.value(), std::divides<>());
  return a.tape().record(
      "div", std::move(value), {a, b}, [a, b](const Var& g, const Var& out) {
        std::vector<Var> grads(2);
        if (a.requires_grad()) grads[0] = sum_to(div(g, b), a.shape());
        if (b.requires_grad()) grads[1] = sum_to(neg(div(mul(g, out), b)), b.shape());
        return grads;
      });
}

inline Var scale(const Var& a, double factor) {
  Tensor value = detail::unary_map(a.value(), [factor](double v) { return v * factor; });
  return a.tape().record("scale", std::move(value), {a},
                         [factor](const Var& g, const Var&) {
                           return std::vector<Var>{scale(g, factor)};
                         });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

inline Var add_scalar(const Var& a, double c) {
  Tensor value = detail::unary_map(a.value(), [c](double v) { return v + c; });
  return a.tape().record("add_scalar", std::move(value), {a},
                         [](const Var& g, const Var&) { return std::vector<Var>{g}; });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(const Var& a, double c) { return scale(a, c); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }
inline Var operator+(const Var& a, double c) { return add_scalar(a, c); }
inline Var operator+(double c, const Var& a) { return add_scalar(a, c); }
inline Var operator-(const Var& a, double c) { return add_scalar(a, -c); }
inline Var operator-(double c, const Var& a) { return add_scalar(neg(a), c); }

inline Var transpose(const Var& a) {
  const Tensor& x = a.value();
  if (x.rank() != 2) throw ShapeError("transpose expects a matrix");
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out = Tensor::zeros({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = x.at(i, j);
  return a.tape().record("transpose", std::move(out), {a},
                         [](const Var& g, const Var&) {
                           return std::vector<Var>{transpose(g)};
                         });
}

inline Var matmul(const Var& a, const Var& b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.cols() != y.rows()) {
    throw ShapeError("matmul shape mismatch: " + shape_string(x.shape()) + " x " +
                     shape_string(y.shape()));
  }
  const std::size_t n = x.rows(), k = x.cols(), m = y.cols();
  Tensor out = Tensor::zeros({n, m});
  const auto xd = x.data();
  const auto yd = y.data();
  auto od = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = xd[i * k + p];
      if (xv == 0.0) continue;
      const double* yrow = &yd[p * m];
      double* orow = &od[i * m];
      for (std::size_t j = 0; j < m; ++j) orow[j] += xv * yrow[j];
    }
  }
  return a.tape().record(
      "matmul", std::move(out), {a, b}, [a, b](const Var& g, const Var&) {
        std::vector<Var> grads(2);
        if (a.requires_grad()) grads[0] = matmul(g, transpose(b));
        if (b.requires_grad()) grads[1] = matmul(transpose(a), g);
        return grads;
      });
}

inline Var relu(const Var& a) {
  Tensor value = detail::unary_map(a.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  return a.tape().record("relu", std::move(value), {a}, [a](const Var& g, const Var&) {
    // Subgradient 0 at the kink.
    Tensor mask = detail::unary_map(a.value(), [](double v) { return v > 0.0 ? 1.0 : 0.0; });
    return std::vector<Var>{mul(g, constant_like(g, std::move(mask)))};
  });
}

inline double logistic(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Var sigmoid(const Var& a) {
  Tensor value = detail::unary_map(a.value(), logistic);
  return a.tape().record("sigmoid", std::move(value), {a},
                         [](const Var& g, const Var& out) {
                           return std::vector<Var>{mul(g, mul(out, 1.0 - out))};
                         });
}

inline Var log(const Var& a) {
  Tensor value = detail::unary_map(a.value(), [](double v) { return std::log(v); });
  return a.tape().record("log", std::move(value), {a}, [a](const Var& g, const Var&) {
    return std::vector<Var>{div(g, a)};
  });
}

inline Var exp(const Var& a) {
  Tensor value = detail::unary_map(a.value(), [](double v) { return std::exp(v); });
  return a.tape().record("exp", std::move(value), {a},
                         [](const Var& g, const Var& out) {
                           return std::vector<Var>{mul(g, out)};
                         });
}

/// Elementwise power with a constant exponent.
inline Var pow(const Var& a, double exponent) {
  Tensor value =
      detail::unary_map(a.value(), [exponent](double v) { return std::pow(v, exponent); });
  return a.tape().record("pow", std::move(value), {a},
                         [a, exponent](const Var& g, const Var&) {
                           Var d = exponent == 1.0 ? scalar_const(g, 1.0)
                                                   : scale(pow(a, exponent - 1.0), exponent);
                           return std::vector<Var>{mul(g, d)};
                         });
}

/// Clamp into [lo, hi]; gradient passes only where the input is inside.
inline Var clamp(const Var& a, double lo, double hi) {
  Tensor value =
      detail::unary_map(a.value(), [lo, hi](double v) { return std::clamp(v, lo, hi); });
  return a.tape().record("clamp", std::move(value), {a},
                         [a, lo, hi](const Var& g, const Var&) {
                           Tensor mask = detail::unary_map(a.value(), [lo, hi](double v) {
                             return (v >= lo && v <= hi) ? 1.0 : 0.0;
                           });
                           return std::vector<Var>{mul(g, constant_like(g, std::move(mask)))};
                         });
}

inline Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const Shape from = a.shape();
  return a.tape().record("sum", Tensor::scalar(total), {a},
                         [from](const Var& g, const Var&) {
                           return std::vector<Var>{broadcast_to(g, from)};
                         });
}

inline Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

/// Sum along the last axis keeping it as extent 1: [n,k] -> [n,1], [k] -> [1].
inline Var row_sum(const Var& a) {
  const Tensor& x = a.value();
  if (x.rank() == 0) return a;
  Shape shape = x.shape();
  shape.back() = 1;
  Tensor out = Tensor::zeros(shape);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (double v : x.row(r)) s += v;
    out[r] = s;
  }
  const Shape from = x.shape();
  return a.tape().record("row_sum", std::move(out), {a},
                         [from](const Var& g, const Var&) {
                           return std::vector<Var>{broadcast_to(g, from)};
                         });
}

inline Tensor softmax_rows(const Tensor& x) {
  Tensor out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = out.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      z += v;
    }
    for (double& v : row) v /= z;
  }
  return out;
}

inline Var softmax_row(const Var& a) {
  if (a.value().rank() == 0) throw ShapeError("softmax_row needs rank >= 1");
  return a.tape().record("softmax_row", softmax_rows(a.value()), {a},
                         [](const Var& g, const Var& out) {
                           return std::vector<Var>{mul(out, sub(g, row_sum(mul(g, out))))};
                         });
}

inline Var log_softmax_row(const Var& a) {
  const Tensor& x = a.value();
  if (x.rank() == 0) throw ShapeError("log_softmax_row needs rank >= 1");
  Tensor out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = out.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    for (double& v : row) v -= lse;
  }
  return a.tape().record("log_softmax_row", std::move(out), {a},
                         [](const Var& g, const Var& out) {
                           return std::vector<Var>{sub(g, mul(exp(out), row_sum(g)))};
                         });
}

Var contract_left(const Var& dz, const Var& b);
Var contract_right(const Var& dz, const Var& a);

/// Row-wise outer product: [n,p] x [n,q] -> [n,p*q], out[i, j*q+k] = a[i,j]*b[i,k].
inline Var outer_product(const Var& a, const Var& b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.rows() != y.rows()) {
    throw ShapeError("outer_product expects [n,p] and [n,q]");
  }
  const std::size_t n = x.rows(), p = x.cols(), q = y.cols();
  Tensor out = Tensor::zeros({n, p * q});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j)
      for (std::size_t k = 0; k < q; ++k) out.at(i, j * q + k) = x.at(i, j) * y.at(i, k);
  return a.tape().record(
      "outer_product", std::move(out), {a, b}, [a, b](const Var& g, const Var&) {
        std::vector<Var> grads(2);
        if (a.requires_grad()) grads[0] = contract_left(g, b);
        if (b.requires_grad()) grads[1] = contract_right(g, a);
        return grads;
      });
}

/// out[i,j] = sum_k dz[i, j*q+k] * b[i,k]
inline Var contract_left(const Var& dz, const Var& b) {
  const Tensor& z = dz.value();
  const Tensor& y = b.value();
  const std::size_t n = y.rows(), q = y.cols();
  if (z.rank() != 2 || z.rows() != n || z.cols() % q != 0) {
    throw ShapeError("contract_left shape mismatch");
  }
  const std::size_t p = z.cols() / q;
  Tensor out = Tensor::zeros({n, p});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < q; ++k) s += z.at(i, j * q + k) * y.at(i, k);
      out.at(i, j) = s;
    }
  return dz.tape().record(
      "contract_left", std::move(out), {dz, b}, [dz, b](const Var& g, const Var&) {
        std::vector<Var> grads(2);
        if (dz.requires_grad()) grads[0] = outer_product(g, b);
        if (b.requires_grad()) grads[1] = contract_right(dz, g);
        return grads;
      });
}

/// out[i,k] = sum_j dz[i, j*q+k] * a[i,j]
inline Var contract_right(const Var& dz, const Var& a) {
  const Tensor& z = dz.value();
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), p = x.cols();
  if (z.rank() != 2 || z.rows() != n || z.cols() % p != 0) {
    throw ShapeError("contract_right shape mismatch");
  }
  const std::size_t q = z.cols() / p;
  Tensor out = Tensor::zeros({n, q});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < q; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < p; ++j) s += z.at(i, j * q + k) * x.at(i, j);
      out.at(i, k) = s;
    }
  return dz.tape().record(
      "contract_right", std::move(out), {dz, a}, [dz, a](const Var& g, const Var&) {
        std::vector<Var> grads(2);
        if (dz.requires_grad()) grads[0] = outer_product(a, g);
        if (a.requires_grad()) grads[1] = contract_left(dz, g);
        return grads;
      });
}

Var scatter_cols(const Var& g, std::vector<std::size_t> index, std::size_t cols);

/// Per-row column selection: [n,C] with n indices -> [n].
inline Var pick(const Var& a, std::vector<std::size_t> index) {
  const Tensor& x = a.value();
  if (x.rank() != 2 || index.size() != x.rows()) {
    throw ShapeError("pick expects [n,C] and n indices");
  }
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= x.cols()) throw ShapeError("pick index out of range");
    out[i] = x.at(i, index[i]);
  }
  const std::size_t cols = x.cols();
  return a.tape().record("pick", Tensor::vector(std::move(out)), {a},
                         [index, cols](const Var& g, const Var&) {
                           return std::vector<Var>{scatter_cols(g, index, cols)};
                         });
}

/// Inverse of pick: [n] -> [n,C] with g[i] placed at column index[i].
inline Var scatter_cols(const Var& g, std::vector<std::size_t> index, std::size_t cols) {
  const Tensor& x = g.value();
  if (x.size() != index.size()) throw ShapeError("scatter_cols length mismatch");
  Tensor out = Tensor::zeros({index.size(), cols});
  for (std::size_t i = 0; i < index.size(); ++i) out.at(i, index[i]) = x[i];
  return g.tape().record("scatter_cols", std::move(out), {g},
                         [index](const Var& up, const Var&) {
                           return std::vector<Var>{pick(up, index)};
                         });
}

/// Stops gradient flow: same value, recorded as a constant.
inline Var detach(const Var& a) { return a.tape().constant(a.value()); }

/// Enumerated primitive set, for callers that dispatch on an op tag.
enum class Op {
  matmul, add, mul, relu, sigmoid, log, exp, softmax_row, log_softmax_row,
  mean, sum, outer_product
};

inline Var forward_op(Op op, std::span<const Var> in) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) throw ShapeError("wrong operand count for op");
  };
  switch (op) {
    case Op::matmul: need(2); return matmul(in[0], in[1]);
    case Op::add: need(2); return add(in[0], in[1]);
    case Op::mul: need(2); return mul(in[0], in[1]);
    case Op::relu: need(1); return relu(in[0]);
    case Op::sigmoid: need(1); return sigmoid(in[0]);
    case Op::log: need(1); return log(in[0]);
    case Op::exp: need(1); return exp(in[0]);
    case Op::softmax_row: need(1); return softmax_row(in[0]);
    case Op::log_softmax_row: need(1); return log_softmax_row(in[0]);
    case Op::mean: need(1); return mean(in[0]);
    case Op::sum: need(1); return sum(in[0]);
    case Op::outer_product: need(2); return outer_product(in[0], in[1]);
  }
  throw ContractError("unknown op");
}

inline std::vector<Var> Tape::propagate(const Var& out, bool create_graph) {
  const std::size_t n = nodes_.size();
  std::vector<Var> grads(n);
  const bool saved = recording_;
  recording_ = create_graph;
  try {
    grads[out.id()] = constant(Tensor::ones(out.shape()));
    for (std::size_t i = out.id() + 1; i-- > 0;) {
      if (!grads[i].valid()) continue;
      if (!nodes_[i].rule || !nodes_[i].requires_grad) continue;
      BackwardRule rule = nodes_[i].rule;
      std::vector<Var> inputs = nodes_[i].inputs;
      std::vector<Var> in_grads = rule(grads[i], Var(this, i));
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Var& input = inputs[k];
        if (k >= in_grads.size() || !in_grads[k].valid() || !input.requires_grad()) {
          continue;
        }
        Var& slot = grads[input.id()];
        slot = slot.valid() ? add(slot, in_grads[k]) : in_grads[k];
      }
    }
  } catch (...) {
    recording_ = saved;
    throw;
  }
  recording_ = saved;
  return grads;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check.

/// A scalar function of a list of parameter tensors, evaluated on a tape.
using ScalarFunction = std::function<Var(Tape&, std::span<const Var>)>;

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
inline double grad_check(const ScalarFunction& f, const std::vector<Tensor>& params,
                         double h = 1e-5) {
  require(h >= 1e-6 && h <= 1e-4, "grad_check step must lie in [1e-6, 1e-4]");
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& p : params) leaves.push_back(tape.leaf(p));
    Var loss = f(tape, leaves);
    Gradients g = tape.backward(loss);
    for (const Var& l : leaves) analytic.push_back(g.of(l));
  }
  auto evaluate = [&](const std::vector<Tensor>& at) {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& p : at) leaves.push_back(tape.constant(p));
    const double v = f(tape, leaves).item();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
    return v;
  };
  double worst = 0.0;
  std::vector<Tensor> probe = params;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double orig = params[t][i];
      probe[t][i] = orig + h;
      const double up = evaluate(probe);
      probe[t][i] = orig - h;
      const double down = evaluate(probe);
      probe[t][i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[t][i];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

}  // namespace uda
