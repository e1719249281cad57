#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "citesum/errors.hpp"

namespace citesum::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

// Reverse-mode autodiff over dense double matrices. A Tape owns nodes in
// creation order (a valid topological order), so the backward sweep is just
// the reverse iteration. Backprop closures hold raw Node pointers; a deque
// keeps them stable. Everything is single-threaded and deterministic.

class Tape;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::function<void()> backprop;
};

struct Var {
  Node* node = nullptr;
  Tape* tape = nullptr;

  const Matrix& value() const { return node->value; }
  const Matrix& grad() const { return node->grad; }
  Index rows() const { return node->value.rows(); }
  Index cols() const { return node->value.cols(); }
  double scalar() const {
    if (rows() != 1 || cols() != 1) throw ShapeError("scalar() on non-1x1 value");
    return node->value(0, 0);
  }
};

class Tape {
 public:
  Var leaf(Matrix value, bool requires_grad) {
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return Var{&n, this};
  }

  Var constant(Matrix value) { return leaf(std::move(value), false); }

  Var make(Matrix value, bool requires_grad, std::function<void()> backprop) {
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) {
      n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
      n.backprop = std::move(backprop);
    }
    return Var{&n, this};
  }

  /// Seeds d(root)/d(root) = 1 and sweeps the tape in reverse. `root` must
  /// be 1x1.
  void backward(Var root) {
    if (root.rows() != 1 || root.cols() != 1)
      throw ShapeError("backward: root must be a 1x1 scalar");
    if (!root.node->requires_grad)
      throw ValidationError("backward: root does not depend on any parameter");
    root.node->grad(0, 0) += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
      if (it->requires_grad && it->backprop) it->backprop();
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::deque<Node> nodes_;
};

namespace detail {
inline bool rg(const Var& a) { return a.node->requires_grad; }
inline void check_same_tape(const Var& a, const Var& b) {
  if (a.tape != b.tape) throw ValidationError("vars from different tapes");
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra primitives

inline Var add(Var a, Var b) {
  detail::check_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("add: shape mismatch");
  Node *an = a.node, *bn = b.node;
  const bool need = detail::rg(a) || detail::rg(b);
  Var out = a.tape->make(an->value + bn->value, need, nullptr);
  Node* on = out.node;
  if (need)
    on->backprop = [an, bn, on] {
      if (an->requires_grad) an->grad += on->grad;
      if (bn->requires_grad) bn->grad += on->grad;
    };
  return out;
}

inline Var sub(Var a, Var b) {
  detail::check_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("sub: shape mismatch");
  Node *an = a.node, *bn = b.node;
  const bool need = detail::rg(a) || detail::rg(b);
  Var out = a.tape->make(an->value - bn->value, need, nullptr);
  Node* on = out.node;
  if (need)
    on->backprop = [an, bn, on] {
      if (an->requires_grad) an->grad += on->grad;
      if (bn->requires_grad) bn->grad -= on->grad;
    };
  return out;
}

inline Var mul(Var a, Var b) {  // hadamard
  detail::check_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("mul: shape mismatch");
  Node *an = a.node, *bn = b.node;
  const bool need = detail::rg(a) || detail::rg(b);
  Var out = a.tape->make(an->value.cwiseProduct(bn->value), need, nullptr);
  Node* on = out.node;
  if (need)
    on->backprop = [an, bn, on] {
      if (an->requires_grad) an->grad += on->grad.cwiseProduct(bn->value);
      if (bn->requires_grad) bn->grad += on->grad.cwiseProduct(an->value);
    };
  return out;
}

inline Var scale(Var a, double c) {
  Node* an = a.node;
  Var out = a.tape->make(an->value * c, detail::rg(a), nullptr);
  Node* on = out.node;
  if (detail::rg(a))
    on->backprop = [an, on, c] { an->grad += on->grad * c; };
  return out;
}

inline Var add_const(Var a, const Matrix& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols())
    throw ShapeError("add_const: shape mismatch");
  Node* an = a.node;
  Var out = a.tape->make(an->value + c, detail::rg(a), nullptr);
  Node* on = out.node;
  if (detail::rg(a))
    on->backprop = [an, on] { an->grad += on->grad; };
  return out;
}

inline Var matmul(Var a, Var b) {
  detail::check_same_tape(a, b);
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimension mismatch");
  Node *an = a.node, *bn = b.node;
  const bool need = detail::rg(a) || detail::rg(b);
  Var out = a.tape->make(an->value * bn->value, need, nullptr);
  Node* on = out.node;
  if (need)
    on->backprop = [an, bn, on] {
      if (an->requires_grad) an->grad.noalias() += on->grad * bn->value.transpose();
      if (bn->requires_grad) bn->grad.noalias() += an->value.transpose() * on->grad;
    };
  return out;
}

inline Var transpose(Var a) {
  Node* an = a.node;
  Var out = a.tape->make(an->value.transpose(), detail::rg(a), nullptr);
  Node* on = out.node;
  if (detail::rg(a))
    on->backprop = [an, on] { an->grad += on->grad.transpose(); };
  return out;
}

/// x + broadcast row vector b (1 x cols).
inline Var add_rowvec(Var a, Var b) {
  detail::check_same_tape(a, b);
  if (b.rows() != 1 || a.cols() != b.cols()) throw ShapeError("add_rowvec: bad shapes");
  Node *an = a.node, *bn = b.node;
  const bool need = detail::rg(a) || detail::rg(b);
  Var out = a.tape->make(an->value.rowwise() + bn->value.row(0), need, nullptr);
  Node* on = out.node;
  if (need)
    on->backprop = [an, bn, on] {
      if (an->requires_grad) an->grad += on->grad;
      if (bn->requires_grad) bn->grad.row(0) += on->grad.colwise().sum();
    };
  return out;
}

// ---------------------------------------------------------------------------
// Structure: stacking, slicing, gathering

inline Var vstack(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("vstack: empty");
  Tape* tape = parts[0].tape;
  Index rows = 0;
  const Index cols = parts[0].cols();
  bool need = false;
  for (const auto& p : parts) {
    if (p.tape != tape) throw ValidationError("vars from different tapes");
    if (p.cols() != cols) throw ShapeError("vstack: column mismatch");
    rows += p.rows();
    need = need || detail::rg(p);
  }
  Matrix v(rows, cols);
  Index at = 0;
  std::vector<Node*> nodes;
  nodes.reserve(parts.size());
  for (const auto& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
    nodes.push_back(p.node);
  }
  Var out = tape->make(std::move(v), need, nullptr);
  Node* on = out.node;
  if (need)
    on->backprop = [nodes, on] {
      Index at = 0;
      for (Node* p : nodes) {
        if (p->requires_grad) p->grad += on->grad.middleRows(at, p->value.rows());
        at += p->value.rows();
      }
    };
  return out;
}

inline Var hstack(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("hstack: empty");
  Tape* tape = parts[0].tape;
  Index cols = 0;
  const Index rows = parts[0].rows();
  bool need = false;
  for (const auto& p : parts) {
    if (p.tape != tape) throw ValidationError("vars from different tapes");
    if (p.rows() != rows) throw ShapeError("hstack: row mismatch");
    cols += p.cols();
    need = need || detail::rg(p);
  }
  Matrix v(rows, cols);
  Index at = 0;
  std::vector<Node*> nodes;
  nodes.reserve(parts.size());
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
    nodes.push_back(p.node);
  }
  Var out = tape->make(std::move(v), need, nullptr);
  Node* on = out.node;
  if (need)
    on->backprop = [nodes, on] {
      Index at = 0;
      for (Node* p : nodes) {
        if (p->requires_grad) p->grad += on->grad.middleCols(at, p->value.cols());
        at += p->value.cols();
      }
    };
  return out;
}

inline Var slice_rows(Var a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows())
    throw ShapeError("slice_rows: range out of bounds");
  Node* an = a.node;
  Var out = a.tape->make(an->value.middleRows(start, count), detail::rg(a), nullptr);
  Node* on = out.node;
  if (detail::rg(a))
    on->backprop = [an, on, start, count] {
      an->grad.middleRows(start, count) += on->grad;
    };
  return out;
}

inline Var slice_cols(Var a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols())
    throw ShapeError("slice_cols: range out of bounds");
  Node* an = a.node;
  Var out = a.tape->make(an->value.middleCols(start, count), detail::rg(a), nullptr);
  Node* on = out.node;
  if (detail::rg(a))
    on->backprop = [an, on, start, count] {
      an->grad.middleCols(start, count) += on->grad;
    };
  return out;
}

/// Row gather (embedding lookup): out.row(i) = a.row(indices[i]).
inline Var gather_rows(Var a, std::vector<Index> indices) {
  Node* an = a.node;
  for (Index idx : indices)
    if (idx < 0 || idx >= a.rows()) throw RangeError("gather_rows: index out of range");
  Matrix v(static_cast<Index>(indices.size()), a.cols());
  for (std::size_t i = 0; i < indices.size(); ++i)
    v.row(static_cast<Index>(i)) = an->value.row(indices[i]);
  Var out = a.tape->make(std::move(v), detail::rg(a), nullptr);
  Node* on = out.node;
  if (detail::rg(a))
    on->backprop = [an, on, indices = std::move(indices)] {
      for (std::size_t i = 0; i < indices.size(); ++i)
        an->grad.row(indices[i]) += on->grad.row(static_cast<Index>(i));
    };
  return out;
}

/// Mean over the rows selected by mask (1 x cols output).
inline Var masked_row_mean(Var a, const std::vector<char>& mask) {
  if (static_cast<Index>(mask.size()) != a.rows())
    throw ShapeError("masked_row_mean: mask length mismatch");
  Index count = 0;
  for (char m : mask)
    if (m) ++count;
  if (count == 0) throw DegenerateGraphError("masked_row_mean: all rows masked out");
  Node* an = a.node;
  Matrix v = Matrix::Zero(1, a.cols());
  for (Index i = 0; i < a.rows(); ++i)
    if (mask[static_cast<std::size_t>(i)]) v.row(0) += an->value.row(i);
  v /= static_cast<double>(count);
  Var out = a.tape->make(std::move(v), detail::rg(a), nullptr);
  Node* on = out.node;
  if (detail::rg(a))
    on->backprop = [an, on, mask, count] {
      for (Index i = 0; i < an->value.rows(); ++i)
        if (mask[static_cast<std::size_t>(i)])
          an->grad.row(i) += on->grad.row(0) / static_cast<double>(count);
    };
  return out;
}

/// Columnwise max over the rows selected by mask; ties go to the earliest
/// row, which keeps the backward pass deterministic.
inline Var masked_row_max(Var a, const std::vector<char>& mask) {
  if (static_cast<Index>(mask.size()) != a.rows())
    throw ShapeError("masked_row_max: mask length mismatch");
  Node* an = a.node;
  std::vector<Index> argmax(static_cast<std::size_t>(a.cols()), -1);
  Matrix v(1, a.cols());
  for (Index c = 0; c < a.cols(); ++c) {
    double best = -std::numeric_limits<double>::infinity();
    Index best_i = -1;
    for (Index i = 0; i < a.rows(); ++i) {
      if (!mask[static_cast<std::size_t>(i)]) continue;
      if (an->value(i, c) > best) {
        best = an->value(i, c);
        best_i = i;
      }
    }
    if (best_i < 0) throw DegenerateGraphError("masked_row_max: all rows masked out");
    v(0, c) = best;
    argmax[static_cast<std::size_t>(c)] = best_i;
  }
  Var out = a.tape->make(std::move(v), detail::rg(a), nullptr);
  Node* on = out.node;
  if (detail::rg(a))
    on->backprop = [an, on, argmax = std::move(argmax)] {
      for (Index c = 0; c < an->value.cols(); ++c)
        an->grad(argmax[static_cast<std::size_t>(c)], c) += on->grad(0, c);
    };
  return out;
}

// ---------------------------------------------------------------------------
// Nonlinearities

inline Var softmax_rows(Var a) {
  Node* an = a.node;
  Matrix v(a.rows(), a.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    const double m = an->value.row(i).maxCoeff();
    Eigen::RowVectorXd e = (an->value.row(i).array() - m).exp();
    v.row(i) = e / e.sum();
  }
  Var out = a.tape->make(std::move(v), detail::rg(a), nullptr);
  Node* on = out.node;
  if (detail::rg(a))
    on->backprop = [an, on] {
      for (Index i = 0; i < on->value.rows(); ++i) {
        const auto y = on->value.row(i).array();
        const auto g = on->grad.row(i).array();
        const double dot = (g * y).sum();
        an->grad.row(i).array() += y * (g - dot);
      }
    };
  return out;
}

inline Var gelu(Var a) {
  Node* an = a.node;
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  Matrix v = an->value.unaryExpr(
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); });
  Var out = a.tape->make(std::move(v), detail::rg(a), nullptr);
  Node* on = out.node;
  if (detail::rg(a))
    on->backprop = [an, on] {
      an->grad.array() +=
          on->grad.array() * an->value.unaryExpr([](double x) {
                               const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                               const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                               return cdf + x * pdf;
                             }).array();
    };
  return out;
}

inline Var log_sigmoid(Var a) {
  Node* an = a.node;
  // log sigma(x) = min(x, 0) - log1p(exp(-|x|)), stable on both tails.
  Matrix v = an->value.unaryExpr([](double x) {
    return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x)));
  });
  Var out = a.tape->make(std::move(v), detail::rg(a), nullptr);
  Node* on = out.node;
  if (detail::rg(a))
    on->backprop = [an, on] {
      an->grad.array() += on->grad.array() * an->value.unaryExpr([](double x) {
                                               // sigma(-x)
                                               if (x >= 0.0) {
                                                 const double e = std::exp(-x);
                                                 return e / (1.0 + e);
                                               }
                                               return 1.0 / (1.0 + std::exp(x));
                                             }).array();
    };
  return out;
}

/// Elementwise product with a fixed 0 / (1/keep) mask (inverted dropout;
/// the mask comes from a seeded stream so training stays reproducible).
inline Var dropout_mask(Var a, const Matrix& mask) {
  if (mask.rows() != a.rows() || mask.cols() != a.cols())
    throw ShapeError("dropout_mask: shape mismatch");
  Node* an = a.node;
  Var out = a.tape->make(an->value.cwiseProduct(mask), detail::rg(a), nullptr);
  Node* on = out.node;
  if (detail::rg(a))
    on->backprop = [an, on, mask] { an->grad += on->grad.cwiseProduct(mask); };
  return out;
}

/// Unit L2 normalization per row.
inline Var row_l2_normalize(Var a, double eps = 1e-12) {
  Node* an = a.node;
  const Index rows = a.rows();
  Eigen::VectorXd inv_norm(rows);
  Matrix v(rows, a.cols());
  for (Index i = 0; i < rows; ++i) {
    const double n = std::sqrt(an->value.row(i).squaredNorm() + eps);
    inv_norm(i) = 1.0 / n;
    v.row(i) = an->value.row(i) * inv_norm(i);
  }
  Var out = a.tape->make(std::move(v), detail::rg(a), nullptr);
  Node* on = out.node;
  if (detail::rg(a))
    on->backprop = [an, on, inv_norm = std::move(inv_norm)] {
      for (Index i = 0; i < on->value.rows(); ++i) {
        const auto y = on->value.row(i);
        const auto g = on->grad.row(i);
        const double dot = g.dot(y);
        an->grad.row(i) += inv_norm(i) * (g - dot * y);
      }
    };
  return out;
}

/// Row-wise layer normalization with gain/bias (both 1 x cols).
inline Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-6) {
  detail::check_same_tape(x, gain);
  detail::check_same_tape(x, bias);
  if (gain.rows() != 1 || bias.rows() != 1 || gain.cols() != x.cols() ||
      bias.cols() != x.cols())
    throw ShapeError("layer_norm_rows: gain/bias must be 1 x cols");
  Node *xn = x.node, *gn = gain.node, *bn = bias.node;
  const Index rows = x.rows(), cols = x.cols();
  const double d = static_cast<double>(cols);

  Matrix xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (Index i = 0; i < rows; ++i) {
    const double mean = xn->value.row(i).mean();
    Eigen::RowVectorXd c = xn->value.row(i).array() - mean;
    const double var = c.squaredNorm() / d;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std(i) = is;
    xhat.row(i) = c * is;
  }
  Matrix v = (xhat.array().rowwise() * gn->value.row(0).array()).rowwise() +
             bn->value.row(0).array();
  const bool need = detail::rg(x) || detail::rg(gain) || detail::rg(bias);
  Var out = x.tape->make(std::move(v), need, nullptr);
  Node* on = out.node;
  if (need)
    on->backprop = [xn, gn, bn, on, xhat = std::move(xhat),
                    inv_std = std::move(inv_std), d] {
      for (Index i = 0; i < on->value.rows(); ++i) {
        const auto g = on->grad.row(i).array();
        const auto xh = xhat.row(i).array();
        if (gn->requires_grad) gn->grad.row(0).array() += g * xh;
        if (bn->requires_grad) bn->grad.row(0).array() += g;
        if (xn->requires_grad) {
          const auto gxh = (g * gn->value.row(0).array()).eval();
          const double m1 = gxh.sum() / d;
          const double m2 = (gxh * xh).sum() / d;
          xn->grad.row(i).array() += inv_std(i) * (gxh - m1 - xh * m2);
        }
      }
    };
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and losses

inline Var sum_all(Var a) {
  Node* an = a.node;
  Matrix v(1, 1);
  v(0, 0) = an->value.sum();
  Var out = a.tape->make(std::move(v), detail::rg(a), nullptr);
  Node* on = out.node;
  if (detail::rg(a))
    on->backprop = [an, on] { an->grad.array() += on->grad(0, 0); };
  return out;
}

/// sum(w .* a) as a 1x1 value, w constant.
inline Var weighted_sum(Var a, const Matrix& w) {
  if (w.rows() != a.rows() || w.cols() != a.cols())
    throw ShapeError("weighted_sum: shape mismatch");
  Node* an = a.node;
  Matrix v(1, 1);
  v(0, 0) = an->value.cwiseProduct(w).sum();
  Var out = a.tape->make(std::move(v), detail::rg(a), nullptr);
  Node* on = out.node;
  if (detail::rg(a))
    on->backprop = [an, on, w] { an->grad += on->grad(0, 0) * w; };
  return out;
}

/// log( sum over support of w_ij * exp(a_ij) ), computed with max-shift
/// stabilization. All nonzero weights must be positive.
inline Var log_weighted_sum_exp(Var a, const Matrix& w) {
  if (w.rows() != a.rows() || w.cols() != a.cols())
    throw ShapeError("log_weighted_sum_exp: shape mismatch");
  Node* an = a.node;
  double m = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (Index i = 0; i < w.rows(); ++i)
    for (Index j = 0; j < w.cols(); ++j)
      if (w(i, j) != 0.0) {
        if (w(i, j) < 0.0)
          throw DomainError("log_weighted_sum_exp: negative weight");
        any = true;
        m = std::max(m, an->value(i, j));
      }
  if (!any) throw DegenerateGraphError("log_weighted_sum_exp: empty support");
  double s = 0.0;
  Matrix softw = Matrix::Zero(w.rows(), w.cols());
  for (Index i = 0; i < w.rows(); ++i)
    for (Index j = 0; j < w.cols(); ++j)
      if (w(i, j) != 0.0) {
        const double e = w(i, j) * std::exp(an->value(i, j) - m);
        softw(i, j) = e;
        s += e;
      }
  Matrix v(1, 1);
  v(0, 0) = m + std::log(s);
  Var out = a.tape->make(std::move(v), detail::rg(a), nullptr);
  Node* on = out.node;
  if (detail::rg(a))
    on->backprop = [an, on, softw = std::move(softw), s] {
      an->grad += (on->grad(0, 0) / s) * softw;
    };
  return out;
}

/// Mean negative log-likelihood of target ids under row-wise softmax of
/// logits. One logits row per target position.
inline Var cross_entropy_mean(Var logits, const std::vector<Index>& targets) {
  if (static_cast<Index>(targets.size()) != logits.rows())
    throw ShapeError("cross_entropy_mean: one logits row per target required");
  if (targets.empty()) throw ShapeError("cross_entropy_mean: empty targets");
  Node* ln = logits.node;
  const Index rows = logits.rows();
  const double inv_n = 1.0 / static_cast<double>(rows);
  Matrix softmax(rows, logits.cols());
  double total = 0.0;
  for (Index i = 0; i < rows; ++i) {
    const Index t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= logits.cols()) throw RangeError("cross_entropy_mean: target id out of range");
    const double m = ln->value.row(i).maxCoeff();
    Eigen::RowVectorXd e = (ln->value.row(i).array() - m).exp();
    const double z = e.sum();
    softmax.row(i) = e / z;
    total += (m + std::log(z)) - ln->value(i, t);
  }
  Matrix v(1, 1);
  v(0, 0) = total * inv_n;
  Var out = logits.tape->make(std::move(v), detail::rg(logits), nullptr);
  Node* on = out.node;
  if (detail::rg(logits))
    on->backprop = [ln, on, softmax = std::move(softmax), targets, inv_n] {
      const double g = on->grad(0, 0) * inv_n;
      ln->grad += g * softmax;
      for (Index i = 0; i < ln->value.rows(); ++i)
        ln->grad(i, targets[static_cast<std::size_t>(i)]) -= g;
    };
  return out;
}

/// x @ w + broadcast bias.
inline Var linear(Var x, Var w, Var b) { return add_rowvec(matmul(x, w), b); }

}  // namespace citesum::ad
