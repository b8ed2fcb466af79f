// SPDX-License-Identifier: Apache-2.0
#include "kgattack/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace kgattack {
namespace {

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw NumericError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                     b.shape_string());
}

Tape& tape_of(const Var& v) {
  if (!v.valid()) throw NumericError("operation on an unbound Var");
  return *v.tape();
}

Tape& common_tape(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  if (&tape_of(b) != &t) throw NumericError("operands recorded on different tapes");
  return t;
}

// c (m x n) += a (m x k) * b (k x n)
void gemm_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) c(i, j) += aip * b(p, j);
    }
  }
}

// c (m x k) += g (m x n) * b^T  with b (k x n)
void gemm_acc_bt(const Matrix& g, const Matrix& b, Matrix& c) {
  const std::size_t m = g.rows(), n = g.cols(), k = b.rows();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += g(i, j) * b(p, j);
      c(i, p) += acc;
    }
  }
}

// c (k x n) += a^T g  with a (m x k), g (m x n)
void gemm_acc_at(const Matrix& a, const Matrix& g, Matrix& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = g.cols();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) c(p, j) += aip * g(i, j);
    }
  }
}

template <typename Fwd, typename Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  const std::size_t ia = a.id();
  const std::array<Var, 1> in{a};
  return t.record(std::move(y), in, [ia, deriv](Tape& tp, std::size_t self) {
    const Matrix& gx = tp.value_of(ia);
    const Matrix& gy = tp.value_of(self);
    Matrix& g = tp.grad_slot(self);
    Matrix& ga = tp.grad_slot(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(gx[i], gy[i]);
  });
}

}  // namespace

// ---- Var ------------------------------------------------------------------

const Matrix& Var::value() const {
  if (tape_ == nullptr) throw NumericError("value() of an unbound Var");
  return tape_->value_of(id_);
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw NumericError("scalar() of a " + v.shape_string() + " Var");
  return v[0];
}

bool Var::requires_grad() const { return tape_ != nullptr && tape_->needs_grad(id_); }

// ---- Tape -----------------------------------------------------------------

Var Tape::constant(Matrix value) {
  if (check_finite_ && !value.all_finite()) throw NumericError("constant: non-finite value");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::span<const Var> inputs, BackwardFn fn) {
  if (check_finite_ && !value.all_finite()) {
    throw NumericError("non-finite value produced at tape node " + std::to_string(nodes_.size()));
  }
  Node n;
  n.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape() != this) throw NumericError("input recorded on a different tape");
    n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Matrix& Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw NumericError("backward: loss recorded on a different tape");
  if (loss.size() != 1) throw NumericError("backward: loss must be 1x1, got " +
                                           loss.value().shape_string());
  if (!needs_grad(loss.id())) throw NumericError("backward: loss does not depend on any parameter");
  for (Node& n : nodes_) n.grad = Matrix();
  grad_slot(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
  }
  for (Node& n : nodes_) {
    if (n.param == nullptr || n.grad.empty()) continue;
    Parameter& p = *n.param;
    if (!p.grad.same_shape(p.value)) p.grad = Matrix(p.value.rows(), p.value.cols());
    for (std::size_t k = 0; k < p.grad.size(); ++k) p.grad[k] += n.grad[k];
    p.grad_populated = true;
  }
}

Matrix Tape::grad(const Var& v) const {
  const Node& n = nodes_.at(v.id());
  if (n.grad.size() == n.value.size()) return n.grad;
  return Matrix(n.value.rows(), n.value.cols());
}

// ---- operations -----------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  if (x.cols() != y.rows()) shape_error("matmul", x, y);
  Matrix out(x.rows(), y.cols());
  gemm_acc(x, y, out);
  const std::size_t ia = a.id(), ib = b.id();
  const std::array<Var, 2> in{a, b};
  return t.record(std::move(out), in, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_slot(self);
    if (tp.needs_grad(ia)) gemm_acc_bt(g, tp.value_of(ib), tp.grad_slot(ia));
    if (tp.needs_grad(ib)) gemm_acc_at(tp.value_of(ia), g, tp.grad_slot(ib));
  });
}

Var transpose(const Var& a) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix out(x.cols(), x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(j, i) = x(i, j);
  const std::size_t ia = a.id();
  const std::array<Var, 1> in{a};
  return t.record(std::move(out), in, [ia](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_slot(self);
    Matrix& ga = tp.grad_slot(ia);
    for (std::size_t i = 0; i < ga.rows(); ++i)
      for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g(j, i);
  });
}

namespace {
Var binary_elementwise(const char* op, const Var& a, const Var& b, double sign_b) {
  Tape& t = common_tape(a, b);
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  if (!x.same_shape(y)) shape_error(op, x, y);
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + sign_b * y[i];
  const std::size_t ia = a.id(), ib = b.id();
  const std::array<Var, 2> in{a, b};
  return t.record(std::move(out), in, [ia, ib, sign_b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_slot(self);
    if (tp.needs_grad(ia)) {
      Matrix& ga = tp.grad_slot(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.needs_grad(ib)) {
      Matrix& gb = tp.grad_slot(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign_b * g[i];
    }
  });
}
}  // namespace

Var add(const Var& a, const Var& b) { return binary_elementwise("add", a, b, 1.0); }
Var sub(const Var& a, const Var& b) { return binary_elementwise("sub", a, b, -1.0); }

Var hadamard(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  if (!x.same_shape(y)) shape_error("hadamard", x, y);
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  const std::size_t ia = a.id(), ib = b.id();
  const std::array<Var, 2> in{a, b};
  return t.record(std::move(out), in, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_slot(self);
    const Matrix& xa = tp.value_of(ia);
    const Matrix& xb = tp.value_of(ib);
    if (tp.needs_grad(ia)) {
      Matrix& ga = tp.grad_slot(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * xb[i];
    }
    if (tp.needs_grad(ib)) {
      Matrix& gb = tp.grad_slot(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * xa[i];
    }
  });
}

Var scale(const Var& a, double factor, double offset) {
  return unary(
      a, [factor, offset](double x) { return factor * x + offset; },
      [factor](double, double) { return factor; });
}

Var affine(const Var& w, const Var& x, const Var& b) { return add(matmul(w, x), b); }

Var sigmoid(const Var& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(const Var& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var softmax(const Var& a) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  if (x.empty()) throw NumericError("softmax: empty input");
  Matrix out(x.rows(), x.cols());
  const double mx = *std::max_element(x.values().begin(), x.values().end());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    total += out[i];
  }
  for (std::size_t i = 0; i < x.size(); ++i) out[i] /= total;
  const std::size_t ia = a.id();
  const std::array<Var, 1> in{a};
  return t.record(std::move(out), in, [ia](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_slot(self);
    const Matrix& y = tp.value_of(self);
    double gy = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) gy += g[i] * y[i];
    Matrix& ga = tp.grad_slot(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += y[i] * (g[i] - gy);
  });
}

Var log_softmax(const Var& a) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  if (x.empty()) throw NumericError("log_softmax: empty input");
  const double mx = *std::max_element(x.values().begin(), x.values().end());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) total += std::exp(x[i] - mx);
  const double lse = mx + std::log(total);
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lse;
  const std::size_t ia = a.id();
  const std::array<Var, 1> in{a};
  return t.record(std::move(out), in, [ia](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_slot(self);
    const Matrix& y = tp.value_of(self);
    double gsum = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) gsum += g[i];
    Matrix& ga = tp.grad_slot(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] - std::exp(y[i]) * gsum;
  });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw NumericError("concat: no inputs");
  Tape& t = tape_of(parts[0]);
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (&tape_of(p) != &t) throw NumericError("concat: operands on different tapes");
    if (p.cols() != cols) shape_error("concat", parts[0].value(), p.value());
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> ids;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Matrix& v = p.value();
    std::copy(v.values().begin(), v.values().end(), out.values().begin() + offset);
    offset += v.size();
    ids.push_back(p.id());
  }
  return t.record(std::move(out), parts, [ids](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_slot(self);
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const std::size_t n = tp.value_of(id).size();
      if (tp.needs_grad(id)) {
        Matrix& gi = tp.grad_slot(id);
        for (std::size_t k = 0; k < n; ++k) gi[k] += g[off + k];
      }
      off += n;
    }
  });
}

Var hstack(std::span<const Var> columns) {
  if (columns.empty()) throw NumericError("hstack: no inputs");
  Tape& t = tape_of(columns[0]);
  const std::size_t rows = columns[0].rows();
  for (const Var& c : columns) {
    if (&tape_of(c) != &t) throw NumericError("hstack: operands on different tapes");
    if (c.cols() != 1 || c.rows() != rows) shape_error("hstack", columns[0].value(), c.value());
  }
  const std::size_t n = columns.size();
  Matrix out(rows, n);
  std::vector<std::size_t> ids;
  for (std::size_t j = 0; j < n; ++j) {
    const Matrix& v = columns[j].value();
    for (std::size_t i = 0; i < rows; ++i) out(i, j) = v[i];
    ids.push_back(columns[j].id());
  }
  return t.record(std::move(out), columns, [ids](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_slot(self);
    for (std::size_t j = 0; j < ids.size(); ++j) {
      if (!tp.needs_grad(ids[j])) continue;
      Matrix& gj = tp.grad_slot(ids[j]);
      for (std::size_t i = 0; i < gj.size(); ++i) gj[i] += g(i, j);
    }
  });
}

Var dot(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  if (x.size() != y.size()) shape_error("dot", x, y);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  const std::size_t ia = a.id(), ib = b.id();
  const std::array<Var, 2> in{a, b};
  return t.record(Matrix(1, 1, acc), in, [ia, ib](Tape& tp, std::size_t self) {
    const double g = tp.grad_slot(self)[0];
    const Matrix& xa = tp.value_of(ia);
    const Matrix& xb = tp.value_of(ib);
    if (tp.needs_grad(ia)) {
      Matrix& ga = tp.grad_slot(ia);
      for (std::size_t i = 0; i < xa.size(); ++i) ga[i] += g * xb[i];
    }
    if (tp.needs_grad(ib)) {
      Matrix& gb = tp.grad_slot(ib);
      for (std::size_t i = 0; i < xb.size(); ++i) gb[i] += g * xa[i];
    }
  });
}

Var sum(const Var& a) {
  Tape& t = tape_of(a);
  double acc = 0.0;
  for (double v : a.value().values()) acc += v;
  const std::size_t ia = a.id();
  const std::array<Var, 1> in{a};
  return t.record(Matrix(1, 1, acc), in, [ia](Tape& tp, std::size_t self) {
    const double g = tp.grad_slot(self)[0];
    Matrix& ga = tp.grad_slot(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var element(const Var& a, std::size_t i) {
  const std::array<std::size_t, 1> idx{i};
  return gather(a, idx);
}

Var gather(const Var& a, std::span<const std::size_t> indices) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix out(indices.size(), 1);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= x.size()) {
      throw NumericError("gather: index " + std::to_string(indices[k]) + " out of range for " +
                         x.shape_string());
    }
    out[k] = x[indices[k]];
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  const std::size_t ia = a.id();
  const std::array<Var, 1> in{a};
  return t.record(std::move(out), in, [ia, idx](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_slot(self);
    Matrix& ga = tp.grad_slot(ia);
    for (std::size_t k = 0; k < idx.size(); ++k) ga[idx[k]] += g[k];
  });
}

Var scatter_add(const Var& a, std::span<const std::size_t> indices, std::size_t n) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  if (indices.size() != x.size()) {
    throw NumericError("scatter_add: " + std::to_string(indices.size()) + " indices for " +
                       x.shape_string());
  }
  Matrix out(n, 1);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= n) throw NumericError("scatter_add: index out of range");
    out[indices[k]] += x[k];
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  const std::size_t ia = a.id();
  const std::array<Var, 1> in{a};
  return t.record(std::move(out), in, [ia, idx](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_slot(self);
    Matrix& ga = tp.grad_slot(ia);
    for (std::size_t k = 0; k < idx.size(); ++k) ga[k] += g[idx[k]];
  });
}

Var row(const Var& a, std::size_t r) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  if (r >= x.rows()) {
    throw NumericError("row: index " + std::to_string(r) + " out of range for " +
                       x.shape_string());
  }
  const auto src = x.row(r);
  Matrix out = Matrix::column(std::vector<double>(src.begin(), src.end()));
  const std::size_t ia = a.id();
  const std::array<Var, 1> in{a};
  return t.record(std::move(out), in, [ia, r](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_slot(self);
    auto dst = tp.grad_slot(ia).row(r);
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g[k];
  });
}

Var minimum(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  if (!x.same_shape(y)) shape_error("minimum", x, y);
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::min(x[i], y[i]);
  const std::size_t ia = a.id(), ib = b.id();
  const std::array<Var, 2> in{a, b};
  return t.record(std::move(out), in, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_slot(self);
    const Matrix& xa = tp.value_of(ia);
    const Matrix& xb = tp.value_of(ib);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const bool take_a = xa[i] <= xb[i];
      const std::size_t target = take_a ? ia : ib;
      if (tp.needs_grad(target)) tp.grad_slot(target)[i] += g[i];
    }
  });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var detach(const Var& a) { return tape_of(a).constant(a.value()); }

}  // namespace kgattack
