#include "core/tensor.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

#include "core/errors.hpp"

namespace rada::ad {

namespace {

using MatMap = Eigen::Map<
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic,
                                                   Eigen::Dynamic, Eigen::RowMajor>>;

thread_local bool g_grad_enabled = true;
thread_local std::int64_t g_allocated = 0;

Buffer alloc_buffer(std::int64_t n, double fill = 0.0) {
  g_allocated += n;
  return std::make_shared<std::vector<double>>(static_cast<size_t>(n), fill);
}

Var make_node(const Shape& shape, std::vector<Var> parents) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->val = alloc_buffer(shape.numel());
  if (g_grad_enabled) {
    for (const auto& p : parents)
      if (p->requires_grad) {
        n->requires_grad = true;
        break;
      }
  }
  if (n->requires_grad) {
    n->grad = alloc_buffer(shape.numel());
    n->parents = std::move(parents);
  }
  return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  check_arg(a->shape == b->shape, std::string(op) + ": shape mismatch " +
                                      a->shape.str() + " vs " + b->shape.str());
}

void check_2d(const Var& a, const char* op) {
  check_arg(a->shape.ndim() == 2, std::string(op) + ": expected 2-d tensor, got " +
                                      a->shape.str());
}

// Elementwise op with backward dx = g * dfdx(x, y).
template <class F, class DF>
Var unary_op(const Var& a, F f, DF dfdx) {
  Var out = make_node(a->shape, {a});
  const std::int64_t n = a->numel();
  const double* x = a->v();
  double* y = out->v();
  for (std::int64_t i = 0; i < n; ++i) y[i] = f(x[i]);
  if (out->requires_grad) {
    out->backward = [dfdx](Node& self) {
      Node& p = *self.parents[0];
      const std::int64_t n = self.numel();
      const double* g = self.g();
      const double* x = p.v();
      const double* y = self.v();
      double* d = p.g();
      for (std::int64_t i = 0; i < n; ++i) d[i] += g[i] * dfdx(x[i], y[i]);
    };
  }
  return out;
}

}  // namespace

std::string Shape::str() const {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
  os << ")";
  return os.str();
}

NoGradScope::NoGradScope() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradScope::~NoGradScope() { g_grad_enabled = saved_; }
bool grad_enabled() { return g_grad_enabled; }

std::int64_t allocated_doubles() { return g_allocated; }
void reset_allocated_doubles() { g_allocated = 0; }

Var constant(const Shape& shape, double fill) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->val = alloc_buffer(shape.numel(), fill);
  return n;
}

Var constant(const Shape& shape, std::vector<double> data) {
  check_arg(static_cast<std::int64_t>(data.size()) == shape.numel(),
            "constant: data size does not match shape " + shape.str());
  auto n = std::make_shared<Node>();
  n->shape = shape;
  g_allocated += shape.numel();
  n->val = std::make_shared<std::vector<double>>(std::move(data));
  return n;
}

Var leaf(const Shape& shape, std::vector<double> data) {
  Var n = constant(shape, std::move(data));
  n->requires_grad = true;
  n->leaf = true;
  n->grad = alloc_buffer(shape.numel());
  return n;
}

Var scalar(double v) { return constant(Shape{1}, std::vector<double>{v}); }

void zero_grad(const Var& v) {
  if (v->grad) std::fill(v->grad->begin(), v->grad->end(), 0.0);
}

void backprop(const Var& root) {
  check_arg(root->numel() == 1, "backprop: root must be scalar");
  if (!root->requires_grad) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  struct Frame {
    Node* n;
    size_t next;
  };
  std::vector<Frame> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      Node* p = f.n->parents[f.next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }
  (*root->grad)[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

// ---- elementwise ----

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Var out = make_node(a->shape, {a, b});
  const std::int64_t n = a->numel();
  for (std::int64_t i = 0; i < n; ++i) out->v()[i] = a->v()[i] + b->v()[i];
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      const std::int64_t n = self.numel();
      for (int k = 0; k < 2; ++k) {
        Node& p = *self.parents[k];
        if (!p.requires_grad) continue;
        for (std::int64_t i = 0; i < n; ++i) p.g()[i] += self.g()[i];
      }
    };
  }
  return out;
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Var out = make_node(a->shape, {a, b});
  const std::int64_t n = a->numel();
  for (std::int64_t i = 0; i < n; ++i) out->v()[i] = a->v()[i] - b->v()[i];
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      const std::int64_t n = self.numel();
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      if (pa.requires_grad)
        for (std::int64_t i = 0; i < n; ++i) pa.g()[i] += self.g()[i];
      if (pb.requires_grad)
        for (std::int64_t i = 0; i < n; ++i) pb.g()[i] -= self.g()[i];
    };
  }
  return out;
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Var out = make_node(a->shape, {a, b});
  const std::int64_t n = a->numel();
  for (std::int64_t i = 0; i < n; ++i) out->v()[i] = a->v()[i] * b->v()[i];
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      const std::int64_t n = self.numel();
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      if (pa.requires_grad)
        for (std::int64_t i = 0; i < n; ++i) pa.g()[i] += self.g()[i] * pb.v()[i];
      if (pb.requires_grad)
        for (std::int64_t i = 0; i < n; ++i) pb.g()[i] += self.g()[i] * pa.v()[i];
    };
  }
  return out;
}

Var div(const Var& a, const Var& b) {
  check_same_shape(a, b, "div");
  Var out = make_node(a->shape, {a, b});
  const std::int64_t n = a->numel();
  for (std::int64_t i = 0; i < n; ++i) out->v()[i] = a->v()[i] / b->v()[i];
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      const std::int64_t n = self.numel();
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      for (std::int64_t i = 0; i < n; ++i) {
        const double inv = 1.0 / pb.v()[i];
        if (pa.requires_grad) pa.g()[i] += self.g()[i] * inv;
        if (pb.requires_grad)
          pb.g()[i] -= self.g()[i] * pa.v()[i] * inv * inv;
      }
    };
  }
  return out;
}

Var neg(const Var& a) {
  return unary_op(a, [](double x) { return -x; },
                  [](double, double) { return -1.0; });
}

Var add_scalar(const Var& a, double s) {
  return unary_op(a, [s](double x) { return x + s; },
                  [](double, double) { return 1.0; });
}

Var mul_scalar(const Var& a, double s) {
  return unary_op(a, [s](double x) { return x * s; },
                  [s](double, double) { return s; });
}

Var relu(const Var& a) {
  return unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; },
                  [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& a) {
  return unary_op(a,
                  [](double x) {
                    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                    : std::exp(x) / (1.0 + std::exp(x));
                  },
                  [](double, double y) { return y * (1.0 - y); });
}

Var exp(const Var& a) {
  return unary_op(a, [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary_op(a, [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Var sqrt(const Var& a) {
  return unary_op(a, [](double x) { return std::sqrt(x); },
                  [](double, double y) { return 0.5 / std::max(y, 1e-150); });
}

Var square(const Var& a) {
  return unary_op(a, [](double x) { return x * x; },
                  [](double x, double) { return 2.0 * x; });
}

Var abs(const Var& a) {
  return unary_op(a, [](double x) { return std::abs(x); },
                  [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var sin(const Var& a) {
  return unary_op(a, [](double x) { return std::sin(x); },
                  [](double x, double) { return std::cos(x); });
}

Var cos(const Var& a) {
  return unary_op(a, [](double x) { return std::cos(x); },
                  [](double x, double) { return -std::sin(x); });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary_op(a,
                  [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
                  [lo, hi](double x, double) {
                    return (x >= lo && x <= hi) ? 1.0 : 0.0;
                  });
}

// ---- reductions ----

Var sum(const Var& a) {
  Var out = make_node(Shape{1}, {a});
  double acc = 0.0;
  const std::int64_t n = a->numel();
  for (std::int64_t i = 0; i < n; ++i) acc += a->v()[i];
  out->v()[0] = acc;
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      Node& p = *self.parents[0];
      const double g = self.g()[0];
      const std::int64_t n = p.numel();
      for (std::int64_t i = 0; i < n; ++i) p.g()[i] += g;
    };
  }
  return out;
}

Var mean(const Var& a) {
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a->numel()));
}

Var sum_axis0(const Var& a) {
  check_2d(a, "sum_axis0");
  const int r = a->shape[0], c = a->shape[1];
  Var out = make_node(Shape{c}, {a});
  ConstMatMap x(a->v(), r, c);
  Eigen::Map<Eigen::RowVectorXd>(out->v(), c) = x.colwise().sum();
  if (out->requires_grad) {
    out->backward = [r, c](Node& self) {
      Node& p = *self.parents[0];
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) p.g()[i * c + j] += self.g()[j];
    };
  }
  return out;
}

Var sum_axis1(const Var& a) {
  check_2d(a, "sum_axis1");
  const int r = a->shape[0], c = a->shape[1];
  Var out = make_node(Shape{r}, {a});
  ConstMatMap x(a->v(), r, c);
  Eigen::Map<Eigen::VectorXd>(out->v(), r) = x.rowwise().sum();
  if (out->requires_grad) {
    out->backward = [r, c](Node& self) {
      Node& p = *self.parents[0];
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) p.g()[i * c + j] += self.g()[i];
    };
  }
  return out;
}

Var mean_axis0(const Var& a) {
  return mul_scalar(sum_axis0(a), 1.0 / static_cast<double>(a->shape[0]));
}

// ---- softmax family ----

namespace {

// axis = 0: softmax over rows within each column; axis = 1: over columns
// within each row.
Var softmax_impl(const Var& a, int axis) {
  check_2d(a, "softmax");
  const int r = a->shape[0], c = a->shape[1];
  Var out = make_node(a->shape, {a});
  const int outer = axis == 0 ? c : r;
  const int inner = axis == 0 ? r : c;
  const int ostride = axis == 0 ? 1 : c;
  const int istride = axis == 0 ? c : 1;
  for (int o = 0; o < outer; ++o) {
    const double* x = a->v() + o * ostride;
    double* y = out->v() + o * ostride;
    double m = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < inner; ++i) m = std::max(m, x[i * istride]);
    double z = 0.0;
    for (int i = 0; i < inner; ++i) {
      const double e = std::exp(x[i * istride] - m);
      y[i * istride] = e;
      z += e;
    }
    const double invz = 1.0 / z;
    for (int i = 0; i < inner; ++i) y[i * istride] *= invz;
  }
  if (out->requires_grad) {
    out->backward = [outer, inner, ostride, istride](Node& self) {
      Node& p = *self.parents[0];
      for (int o = 0; o < outer; ++o) {
        const double* y = self.v() + o * ostride;
        const double* g = self.g() + o * ostride;
        double* d = p.g() + o * ostride;
        double dot = 0.0;
        for (int i = 0; i < inner; ++i) dot += y[i * istride] * g[i * istride];
        for (int i = 0; i < inner; ++i)
          d[i * istride] += y[i * istride] * (g[i * istride] - dot);
      }
    };
  }
  return out;
}

}  // namespace

Var softmax_axis0(const Var& a) { return softmax_impl(a, 0); }
Var softmax_axis1(const Var& a) { return softmax_impl(a, 1); }

Var logsoftmax_axis1(const Var& a) {
  check_2d(a, "logsoftmax_axis1");
  const int r = a->shape[0], c = a->shape[1];
  Var out = make_node(a->shape, {a});
  for (int i = 0; i < r; ++i) {
    const double* x = a->v() + i * c;
    double* y = out->v() + i * c;
    double m = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j) m = std::max(m, x[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(x[j] - m);
    const double lse = m + std::log(z);
    for (int j = 0; j < c; ++j) y[j] = x[j] - lse;
  }
  if (out->requires_grad) {
    out->backward = [r, c](Node& self) {
      Node& p = *self.parents[0];
      for (int i = 0; i < r; ++i) {
        const double* y = self.v() + i * c;
        const double* g = self.g() + i * c;
        double* d = p.g() + i * c;
        double gsum = 0.0;
        for (int j = 0; j < c; ++j) gsum += g[j];
        for (int j = 0; j < c; ++j) d[j] += g[j] - std::exp(y[j]) * gsum;
      }
    };
  }
  return out;
}

// ---- linear algebra ----

Var matmul(const Var& a, const Var& b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  check_arg(a->shape[1] == b->shape[0], "matmul: inner dims " + a->shape.str() +
                                            " x " + b->shape.str());
  const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
  Var out = make_node(Shape{m, n}, {a, b});
  MatMap(out->v(), m, n).noalias() =
      ConstMatMap(a->v(), m, k) * ConstMatMap(b->v(), k, n);
  if (out->requires_grad) {
    out->backward = [m, k, n](Node& self) {
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      ConstMatMap g(self.g(), m, n);
      if (pa.requires_grad)
        MatMap(pa.g(), m, k).noalias() += g * ConstMatMap(pb.v(), k, n).transpose();
      if (pb.requires_grad)
        MatMap(pb.g(), k, n).noalias() += ConstMatMap(pa.v(), m, k).transpose() * g;
    };
  }
  return out;
}

Var matmul_bt(const Var& a, const Var& b) {
  check_2d(a, "matmul_bt");
  check_2d(b, "matmul_bt");
  check_arg(a->shape[1] == b->shape[1], "matmul_bt: inner dims " +
                                            a->shape.str() + " x " + b->shape.str());
  const int m = a->shape[0], k = a->shape[1], n = b->shape[0];
  Var out = make_node(Shape{m, n}, {a, b});
  MatMap(out->v(), m, n).noalias() =
      ConstMatMap(a->v(), m, k) * ConstMatMap(b->v(), n, k).transpose();
  if (out->requires_grad) {
    out->backward = [m, k, n](Node& self) {
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      ConstMatMap g(self.g(), m, n);
      if (pa.requires_grad)
        MatMap(pa.g(), m, k).noalias() += g * ConstMatMap(pb.v(), n, k);
      if (pb.requires_grad)
        MatMap(pb.g(), n, k).noalias() += g.transpose() * ConstMatMap(pa.v(), m, k);
    };
  }
  return out;
}

Var add_rowvec(const Var& a, const Var& v) {
  check_2d(a, "add_rowvec");
  check_arg(v->shape.ndim() == 1 && v->shape[0] == a->shape[1],
            "add_rowvec: vector width mismatch");
  const int r = a->shape[0], c = a->shape[1];
  Var out = make_node(a->shape, {a, v});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out->v()[i * c + j] = a->v()[i * c + j] + v->v()[j];
  if (out->requires_grad) {
    out->backward = [r, c](Node& self) {
      Node& pa = *self.parents[0];
      Node& pv = *self.parents[1];
      if (pa.requires_grad) {
        const std::int64_t n = self.numel();
        for (std::int64_t i = 0; i < n; ++i) pa.g()[i] += self.g()[i];
      }
      if (pv.requires_grad)
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) pv.g()[j] += self.g()[i * c + j];
    };
  }
  return out;
}

Var mul_rowvec(const Var& a, const Var& v) {
  check_2d(a, "mul_rowvec");
  check_arg(v->shape.ndim() == 1 && v->shape[0] == a->shape[1],
            "mul_rowvec: vector width mismatch");
  const int r = a->shape[0], c = a->shape[1];
  Var out = make_node(a->shape, {a, v});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out->v()[i * c + j] = a->v()[i * c + j] * v->v()[j];
  if (out->requires_grad) {
    out->backward = [r, c](Node& self) {
      Node& pa = *self.parents[0];
      Node& pv = *self.parents[1];
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) {
          const double g = self.g()[i * c + j];
          if (pa.requires_grad) pa.g()[i * c + j] += g * pv.v()[j];
          if (pv.requires_grad) pv.g()[j] += g * pa.v()[i * c + j];
        }
    };
  }
  return out;
}

Var mul_colvec(const Var& a, const Var& v) {
  check_2d(a, "mul_colvec");
  check_arg(v->shape.ndim() == 1 && v->shape[0] == a->shape[0],
            "mul_colvec: vector length mismatch");
  const int r = a->shape[0], c = a->shape[1];
  Var out = make_node(a->shape, {a, v});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out->v()[i * c + j] = a->v()[i * c + j] * v->v()[i];
  if (out->requires_grad) {
    out->backward = [r, c](Node& self) {
      Node& pa = *self.parents[0];
      Node& pv = *self.parents[1];
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) {
          const double g = self.g()[i * c + j];
          if (pa.requires_grad) pa.g()[i * c + j] += g * pv.v()[i];
          if (pv.requires_grad) pv.g()[i] += g * pa.v()[i * c + j];
        }
    };
  }
  return out;
}

// ---- shape ----

Var reshape(const Var& a, const Shape& shape) {
  check_arg(shape.numel() == a->numel(),
            "reshape: element count mismatch " + a->shape.str() + " -> " + shape.str());
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->val = a->val;  // aliasing view: value and grad buffers are shared
  if (g_grad_enabled && a->requires_grad) {
    n->requires_grad = true;
    n->grad = a->grad ? a->grad : (a->grad = alloc_buffer(a->numel()));
    n->parents = {a};
  }
  return n;
}

Var concat_rows(const std::vector<Var>& parts) {
  check_arg(!parts.empty(), "concat_rows: empty input");
  const int c = parts[0]->shape.ndim() == 2 ? parts[0]->shape[1] : -1;
  int r = 0;
  for (const auto& p : parts) {
    check_2d(p, "concat_rows");
    check_arg(p->shape[1] == c, "concat_rows: column count mismatch");
    r += p->shape[0];
  }
  Var out = make_node(Shape{r, c}, parts);
  double* dst = out->v();
  for (const auto& p : parts) {
    std::memcpy(dst, p->v(), sizeof(double) * static_cast<size_t>(p->numel()));
    dst += p->numel();
  }
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      std::int64_t off = 0;
      for (auto& pp : self.parents) {
        Node& p = *pp;
        if (p.requires_grad)
          for (std::int64_t i = 0; i < p.numel(); ++i)
            p.g()[i] += self.g()[off + i];
        off += p.numel();
      }
    };
  }
  return out;
}

Var concat_cols(const std::vector<Var>& parts) {
  check_arg(!parts.empty(), "concat_cols: empty input");
  const int r = parts[0]->shape[0];
  int c = 0;
  for (const auto& p : parts) {
    check_2d(p, "concat_cols");
    check_arg(p->shape[0] == r, "concat_cols: row count mismatch");
    c += p->shape[1];
  }
  Var out = make_node(Shape{r, c}, parts);
  int off = 0;
  for (const auto& p : parts) {
    const int pc = p->shape[1];
    for (int i = 0; i < r; ++i)
      std::memcpy(out->v() + i * c + off, p->v() + i * pc,
                  sizeof(double) * static_cast<size_t>(pc));
    off += pc;
  }
  if (out->requires_grad) {
    out->backward = [r, c](Node& self) {
      int off = 0;
      for (auto& pp : self.parents) {
        Node& p = *pp;
        const int pc = p.shape[1];
        if (p.requires_grad)
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < pc; ++j)
              p.g()[i * pc + j] += self.g()[i * c + off + j];
        off += pc;
      }
    };
  }
  return out;
}

Var slice_cols(const Var& a, int c0, int c1) {
  check_2d(a, "slice_cols");
  check_arg(0 <= c0 && c0 < c1 && c1 <= a->shape[1], "slice_cols: bad range");
  const int r = a->shape[0], c = a->shape[1], w = c1 - c0;
  Var out = make_node(Shape{r, w}, {a});
  for (int i = 0; i < r; ++i)
    std::memcpy(out->v() + i * w, a->v() + i * c + c0,
                sizeof(double) * static_cast<size_t>(w));
  if (out->requires_grad) {
    out->backward = [r, c, c0, w](Node& self) {
      Node& p = *self.parents[0];
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < w; ++j) p.g()[i * c + c0 + j] += self.g()[i * w + j];
    };
  }
  return out;
}

Var gather_rows(const Var& a, std::vector<int> rows) {
  check_2d(a, "gather_rows");
  const int c = a->shape[1];
  const int k = static_cast<int>(rows.size());
  for (int r : rows)
    check_arg(0 <= r && r < a->shape[0], "gather_rows: index out of range");
  Var out = make_node(Shape{k, c}, {a});
  for (int i = 0; i < k; ++i)
    std::memcpy(out->v() + i * c, a->v() + rows[static_cast<size_t>(i)] * c,
                sizeof(double) * static_cast<size_t>(c));
  if (out->requires_grad) {
    out->backward = [rows = std::move(rows), c](Node& self) {
      Node& p = *self.parents[0];
      for (size_t i = 0; i < rows.size(); ++i)
        for (int j = 0; j < c; ++j)
          p.g()[rows[i] * c + j] += self.g()[static_cast<int>(i) * c + j];
    };
  }
  return out;
}

Var gather_elements(const Var& a, std::vector<int> rows, std::vector<int> cols) {
  check_2d(a, "gather_elements");
  check_arg(rows.size() == cols.size(), "gather_elements: index size mismatch");
  const int c = a->shape[1];
  const int k = static_cast<int>(rows.size());
  for (int i = 0; i < k; ++i) {
    check_arg(0 <= rows[static_cast<size_t>(i)] && rows[static_cast<size_t>(i)] < a->shape[0] &&
                  0 <= cols[static_cast<size_t>(i)] && cols[static_cast<size_t>(i)] < c,
              "gather_elements: index out of range");
  }
  Var out = make_node(Shape{k}, {a});
  for (int i = 0; i < k; ++i)
    out->v()[i] = a->v()[rows[static_cast<size_t>(i)] * c + cols[static_cast<size_t>(i)]];
  if (out->requires_grad) {
    out->backward = [rows = std::move(rows), cols = std::move(cols), c](Node& self) {
      Node& p = *self.parents[0];
      for (size_t i = 0; i < rows.size(); ++i)
        p.g()[rows[i] * c + cols[i]] += self.g()[i];
    };
  }
  return out;
}

// ---- structured ops ----

namespace {

// im2col for one strip of output rows [y0,y1); col is (y1-y0)*W x kh*kw*cin.
void im2col_strip(const double* x, int h, int w, int cin, int kh, int kw,
                  int y0, int y1, double* col) {
  const int ph = kh / 2, pw = kw / 2;
  const int patch = kh * kw * cin;
  for (int y = y0; y < y1; ++y) {
    for (int xo = 0; xo < w; ++xo) {
      double* dst = col + ((y - y0) * w + xo) * patch;
      for (int ky = 0; ky < kh; ++ky) {
        const int sy = y + ky - ph;
        for (int kx = 0; kx < kw; ++kx) {
          const int sx = xo + kx - pw;
          double* d = dst + (ky * kw + kx) * cin;
          if (sy < 0 || sy >= h || sx < 0 || sx >= w) {
            std::fill(d, d + cin, 0.0);
          } else {
            std::memcpy(d, x + (sy * w + sx) * cin,
                        sizeof(double) * static_cast<size_t>(cin));
          }
        }
      }
    }
  }
}

void col2im_strip(const double* col, int h, int w, int cin, int kh, int kw,
                  int y0, int y1, double* dx) {
  const int ph = kh / 2, pw = kw / 2;
  const int patch = kh * kw * cin;
  for (int y = y0; y < y1; ++y) {
    for (int xo = 0; xo < w; ++xo) {
      const double* src = col + ((y - y0) * w + xo) * patch;
      for (int ky = 0; ky < kh; ++ky) {
        const int sy = y + ky - ph;
        if (sy < 0 || sy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int sx = xo + kx - pw;
          if (sx < 0 || sx >= w) continue;
          const double* s = src + (ky * kw + kx) * cin;
          double* d = dx + (sy * w + sx) * cin;
          for (int ci = 0; ci < cin; ++ci) d[ci] += s[ci];
        }
      }
    }
  }
}

int conv_strip_rows(int w, int patch) {
  // keep the scratch column buffer around 4M doubles
  const std::int64_t target = 4 << 20;
  const std::int64_t per_row = static_cast<std::int64_t>(w) * patch;
  return std::max<int>(1, static_cast<int>(target / std::max<std::int64_t>(per_row, 1)));
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b) {
  check_arg(x->shape.ndim() == 3, "conv2d: input must be (H,W,C), got " + x->shape.str());
  check_arg(w->shape.ndim() == 4, "conv2d: weight must be (kh,kw,Cin,Cout)");
  const int h = x->shape[0], iw = x->shape[1], cin = x->shape[2];
  const int kh = w->shape[0], kw = w->shape[1], cout = w->shape[3];
  check_arg(w->shape[2] == cin, "conv2d: channel mismatch " + x->shape.str() +
                                    " vs " + w->shape.str());
  check_arg(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernel must be odd");
  if (b) check_arg(b->shape.ndim() == 1 && b->shape[0] == cout, "conv2d: bias size");

  std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  Var out = make_node(Shape{h, iw, cout}, std::move(parents));

  const int patch = kh * kw * cin;
  const int strip = conv_strip_rows(iw, patch);
  std::vector<double> col(static_cast<size_t>(strip) * iw * patch);
  ConstMatMap wm(w->v(), patch, cout);
  for (int y0 = 0; y0 < h; y0 += strip) {
    const int y1 = std::min(h, y0 + strip);
    im2col_strip(x->v(), h, iw, cin, kh, kw, y0, y1, col.data());
    MatMap om(out->v() + static_cast<std::int64_t>(y0) * iw * cout, (y1 - y0) * iw, cout);
    om.noalias() = ConstMatMap(col.data(), (y1 - y0) * iw, patch) * wm;
  }
  if (b) {
    for (std::int64_t p = 0; p < static_cast<std::int64_t>(h) * iw; ++p)
      for (int co = 0; co < cout; ++co) out->v()[p * cout + co] += b->v()[co];
  }

  if (out->requires_grad) {
    const bool has_bias = static_cast<bool>(b);
    out->backward = [h, iw, cin, kh, kw, cout, patch, strip, has_bias](Node& self) {
      Node& px = *self.parents[0];
      Node& pw = *self.parents[1];
      std::vector<double> col(static_cast<size_t>(strip) * iw * patch);
      std::vector<double> dcol;
      if (px.requires_grad) dcol.resize(col.size());
      ConstMatMap wm(pw.v(), patch, cout);
      for (int y0 = 0; y0 < h; y0 += strip) {
        const int y1 = std::min(h, y0 + strip);
        const int rows = (y1 - y0) * iw;
        ConstMatMap gm(self.g() + static_cast<std::int64_t>(y0) * iw * cout, rows, cout);
        if (pw.requires_grad) {
          im2col_strip(px.v(), h, iw, cin, kh, kw, y0, y1, col.data());
          MatMap(pw.g(), patch, cout).noalias() +=
              ConstMatMap(col.data(), rows, patch).transpose() * gm;
        }
        if (px.requires_grad) {
          MatMap(dcol.data(), rows, patch).noalias() = gm * wm.transpose();
          col2im_strip(dcol.data(), h, iw, cin, kh, kw, y0, y1, px.g());
        }
      }
      if (has_bias) {
        Node& pb = *self.parents[2];
        if (pb.requires_grad) {
          for (std::int64_t p = 0; p < static_cast<std::int64_t>(h) * iw; ++p)
            for (int co = 0; co < cout; ++co) pb.g()[co] += self.g()[p * cout + co];
        }
      }
    };
  }
  return out;
}

Var maxpool2d(const Var& x, int k) {
  check_arg(x->shape.ndim() == 3, "maxpool2d: input must be (H,W,C)");
  const int h = x->shape[0], w = x->shape[1], c = x->shape[2];
  check_arg(k >= 1 && h % k == 0 && w % k == 0,
            "maxpool2d: spatial size " + x->shape.str() + " not divisible by kernel");
  const int oh = h / k, ow = w / k;
  Var out = make_node(Shape{oh, ow, c}, {x});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(
      static_cast<size_t>(out->numel()));
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int ci = 0; ci < c; ++ci) {
        double best = -std::numeric_limits<double>::infinity();
        std::int64_t bidx = -1;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx) {
            const std::int64_t idx =
                (static_cast<std::int64_t>(oy * k + dy) * w + (ox * k + dx)) * c + ci;
            if (x->v()[idx] > best) {
              best = x->v()[idx];
              bidx = idx;
            }
          }
        const std::int64_t oidx = (static_cast<std::int64_t>(oy) * ow + ox) * c + ci;
        out->v()[oidx] = best;
        (*argmax)[static_cast<size_t>(oidx)] = bidx;
      }
  if (out->requires_grad) {
    out->backward = [argmax](Node& self) {
      Node& p = *self.parents[0];
      const std::int64_t n = self.numel();
      for (std::int64_t i = 0; i < n; ++i)
        p.g()[(*argmax)[static_cast<size_t>(i)]] += self.g()[i];
    };
  }
  return out;
}

namespace {

struct LerpAxis {
  std::vector<int> i0, i1;
  std::vector<double> w1;  // weight of i1; weight of i0 is 1-w1
};

LerpAxis make_lerp_axis(int in, int out) {
  LerpAxis ax;
  ax.i0.resize(static_cast<size_t>(out));
  ax.i1.resize(static_cast<size_t>(out));
  ax.w1.resize(static_cast<size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double s = (o + 0.5) * scale - 0.5;
    s = std::min(std::max(s, 0.0), static_cast<double>(in - 1));
    const int s0 = static_cast<int>(std::floor(s));
    ax.i0[static_cast<size_t>(o)] = s0;
    ax.i1[static_cast<size_t>(o)] = std::min(s0 + 1, in - 1);
    ax.w1[static_cast<size_t>(o)] = s - s0;
  }
  return ax;
}

}  // namespace

Var upsample_bilinear(const Var& x, int out_h, int out_w) {
  check_arg(x->shape.ndim() == 3, "upsample_bilinear: input must be (H,W,C)");
  const int h = x->shape[0], w = x->shape[1], c = x->shape[2];
  Var out = make_node(Shape{out_h, out_w, c}, {x});
  auto ay = std::make_shared<LerpAxis>(make_lerp_axis(h, out_h));
  auto axx = std::make_shared<LerpAxis>(make_lerp_axis(w, out_w));
  for (int oy = 0; oy < out_h; ++oy) {
    const int y0 = ay->i0[static_cast<size_t>(oy)], y1 = ay->i1[static_cast<size_t>(oy)];
    const double wy = ay->w1[static_cast<size_t>(oy)];
    for (int ox = 0; ox < out_w; ++ox) {
      const int x0 = axx->i0[static_cast<size_t>(ox)], x1 = axx->i1[static_cast<size_t>(ox)];
      const double wx = axx->w1[static_cast<size_t>(ox)];
      const double* p00 = x->v() + (static_cast<std::int64_t>(y0) * w + x0) * c;
      const double* p01 = x->v() + (static_cast<std::int64_t>(y0) * w + x1) * c;
      const double* p10 = x->v() + (static_cast<std::int64_t>(y1) * w + x0) * c;
      const double* p11 = x->v() + (static_cast<std::int64_t>(y1) * w + x1) * c;
      double* o = out->v() + (static_cast<std::int64_t>(oy) * out_w + ox) * c;
      for (int ci = 0; ci < c; ++ci)
        o[ci] = (1 - wy) * ((1 - wx) * p00[ci] + wx * p01[ci]) +
                wy * ((1 - wx) * p10[ci] + wx * p11[ci]);
    }
  }
  if (out->requires_grad) {
    out->backward = [ay, axx, h, w, c, out_h, out_w](Node& self) {
      Node& p = *self.parents[0];
      for (int oy = 0; oy < out_h; ++oy) {
        const int y0 = ay->i0[static_cast<size_t>(oy)], y1 = ay->i1[static_cast<size_t>(oy)];
        const double wy = ay->w1[static_cast<size_t>(oy)];
        for (int ox = 0; ox < out_w; ++ox) {
          const int x0 = axx->i0[static_cast<size_t>(ox)], x1 = axx->i1[static_cast<size_t>(ox)];
          const double wx = axx->w1[static_cast<size_t>(ox)];
          const double* g = self.g() + (static_cast<std::int64_t>(oy) * out_w + ox) * c;
          double* g00 = p.g() + (static_cast<std::int64_t>(y0) * w + x0) * c;
          double* g01 = p.g() + (static_cast<std::int64_t>(y0) * w + x1) * c;
          double* g10 = p.g() + (static_cast<std::int64_t>(y1) * w + x0) * c;
          double* g11 = p.g() + (static_cast<std::int64_t>(y1) * w + x1) * c;
          for (int ci = 0; ci < c; ++ci) {
            g00[ci] += (1 - wy) * (1 - wx) * g[ci];
            g01[ci] += (1 - wy) * wx * g[ci];
            g10[ci] += wy * (1 - wx) * g[ci];
            g11[ci] += wy * wx * g[ci];
          }
        }
      }
    };
  }
  return out;
}

Var grid_sample(const Var& map, const Var& pts) {
  check_arg(map->shape.ndim() == 3, "grid_sample: map must be (H,W,C)");
  check_arg(pts->shape.ndim() == 2 && pts->shape[1] == 2,
            "grid_sample: points must be (N,2)");
  const int h = map->shape[0], w = map->shape[1], c = map->shape[2];
  const int n = pts->shape[0];
  Var out = make_node(Shape{n, c}, {map, pts});
  // corner indices and fractional weights; positions clamped to the map
  auto ix0 = std::make_shared<std::vector<int>>(static_cast<size_t>(n));
  auto iy0 = std::make_shared<std::vector<int>>(static_cast<size_t>(n));
  auto fx = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  auto fy = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  auto live = std::make_shared<std::vector<unsigned char>>(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double u = pts->v()[i * 2 + 0];
    const double v = pts->v()[i * 2 + 1];
    const bool inside = u >= 0.0 && u <= w - 1.0 && v >= 0.0 && v <= h - 1.0;
    const double cu = std::min(std::max(u, 0.0), static_cast<double>(w - 1));
    const double cv = std::min(std::max(v, 0.0), static_cast<double>(h - 1));
    int x0 = static_cast<int>(std::floor(cu));
    int y0 = static_cast<int>(std::floor(cv));
    x0 = std::min(x0, w - 1);
    y0 = std::min(y0, h - 1);
    (*ix0)[static_cast<size_t>(i)] = x0;
    (*iy0)[static_cast<size_t>(i)] = y0;
    (*fx)[static_cast<size_t>(i)] = cu - x0;
    (*fy)[static_cast<size_t>(i)] = cv - y0;
    (*live)[static_cast<size_t>(i)] = inside ? 1 : 0;
    const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    const double a = (*fx)[static_cast<size_t>(i)], bwt = (*fy)[static_cast<size_t>(i)];
    const double* p00 = map->v() + (static_cast<std::int64_t>(y0) * w + x0) * c;
    const double* p01 = map->v() + (static_cast<std::int64_t>(y0) * w + x1) * c;
    const double* p10 = map->v() + (static_cast<std::int64_t>(y1) * w + x0) * c;
    const double* p11 = map->v() + (static_cast<std::int64_t>(y1) * w + x1) * c;
    for (int ci = 0; ci < c; ++ci)
      out->v()[i * c + ci] = (1 - bwt) * ((1 - a) * p00[ci] + a * p01[ci]) +
                             bwt * ((1 - a) * p10[ci] + a * p11[ci]);
  }
  if (out->requires_grad) {
    out->backward = [ix0, iy0, fx, fy, live, h, w, c](Node& self) {
      Node& pm = *self.parents[0];
      Node& pp = *self.parents[1];
      const int n = self.shape[0];
      for (int i = 0; i < n; ++i) {
        const int x0 = (*ix0)[static_cast<size_t>(i)], y0 = (*iy0)[static_cast<size_t>(i)];
        const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
        const double a = (*fx)[static_cast<size_t>(i)], bwt = (*fy)[static_cast<size_t>(i)];
        const double* g = self.g() + i * c;
        if (pm.requires_grad) {
          double* g00 = pm.g() + (static_cast<std::int64_t>(y0) * w + x0) * c;
          double* g01 = pm.g() + (static_cast<std::int64_t>(y0) * w + x1) * c;
          double* g10 = pm.g() + (static_cast<std::int64_t>(y1) * w + x0) * c;
          double* g11 = pm.g() + (static_cast<std::int64_t>(y1) * w + x1) * c;
          for (int ci = 0; ci < c; ++ci) {
            g00[ci] += (1 - bwt) * (1 - a) * g[ci];
            g01[ci] += (1 - bwt) * a * g[ci];
            g10[ci] += bwt * (1 - a) * g[ci];
            g11[ci] += bwt * a * g[ci];
          }
        }
        if (pp.requires_grad && (*live)[static_cast<size_t>(i)]) {
          const double* p00 = pm.v() + (static_cast<std::int64_t>(y0) * w + x0) * c;
          const double* p01 = pm.v() + (static_cast<std::int64_t>(y0) * w + x1) * c;
          const double* p10 = pm.v() + (static_cast<std::int64_t>(y1) * w + x0) * c;
          const double* p11 = pm.v() + (static_cast<std::int64_t>(y1) * w + x1) * c;
          double du = 0.0, dv = 0.0;
          for (int ci = 0; ci < c; ++ci) {
            du += g[ci] * ((1 - bwt) * (p01[ci] - p00[ci]) + bwt * (p11[ci] - p10[ci]));
            dv += g[ci] * ((1 - a) * (p10[ci] - p00[ci]) + a * (p11[ci] - p01[ci]));
          }
          pp.g()[i * 2 + 0] += du;
          pp.g()[i * 2 + 1] += dv;
        }
      }
    };
  }
  return out;
}

Var l2_normalize_rows(const Var& a, double eps) {
  check_2d(a, "l2_normalize_rows");
  const int r = a->shape[0], c = a->shape[1];
  Var out = make_node(a->shape, {a});
  auto norms = std::make_shared<std::vector<double>>(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    double s = eps;
    for (int j = 0; j < c; ++j) s += a->v()[i * c + j] * a->v()[i * c + j];
    const double nrm = std::sqrt(s);
    (*norms)[static_cast<size_t>(i)] = nrm;
    for (int j = 0; j < c; ++j) out->v()[i * c + j] = a->v()[i * c + j] / nrm;
  }
  if (out->requires_grad) {
    out->backward = [norms, r, c](Node& self) {
      Node& p = *self.parents[0];
      for (int i = 0; i < r; ++i) {
        const double nrm = (*norms)[static_cast<size_t>(i)];
        double dot = 0.0;
        for (int j = 0; j < c; ++j) dot += self.g()[i * c + j] * p.v()[i * c + j];
        const double inv = 1.0 / nrm, inv3 = inv * inv * inv;
        for (int j = 0; j < c; ++j)
          p.g()[i * c + j] += self.g()[i * c + j] * inv - dot * p.v()[i * c + j] * inv3;
      }
    };
  }
  return out;
}

Var gradient_reversal(const Var& a, double scale) {
  Var out = make_node(a->shape, {a});
  std::memcpy(out->v(), a->v(), sizeof(double) * static_cast<size_t>(a->numel()));
  if (out->requires_grad) {
    out->backward = [scale](Node& self) {
      Node& p = *self.parents[0];
      const std::int64_t n = self.numel();
      for (std::int64_t i = 0; i < n; ++i) p.g()[i] -= scale * self.g()[i];
    };
  }
  return out;
}

Var detach(const Var& a) {
  auto n = std::make_shared<Node>();
  n->shape = a->shape;
  n->val = a->val;
  return n;
}

void tune_allocator() {
#if defined(__GLIBC__)
  constexpr int kThreshold = 512 * 1024 * 1024;
  mallopt(M_MMAP_THRESHOLD, kThreshold);
  mallopt(M_TRIM_THRESHOLD, kThreshold);
#endif
}

}  // namespace rada::ad
