#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

// Reverse-mode autodiff over dense double tensors. Graphs are built
// define-by-run: every op returns a new node holding its value and a
// closure that scatters the node's gradient into its parents. Values and
// gradients live in shared buffers so reshape-style views are free.
namespace rada::ad {

class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<int> dims) : dims_(dims) {}
  explicit Shape(std::vector<int> dims) : dims_(std::move(dims)) {}

  int ndim() const { return static_cast<int>(dims_.size()); }
  int operator[](int i) const { return dims_[static_cast<size_t>(i)]; }
  std::int64_t numel() const {
    std::int64_t n = 1;
    for (int d : dims_) n *= d;
    return n;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;

 private:
  std::vector<int> dims_;
};

struct Node;
using Var = std::shared_ptr<Node>;
using Buffer = std::shared_ptr<std::vector<double>>;

struct Node {
  Shape shape;
  Buffer val;
  Buffer grad;  // allocated (zeroed) iff requires_grad
  bool requires_grad = false;
  bool leaf = false;  // parameters / inputs: grads persist across backprops
  std::vector<Var> parents;
  std::function<void(Node&)> backward;

  double* v() { return val->data(); }
  const double* v() const { return val->data(); }
  double* g() { return grad->data(); }
  const double* g() const { return grad->data(); }
  std::int64_t numel() const { return shape.numel(); }
};

// When false, ops compute values only: no parents, no backward, no grad
// buffers. Used for inference and evaluation passes.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  bool saved_;
};
bool grad_enabled();

// Doubles allocated through the engine since the last reset. Test hook for
// asserting memory complexity.
std::int64_t allocated_doubles();
void reset_allocated_doubles();

// Keeps multi-megabyte tensor buffers on the main heap so freed blocks are
// reused instead of being unmapped and re-faulted on every graph. Call once
// at process start; a no-op where the allocator is not tunable.
void tune_allocator();

// ---- construction ----
Var constant(const Shape& shape, double fill = 0.0);
Var constant(const Shape& shape, std::vector<double> data);
Var leaf(const Shape& shape, std::vector<double> data);  // requires_grad leaf
Var scalar(double v);

void zero_grad(const Var& v);

// Runs the backward sweep from a scalar root. Interior gradients are fresh
// per call; leaf gradients accumulate until zero_grad.
void backprop(const Var& root);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
Var abs(const Var& a);
Var sin(const Var& a);
Var cos(const Var& a);
Var clamp(const Var& a, double lo, double hi);

// ---- reductions ----
Var sum(const Var& a);
Var mean(const Var& a);
Var sum_axis0(const Var& a);   // [R,C] -> [C]
Var sum_axis1(const Var& a);   // [R,C] -> [R]
Var mean_axis0(const Var& a);  // [R,C] -> [C]

// ---- softmax family (2-D) ----
Var softmax_axis0(const Var& a);     // per column, over rows
Var softmax_axis1(const Var& a);     // per row, over columns
Var logsoftmax_axis1(const Var& a);  // per row, stable

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);     // [m,k]x[k,n]
Var matmul_bt(const Var& a, const Var& b);  // [m,k]x[n,k]^T -> [m,n]
Var add_rowvec(const Var& a, const Var& v);
Var mul_rowvec(const Var& a, const Var& v);
Var mul_colvec(const Var& a, const Var& v);

// ---- shape ----
Var reshape(const Var& a, const Shape& shape);  // aliasing view
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& a, int c0, int c1);
Var gather_rows(const Var& a, std::vector<int> rows);
// out[k] = a[rows[k], cols[k]]
Var gather_elements(const Var& a, std::vector<int> rows, std::vector<int> cols);

// ---- structured ops ----
// x: (H,W,C); w: (kh,kw,Cin,Cout); zero padding keeps the spatial size.
Var conv2d(const Var& x, const Var& w, const Var& b);
// kernel k, stride k; H and W must be divisible by k.
Var maxpool2d(const Var& x, int k);
Var upsample_bilinear(const Var& x, int out_h, int out_w);
// map: (H,W,C); pts: (N,2) as (u,v) with pixel centers at integers.
// Differentiable in both the map and the points; coordinates are clamped to
// the valid square, so callers keep points in bounds.
Var grid_sample(const Var& map, const Var& pts);
Var l2_normalize_rows(const Var& a, double eps = 1e-12);
// Identity forward; backward multiplies the incoming gradient by -scale.
Var gradient_reversal(const Var& a, double scale);
Var detach(const Var& a);

// operator sugar
inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(const Var& a, double s) { return mul_scalar(a, s); }
inline Var operator*(double s, const Var& a) { return mul_scalar(a, s); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }
inline Var operator-(const Var& a, double s) { return add_scalar(a, -s); }

}  // namespace rada::ad
