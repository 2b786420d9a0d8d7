#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace l3dmc {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Backward op: receives the output cotangent and one pre-zeroed accumulation
// buffer per tracked parent (aligned with Node::parents).
using BackwardFn = std::function<void(const std::vector<double>& out_grad,
                                      const std::vector<std::vector<double>*>& parent_grads)>;

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // persistent accumulator, leaves only
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  BackwardFn backward;

  bool tracked() const { return requires_grad || !parents.empty(); }
  bool is_leaf() const { return parents.empty(); }
};

bool grad_enabled();

}  // namespace detail

// Disables graph construction for the current thread while alive. Evaluation
// paths (NCM templates, herding, validation accuracy) run under one of these.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  bool previous_;
};

// Dense real tensor of rank 0..2 with reverse-mode differentiation. Handles
// are cheap to copy and share the underlying node; detach() deep-copies the
// values into a fresh untracked tensor. All math is double precision and every
// operation rejects non-finite results with NumericError.
class Tensor {
 public:
  Tensor() = default;

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
  static Tensor identity(std::size_t n);
  static Tensor from_data(Shape shape, std::vector<double> data);
  // Leaf with requires_grad set; gradients accumulate across backward calls.
  static Tensor param(Shape shape, std::vector<double> data);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t size() const;
  std::size_t rows() const;
  std::size_t cols() const;

  const std::vector<double>& data() const;
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;

  bool tracked() const { return node_ && node_->tracked(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return node_ && node_->is_leaf(); }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad();

  // Deep value copy without history.
  Tensor detach() const;
  // Untracked copy of row i of a rank-2 tensor.
  Tensor row_copy(std::size_t i) const;

  // In-place access for optimizers; leaves only.
  std::vector<double>& mutable_data();

  detail::NodePtr node() const { return node_; }
  static Tensor wrap(detail::NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  detail::NodePtr node_;
};

// ---------------------------------------------------------------------------
// Elementwise and scalar ops
// ---------------------------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double s);
Tensor scale(const Tensor& a, double s);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor atanh(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor clamp_min(const Tensor& a, double lo);
Tensor clamp_max(const Tensor& a, double hi);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }

// ---------------------------------------------------------------------------
// Reductions and vector ops
// ---------------------------------------------------------------------------
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor norm(const Tensor& a);                     // Frobenius, rank-0 result
Tensor dot(const Tensor& a, const Tensor& b);     // rank-1 x rank-1 -> rank-0

// Multiply / divide by a rank-0 tracked scalar (gradient flows to both sides).
Tensor scale_by(const Tensor& a, const Tensor& s);
Tensor div_by(const Tensor& a, const Tensor& s);

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor add_rowvec(const Tensor& x, const Tensor& v);   // [B,n] + [n]
Tensor rows_scale(const Tensor& x, const Tensor& s);   // [B,n] * [B] per row
Tensor row_norms(const Tensor& x);                     // [B,n] -> [B]
Tensor rowdot(const Tensor& a, const Tensor& b);       // [B,n],[B,n] -> [B]
Tensor gather_rows(const Tensor& x, const std::vector<int>& idx);  // [B,C] -> [B]
Tensor logsumexp_rows(const Tensor& x);                // [B,C] -> [B]
Tensor pairwise_sqdist(const Tensor& a, const Tensor& b);  // [p,n],[m,n] -> [p,m]

// ---------------------------------------------------------------------------
// Symmetric positive-definite solve
// ---------------------------------------------------------------------------
struct SpdSolveReport {
  double ridge_added = 0.0;
  double condition_estimate = 1.0;
};

// Cholesky factor of (K + K^T)/2 + ridge*I, where ridge escalates through
// {0, 1e-10, 1e-8, 1e-6} until the factorization succeeds. The factor treats
// the matrix as a constant: solve() propagates gradients to the right-hand
// side only (the matrix side is detached by contract).
class CholeskyFactor {
 public:
  static CholeskyFactor factorize(const Tensor& k);

  std::size_t dim() const { return n_; }
  const SpdSolveReport& report() const { return report_; }

  // Solves (K + ridge*I) X = B for B of shape [n,p] or [n].
  Tensor solve(const Tensor& b) const;
  // Raw column solve for plain (non-differentiated) callers.
  std::vector<double> solve_vec(const std::vector<double>& b) const;

 private:
  std::vector<double> lower_;  // row-major lower-triangular factor
  std::size_t n_ = 0;
  SpdSolveReport report_;

  void solve_in_place(double* x) const;
};

std::pair<Tensor, SpdSolveReport> spd_solve(const Tensor& k, const Tensor& b);

// ---------------------------------------------------------------------------
// Reverse-mode differentiation entry point
// ---------------------------------------------------------------------------
// Populates grad on every tracked leaf reachable from `loss`. Repeated calls
// accumulate until zero_grad() is called on the leaves.
void backward(const Tensor& loss);

}  // namespace l3dmc
