#include "l3dmc/tensor.hpp"

#include <algorithm>
#include <initializer_list>
#include <limits>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace l3dmc {

namespace detail {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

namespace {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void ensure_finite(const std::vector<double>& data, const char* op) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
}

NodePtr make_node(Shape shape, std::vector<double> data) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  return node;
}

// Central op constructor. `parents` lists the tracked inputs in the order the
// backward closure expects its accumulation buffers.
Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   std::vector<NodePtr> parents, BackwardFn backward) {
  ensure_finite(data, op);
  auto node = make_node(std::move(shape), std::move(data));
  if (g_grad_enabled && !parents.empty()) {
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor::wrap(std::move(node));
}

Tensor make_plain(Shape shape, std::vector<double> data, const char* op) {
  ensure_finite(data, op);
  return Tensor::wrap(make_node(std::move(shape), std::move(data)));
}

// Collects the tracked operands among `candidates`, preserving order, and
// reports per-candidate tracking flags so closures can map buffers back.
struct TrackedSet {
  std::vector<NodePtr> parents;
  std::vector<bool> flags;
};

TrackedSet tracked_of(std::initializer_list<const Tensor*> candidates) {
  TrackedSet out;
  for (const Tensor* t : candidates) {
    bool tr = g_grad_enabled && t->tracked();
    out.flags.push_back(tr);
    if (tr) out.parents.push_back(t->node());
  }
  return out;
}

void check_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  check_defined(a, op);
  check_defined(b, op);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

void check_matrix(const Tensor& t, const char* op) {
  check_defined(t, op);
  if (t.ndim() != 2) throw ShapeError(std::string(op) + ": expected rank-2 tensor");
}

void check_vector(const Tensor& t, const char* op) {
  check_defined(t, op);
  if (t.ndim() != 1) throw ShapeError(std::string(op) + ": expected rank-1 tensor");
}

void check_rank0(const Tensor& t, const char* op) {
  check_defined(t, op);
  if (t.size() != 1) throw ShapeError(std::string(op) + ": expected a scalar");
}

}  // namespace

}  // namespace detail

using detail::check_defined;
using detail::check_matrix;
using detail::check_rank0;
using detail::check_same_shape;
using detail::check_vector;
using detail::make_plain;
using detail::make_result;
using detail::shape_size;
using detail::tracked_of;
using detail::NodePtr;

NoGradScope::NoGradScope() : previous_(detail::g_grad_enabled) {
  detail::g_grad_enabled = false;
}

NoGradScope::~NoGradScope() { detail::g_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// Tensor basics
// ---------------------------------------------------------------------------

Tensor Tensor::scalar(double value) { return from_data({}, {value}); }

Tensor Tensor::zeros(Shape shape) {
  std::size_t n = shape_size(shape);
  return from_data(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  std::size_t n = shape_size(shape);
  return from_data(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::identity(std::size_t n) {
  std::vector<double> data(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) data[i * n + i] = 1.0;
  return from_data({n, n}, std::move(data));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  if (shape_size(shape) != data.size()) {
    throw ShapeError("from_data: shape does not match data length");
  }
  return make_plain(std::move(shape), std::move(data), "from_data");
}

Tensor Tensor::param(Shape shape, std::vector<double> data) {
  Tensor t = from_data(std::move(shape), std::move(data));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const {
  if (!node_) throw ShapeError("shape(): undefined tensor");
  return node_->shape;
}

std::size_t Tensor::size() const {
  if (!node_) return 0;
  return node_->data.size();
}

std::size_t Tensor::rows() const {
  if (ndim() != 2) throw ShapeError("rows(): not a matrix");
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (ndim() != 2) throw ShapeError("cols(): not a matrix");
  return shape()[1];
}

const std::vector<double>& Tensor::data() const {
  if (!node_) throw ShapeError("data(): undefined tensor");
  return node_->data;
}

double Tensor::item() const {
  if (!node_ || node_->data.size() != 1) {
    throw ShapeError("item(): tensor is not a scalar");
  }
  return node_->data[0];
}

double Tensor::at(std::size_t i) const {
  if (i >= size()) throw ShapeError("at(i): index out of range");
  return node_->data[i];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  if (ndim() != 2 || i >= shape()[0] || j >= shape()[1]) {
    throw ShapeError("at(i,j): index out of range");
  }
  return node_->data[i * shape()[1] + j];
}

const std::vector<double>& Tensor::grad() const {
  if (!node_ || node_->grad.empty()) {
    throw NumericError("grad(): no gradient has been accumulated");
  }
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const {
  check_defined(*this, "detach");
  return from_data(node_->shape, node_->data);
}

Tensor Tensor::row_copy(std::size_t i) const {
  check_matrix(*this, "row_copy");
  std::size_t n = cols();
  if (i >= rows()) throw ShapeError("row_copy: row index out of range");
  std::vector<double> out(node_->data.begin() + i * n,
                          node_->data.begin() + (i + 1) * n);
  return from_data({n}, std::move(out));
}

std::vector<double>& Tensor::mutable_data() {
  check_defined(*this, "mutable_data");
  if (!node_->is_leaf()) {
    throw NumericError("mutable_data(): only leaf tensors may be mutated in place");
  }
  return node_->data;
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace {

using UnaryFn = double (*)(double);

Tensor elementwise_binary(const Tensor& a, const Tensor& b, const char* op,
                          double (*fwd)(double, double),
                          void (*bwd)(double x, double y, double og, double* gx,
                                      double* gy)) {
  check_same_shape(a, b, op);
  const auto& ad = a.data();
  const auto& bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = fwd(ad[i], bd[i]);
  auto tracked = tracked_of({&a, &b});
  if (tracked.parents.empty()) return make_plain(a.shape(), std::move(out), op);
  auto an = a.node();
  auto bn = b.node();
  bool ta = tracked.flags[0], tb = tracked.flags[1];
  return make_result(
      a.shape(), std::move(out), op, std::move(tracked.parents),
      [an, bn, ta, tb, bwd](const std::vector<double>& og,
                            const std::vector<std::vector<double>*>& pg) {
        std::size_t k = 0;
        std::vector<double>* ga = ta ? pg[k++] : nullptr;
        std::vector<double>* gb = tb ? pg[k++] : nullptr;
        for (std::size_t i = 0; i < og.size(); ++i) {
          double gx = 0.0, gy = 0.0;
          bwd(an->data[i], bn->data[i], og[i], &gx, &gy);
          if (ga) (*ga)[i] += gx;
          if (gb) (*gb)[i] += gy;
        }
      });
}

Tensor elementwise_unary(const Tensor& a, const char* op, double (*fwd)(double),
                         double (*dfdx)(double x, double y)) {
  check_defined(a, op);
  const auto& ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = fwd(ad[i]);
  auto tracked = tracked_of({&a});
  if (tracked.parents.empty()) return make_plain(a.shape(), std::move(out), op);
  auto an = a.node();
  // Capture outputs for derivatives expressed in terms of y.
  std::vector<double> saved = out;
  return make_result(
      a.shape(), std::move(out), op, std::move(tracked.parents),
      [an, saved = std::move(saved), dfdx](const std::vector<double>& og,
                                           const std::vector<std::vector<double>*>& pg) {
        for (std::size_t i = 0; i < og.size(); ++i) {
          (*pg[0])[i] += og[i] * dfdx(an->data[i], saved[i]);
        }
      });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double og, double* gx, double* gy) {
        *gx = og;
        *gy = og;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double og, double* gx, double* gy) {
        *gx = og;
        *gy = -og;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double og, double* gx, double* gy) {
        *gx = og * y;
        *gy = og * x;
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double x, double y, double og, double* gx, double* gy) {
        *gx = og / y;
        *gy = -og * x / (y * y);
      });
}

Tensor neg(const Tensor& a) {
  return elementwise_unary(
      a, "neg", [](double x) { return -x; },
      [](double, double) { return -1.0; });
}

Tensor add_scalar(const Tensor& a, double s) {
  check_defined(a, "add_scalar");
  std::vector<double> out(a.data());
  for (double& v : out) v += s;
  auto tracked = tracked_of({&a});
  if (tracked.parents.empty()) return make_plain(a.shape(), std::move(out), "add_scalar");
  return make_result(a.shape(), std::move(out), "add_scalar",
                     std::move(tracked.parents),
                     [](const std::vector<double>& og,
                        const std::vector<std::vector<double>*>& pg) {
                       for (std::size_t i = 0; i < og.size(); ++i) (*pg[0])[i] += og[i];
                     });
}

Tensor scale(const Tensor& a, double s) {
  check_defined(a, "scale");
  std::vector<double> out(a.data());
  for (double& v : out) v *= s;
  auto tracked = tracked_of({&a});
  if (tracked.parents.empty()) return make_plain(a.shape(), std::move(out), "scale");
  return make_result(a.shape(), std::move(out), "scale", std::move(tracked.parents),
                     [s](const std::vector<double>& og,
                         const std::vector<std::vector<double>*>& pg) {
                       for (std::size_t i = 0; i < og.size(); ++i)
                         (*pg[0])[i] += og[i] * s;
                     });
}

Tensor exp(const Tensor& a) {
  return elementwise_unary(
      a, "exp", [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return elementwise_unary(
      a, "log", [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor tanh(const Tensor& a) {
  return elementwise_unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor atanh(const Tensor& a) {
  return elementwise_unary(
      a, "atanh", [](double x) { return std::atanh(x); },
      [](double x, double) { return 1.0 / (1.0 - x * x); });
}

Tensor sqrt(const Tensor& a) {
  return elementwise_unary(
      a, "sqrt", [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Tensor relu(const Tensor& a) {
  return elementwise_unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

namespace {

Tensor clamp_impl(const Tensor& a, double lo, double hi, const char* op) {
  check_defined(a, op);
  const auto& ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = std::min(std::max(ad[i], lo), hi);
  auto tracked = tracked_of({&a});
  if (tracked.parents.empty()) return make_plain(a.shape(), std::move(out), op);
  auto an = a.node();
  return make_result(a.shape(), std::move(out), op, std::move(tracked.parents),
                     [an, lo, hi](const std::vector<double>& og,
                                  const std::vector<std::vector<double>*>& pg) {
                       for (std::size_t i = 0; i < og.size(); ++i) {
                         double x = an->data[i];
                         if (x >= lo && x <= hi) (*pg[0])[i] += og[i];
                       }
                     });
}

}  // namespace

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw ShapeError("clamp: lo > hi");
  return clamp_impl(a, lo, hi, "clamp");
}

Tensor clamp_min(const Tensor& a, double lo) {
  return clamp_impl(a, lo, std::numeric_limits<double>::infinity(), "clamp_min");
}

Tensor clamp_max(const Tensor& a, double hi) {
  return clamp_impl(a, -std::numeric_limits<double>::infinity(), hi, "clamp_max");
}

// ---------------------------------------------------------------------------
// Reductions and vector ops
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  check_defined(a, "sum");
  double s = 0.0;
  for (double v : a.data()) s += v;
  auto tracked = tracked_of({&a});
  if (tracked.parents.empty()) return make_plain({}, {s}, "sum");
  return make_result({}, {s}, "sum", std::move(tracked.parents),
                     [](const std::vector<double>& og,
                        const std::vector<std::vector<double>*>& pg) {
                       for (double& g : *pg[0]) g += og[0];
                     });
}

Tensor mean(const Tensor& a) {
  check_defined(a, "mean");
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (double v : a.data()) s += v;
  double m = s / static_cast<double>(a.size());
  auto tracked = tracked_of({&a});
  if (tracked.parents.empty()) return make_plain({}, {m}, "mean");
  double inv = 1.0 / static_cast<double>(a.size());
  return make_result({}, {m}, "mean", std::move(tracked.parents),
                     [inv](const std::vector<double>& og,
                           const std::vector<std::vector<double>*>& pg) {
                       for (double& g : *pg[0]) g += og[0] * inv;
                     });
}

Tensor norm(const Tensor& a) {
  check_defined(a, "norm");
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  double r = std::sqrt(s);
  auto tracked = tracked_of({&a});
  if (tracked.parents.empty()) return make_plain({}, {r}, "norm");
  auto an = a.node();
  return make_result({}, {r}, "norm", std::move(tracked.parents),
                     [an, r](const std::vector<double>& og,
                             const std::vector<std::vector<double>*>& pg) {
                       double denom = std::max(r, 1e-15);
                       for (std::size_t i = 0; i < an->data.size(); ++i) {
                         (*pg[0])[i] += og[0] * an->data[i] / denom;
                       }
                     });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  check_vector(a, "dot");
  check_vector(b, "dot");
  check_same_shape(a, b, "dot");
  double s = 0.0;
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) s += ad[i] * bd[i];
  auto tracked = tracked_of({&a, &b});
  if (tracked.parents.empty()) return make_plain({}, {s}, "dot");
  auto an = a.node();
  auto bn = b.node();
  bool ta = tracked.flags[0], tb = tracked.flags[1];
  return make_result({}, {s}, "dot", std::move(tracked.parents),
                     [an, bn, ta, tb](const std::vector<double>& og,
                                      const std::vector<std::vector<double>*>& pg) {
                       std::size_t k = 0;
                       if (ta) {
                         auto* ga = pg[k++];
                         for (std::size_t i = 0; i < an->data.size(); ++i)
                           (*ga)[i] += og[0] * bn->data[i];
                       }
                       if (tb) {
                         auto* gb = pg[k++];
                         for (std::size_t i = 0; i < bn->data.size(); ++i)
                           (*gb)[i] += og[0] * an->data[i];
                       }
                     });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  check_defined(a, "scale_by");
  check_rank0(s, "scale_by");
  double sv = s.data()[0];
  std::vector<double> out(a.data());
  for (double& v : out) v *= sv;
  auto tracked = tracked_of({&a, &s});
  if (tracked.parents.empty()) return make_plain(a.shape(), std::move(out), "scale_by");
  auto an = a.node();
  bool ta = tracked.flags[0], ts = tracked.flags[1];
  return make_result(a.shape(), std::move(out), "scale_by", std::move(tracked.parents),
                     [an, sv, ta, ts](const std::vector<double>& og,
                                      const std::vector<std::vector<double>*>& pg) {
                       std::size_t k = 0;
                       if (ta) {
                         auto* ga = pg[k++];
                         for (std::size_t i = 0; i < og.size(); ++i)
                           (*ga)[i] += og[i] * sv;
                       }
                       if (ts) {
                         auto* gs = pg[k++];
                         double acc = 0.0;
                         for (std::size_t i = 0; i < og.size(); ++i)
                           acc += og[i] * an->data[i];
                         (*gs)[0] += acc;
                       }
                     });
}

Tensor div_by(const Tensor& a, const Tensor& s) {
  check_defined(a, "div_by");
  check_rank0(s, "div_by");
  double sv = s.data()[0];
  std::vector<double> out(a.data());
  for (double& v : out) v /= sv;
  auto tracked = tracked_of({&a, &s});
  if (tracked.parents.empty()) return make_plain(a.shape(), std::move(out), "div_by");
  auto an = a.node();
  bool ta = tracked.flags[0], ts = tracked.flags[1];
  return make_result(a.shape(), std::move(out), "div_by", std::move(tracked.parents),
                     [an, sv, ta, ts](const std::vector<double>& og,
                                      const std::vector<std::vector<double>*>& pg) {
                       std::size_t k = 0;
                       if (ta) {
                         auto* ga = pg[k++];
                         for (std::size_t i = 0; i < og.size(); ++i)
                           (*ga)[i] += og[i] / sv;
                       }
                       if (ts) {
                         auto* gs = pg[k++];
                         double acc = 0.0;
                         for (std::size_t i = 0; i < og.size(); ++i)
                           acc += og[i] * an->data[i];
                         (*gs)[0] += -acc / (sv * sv);
                       }
                     });
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_matrix(a, "matmul");
  check_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions disagree (" + std::to_string(k) +
                     " vs " + std::to_string(b.rows()) + ")");
  }
  const auto& ad = a.data();
  const auto& bd = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = ad[i * k + kk];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * bd[kk * n + j];
    }
  }
  auto tracked = tracked_of({&a, &b});
  if (tracked.parents.empty()) return make_plain({m, n}, std::move(out), "matmul");
  auto an = a.node();
  auto bn = b.node();
  bool ta = tracked.flags[0], tb = tracked.flags[1];
  return make_result(
      {m, n}, std::move(out), "matmul", std::move(tracked.parents),
      [an, bn, m, k, n, ta, tb](const std::vector<double>& og,
                                const std::vector<std::vector<double>*>& pg) {
        std::size_t idx = 0;
        if (ta) {  // dA = og * B^T
          auto* ga = pg[idx++];
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              const double g = og[i * n + j];
              for (std::size_t kk = 0; kk < k; ++kk)
                (*ga)[i * k + kk] += g * bn->data[kk * n + j];
            }
        }
        if (tb) {  // dB = A^T * og
          auto* gb = pg[idx++];
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t kk = 0; kk < k; ++kk) {
              const double av = an->data[i * k + kk];
              for (std::size_t j = 0; j < n; ++j)
                (*gb)[kk * n + j] += av * og[i * n + j];
            }
        }
      });
}

Tensor transpose(const Tensor& a) {
  check_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  const auto& ad = a.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = ad[i * n + j];
  auto tracked = tracked_of({&a});
  if (tracked.parents.empty()) return make_plain({n, m}, std::move(out), "transpose");
  return make_result({n, m}, std::move(out), "transpose", std::move(tracked.parents),
                     [m, n](const std::vector<double>& og,
                            const std::vector<std::vector<double>*>& pg) {
                       for (std::size_t j = 0; j < n; ++j)
                         for (std::size_t i = 0; i < m; ++i)
                           (*pg[0])[i * n + j] += og[j * m + i];
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  check_defined(a, "reshape");
  if (shape_size(shape) != a.size()) throw ShapeError("reshape: size mismatch");
  auto tracked = tracked_of({&a});
  if (tracked.parents.empty()) return make_plain(std::move(shape), a.data(), "reshape");
  return make_result(std::move(shape), a.data(), "reshape", std::move(tracked.parents),
                     [](const std::vector<double>& og,
                        const std::vector<std::vector<double>*>& pg) {
                       for (std::size_t i = 0; i < og.size(); ++i) (*pg[0])[i] += og[i];
                     });
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  check_matrix(x, "add_rowvec");
  check_vector(v, "add_rowvec");
  const std::size_t b = x.rows(), n = x.cols();
  if (v.size() != n) throw ShapeError("add_rowvec: width mismatch");
  const auto& xd = x.data();
  const auto& vd = v.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xd[i * n + j] + vd[j];
  auto tracked = tracked_of({&x, &v});
  if (tracked.parents.empty()) return make_plain({b, n}, std::move(out), "add_rowvec");
  bool tx = tracked.flags[0], tv = tracked.flags[1];
  return make_result({b, n}, std::move(out), "add_rowvec", std::move(tracked.parents),
                     [b, n, tx, tv](const std::vector<double>& og,
                                    const std::vector<std::vector<double>*>& pg) {
                       std::size_t k = 0;
                       if (tx) {
                         auto* gx = pg[k++];
                         for (std::size_t i = 0; i < og.size(); ++i) (*gx)[i] += og[i];
                       }
                       if (tv) {
                         auto* gv = pg[k++];
                         for (std::size_t i = 0; i < b; ++i)
                           for (std::size_t j = 0; j < n; ++j)
                             (*gv)[j] += og[i * n + j];
                       }
                     });
}

Tensor rows_scale(const Tensor& x, const Tensor& s) {
  check_matrix(x, "rows_scale");
  check_vector(s, "rows_scale");
  const std::size_t b = x.rows(), n = x.cols();
  if (s.size() != b) throw ShapeError("rows_scale: row count mismatch");
  const auto& xd = x.data();
  const auto& sd = s.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xd[i * n + j] * sd[i];
  auto tracked = tracked_of({&x, &s});
  if (tracked.parents.empty()) return make_plain({b, n}, std::move(out), "rows_scale");
  auto xn = x.node();
  auto sn = s.node();
  bool tx = tracked.flags[0], ts = tracked.flags[1];
  return make_result({b, n}, std::move(out), "rows_scale", std::move(tracked.parents),
                     [xn, sn, b, n, tx, ts](const std::vector<double>& og,
                                            const std::vector<std::vector<double>*>& pg) {
                       std::size_t k = 0;
                       if (tx) {
                         auto* gx = pg[k++];
                         for (std::size_t i = 0; i < b; ++i)
                           for (std::size_t j = 0; j < n; ++j)
                             (*gx)[i * n + j] += og[i * n + j] * sn->data[i];
                       }
                       if (ts) {
                         auto* gs = pg[k++];
                         for (std::size_t i = 0; i < b; ++i) {
                           double acc = 0.0;
                           for (std::size_t j = 0; j < n; ++j)
                             acc += og[i * n + j] * xn->data[i * n + j];
                           (*gs)[i] += acc;
                         }
                       }
                     });
}

Tensor row_norms(const Tensor& x) {
  check_matrix(x, "row_norms");
  const std::size_t b = x.rows(), n = x.cols();
  const auto& xd = x.data();
  std::vector<double> out(b, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double v = xd[i * n + j];
      s += v * v;
    }
    out[i] = std::sqrt(s);
  }
  auto tracked = tracked_of({&x});
  if (tracked.parents.empty()) return make_plain({b}, std::move(out), "row_norms");
  auto xn = x.node();
  std::vector<double> saved = out;
  return make_result({b}, std::move(out), "row_norms", std::move(tracked.parents),
                     [xn, saved = std::move(saved), b, n](
                         const std::vector<double>& og,
                         const std::vector<std::vector<double>*>& pg) {
                       for (std::size_t i = 0; i < b; ++i) {
                         double denom = std::max(saved[i], 1e-15);
                         for (std::size_t j = 0; j < n; ++j)
                           (*pg[0])[i * n + j] += og[i] * xn->data[i * n + j] / denom;
                       }
                     });
}

Tensor rowdot(const Tensor& a, const Tensor& b) {
  check_matrix(a, "rowdot");
  check_matrix(b, "rowdot");
  check_same_shape(a, b, "rowdot");
  const std::size_t m = a.rows(), n = a.cols();
  const auto& ad = a.data();
  const auto& bd = b.data();
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += ad[i * n + j] * bd[i * n + j];
    out[i] = s;
  }
  auto tracked = tracked_of({&a, &b});
  if (tracked.parents.empty()) return make_plain({m}, std::move(out), "rowdot");
  auto an = a.node();
  auto bn = b.node();
  bool ta = tracked.flags[0], tb = tracked.flags[1];
  return make_result({m}, std::move(out), "rowdot", std::move(tracked.parents),
                     [an, bn, m, n, ta, tb](const std::vector<double>& og,
                                            const std::vector<std::vector<double>*>& pg) {
                       std::size_t k = 0;
                       if (ta) {
                         auto* ga = pg[k++];
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j)
                             (*ga)[i * n + j] += og[i] * bn->data[i * n + j];
                       }
                       if (tb) {
                         auto* gb = pg[k++];
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j)
                             (*gb)[i * n + j] += og[i] * an->data[i * n + j];
                       }
                     });
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
  check_matrix(x, "gather_rows");
  const std::size_t b = x.rows(), c = x.cols();
  if (idx.size() != b) throw ShapeError("gather_rows: one index per row required");
  const auto& xd = x.data();
  std::vector<double> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    int j = idx[i];
    if (j < 0 || static_cast<std::size_t>(j) >= c) {
      throw ShapeError("gather_rows: index " + std::to_string(j) +
                       " out of range for width " + std::to_string(c));
    }
    out[i] = xd[i * c + static_cast<std::size_t>(j)];
  }
  auto tracked = tracked_of({&x});
  if (tracked.parents.empty()) return make_plain({b}, std::move(out), "gather_rows");
  return make_result({b}, std::move(out), "gather_rows", std::move(tracked.parents),
                     [idx, c](const std::vector<double>& og,
                              const std::vector<std::vector<double>*>& pg) {
                       for (std::size_t i = 0; i < og.size(); ++i)
                         (*pg[0])[i * c + static_cast<std::size_t>(idx[i])] += og[i];
                     });
}

Tensor logsumexp_rows(const Tensor& x) {
  check_matrix(x, "logsumexp_rows");
  const std::size_t b = x.rows(), c = x.cols();
  if (c == 0) throw ShapeError("logsumexp_rows: empty rows");
  const auto& xd = x.data();
  std::vector<double> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    double m = xd[i * c];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, xd[i * c + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(xd[i * c + j] - m);
    out[i] = m + std::log(s);
  }
  auto tracked = tracked_of({&x});
  if (tracked.parents.empty()) return make_plain({b}, std::move(out), "logsumexp_rows");
  auto xn = x.node();
  std::vector<double> saved = out;
  return make_result({b}, std::move(out), "logsumexp_rows", std::move(tracked.parents),
                     [xn, saved = std::move(saved), c](
                         const std::vector<double>& og,
                         const std::vector<std::vector<double>*>& pg) {
                       for (std::size_t i = 0; i < og.size(); ++i)
                         for (std::size_t j = 0; j < c; ++j)
                           (*pg[0])[i * c + j] +=
                               og[i] * std::exp(xn->data[i * c + j] - saved[i]);
                     });
}

Tensor pairwise_sqdist(const Tensor& a, const Tensor& b) {
  check_matrix(a, "pairwise_sqdist");
  check_matrix(b, "pairwise_sqdist");
  const std::size_t p = a.rows(), n = a.cols(), m = b.rows();
  if (b.cols() != n) throw ShapeError("pairwise_sqdist: feature width mismatch");
  const auto& ad = a.data();
  const auto& bd = b.data();
  std::vector<double> out(p * m, 0.0);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t kk = 0; kk < n; ++kk) {
        double d = ad[i * n + kk] - bd[j * n + kk];
        s += d * d;
      }
      out[i * m + j] = s;
    }
  auto tracked = tracked_of({&a, &b});
  if (tracked.parents.empty())
    return make_plain({p, m}, std::move(out), "pairwise_sqdist");
  auto an = a.node();
  auto bn = b.node();
  bool ta = tracked.flags[0], tb = tracked.flags[1];
  return make_result(
      {p, m}, std::move(out), "pairwise_sqdist", std::move(tracked.parents),
      [an, bn, p, n, m, ta, tb](const std::vector<double>& og,
                                const std::vector<std::vector<double>*>& pg) {
        std::size_t k = 0;
        std::vector<double>* ga = ta ? pg[k++] : nullptr;
        std::vector<double>* gb = tb ? pg[k++] : nullptr;
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t j = 0; j < m; ++j) {
            const double g = 2.0 * og[i * m + j];
            if (g == 0.0) continue;
            for (std::size_t kk = 0; kk < n; ++kk) {
              double d = an->data[i * n + kk] - bn->data[j * n + kk];
              if (ga) (*ga)[i * n + kk] += g * d;
              if (gb) (*gb)[j * n + kk] -= g * d;
            }
          }
      });
}

// ---------------------------------------------------------------------------
// SPD solve
// ---------------------------------------------------------------------------

namespace {
constexpr double kRidgeLadder[] = {0.0, 1e-10, 1e-8, 1e-6};
}

CholeskyFactor CholeskyFactor::factorize(const Tensor& k) {
  check_matrix(k, "spd_solve");
  const std::size_t n = k.rows();
  if (k.cols() != n) throw ShapeError("spd_solve: matrix must be square");
  const auto& kd = k.data();

  // Symmetrize before attempting to factor.
  std::vector<double> sym(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      sym[i * n + j] = 0.5 * (kd[i * n + j] + kd[j * n + i]);

  CholeskyFactor f;
  f.n_ = n;
  for (double ridge : kRidgeLadder) {
    std::vector<double> a = sym;
    for (std::size_t i = 0; i < n; ++i) a[i * n + i] += ridge;
    std::vector<double> lower(n * n, 0.0);
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        double s = a[i * n + j];
        for (std::size_t kk = 0; kk < j; ++kk)
          s -= lower[i * n + kk] * lower[j * n + kk];
        if (i == j) {
          if (!(s > 0.0) || !std::isfinite(s)) {
            ok = false;
            break;
          }
          lower[i * n + i] = std::sqrt(s);
        } else {
          lower[i * n + j] = s / lower[j * n + j];
        }
      }
    }
    if (ok) {
      f.lower_ = std::move(lower);
      f.report_.ridge_added = ridge;
      double dmin = f.lower_[0], dmax = f.lower_[0];
      for (std::size_t i = 1; i < n; ++i) {
        dmin = std::min(dmin, f.lower_[i * n + i]);
        dmax = std::max(dmax, f.lower_[i * n + i]);
      }
      double ratio = dmax / std::max(dmin, 1e-300);
      f.report_.condition_estimate = ratio * ratio;
      return f;
    }
  }
  throw NumericError("spd_solve: matrix is not positive definite at any ridge in "
                     "{0, 1e-10, 1e-8, 1e-6}");
}

void CholeskyFactor::solve_in_place(double* x) const {
  const std::size_t n = n_;
  // L y = b
  for (std::size_t i = 0; i < n; ++i) {
    double s = x[i];
    for (std::size_t j = 0; j < i; ++j) s -= lower_[i * n + j] * x[j];
    x[i] = s / lower_[i * n + i];
  }
  // L^T x = y
  for (std::size_t ii = n; ii-- > 0;) {
    double s = x[ii];
    for (std::size_t j = ii + 1; j < n; ++j) s -= lower_[j * n + ii] * x[j];
    x[ii] = s / lower_[ii * n + ii];
  }
}

std::vector<double> CholeskyFactor::solve_vec(const std::vector<double>& b) const {
  if (b.size() != n_) throw ShapeError("spd_solve: rhs length mismatch");
  std::vector<double> x = b;
  solve_in_place(x.data());
  return x;
}

Tensor CholeskyFactor::solve(const Tensor& b) const {
  check_defined(b, "spd_solve");
  const bool is_vec = b.ndim() == 1;
  if (!is_vec && b.ndim() != 2) throw ShapeError("spd_solve: rhs must be rank 1 or 2");
  const std::size_t rows = is_vec ? b.size() : b.rows();
  const std::size_t cols = is_vec ? 1 : b.cols();
  if (rows != n_) throw ShapeError("spd_solve: rhs row count mismatch");

  const auto& bd = b.data();
  std::vector<double> out(bd.size());
  std::vector<double> col(n_);
  for (std::size_t j = 0; j < cols; ++j) {
    for (std::size_t i = 0; i < n_; ++i) col[i] = bd[i * cols + j];
    solve_in_place(col.data());
    for (std::size_t i = 0; i < n_; ++i) out[i * cols + j] = col[i];
  }

  Shape shape = b.shape();
  auto tracked = tracked_of({&b});
  if (tracked.parents.empty())
    return make_plain(std::move(shape), std::move(out), "spd_solve");
  // d/dB of X = K^{-1} B is K^{-1} (K symmetric constant), so the cotangent is
  // solved through the same factorization.
  CholeskyFactor self = *this;
  std::size_t n = n_;
  return make_result(std::move(shape), std::move(out), "spd_solve",
                     std::move(tracked.parents),
                     [self = std::move(self), n, cols](
                         const std::vector<double>& og,
                         const std::vector<std::vector<double>*>& pg) {
                       std::vector<double> col(n);
                       for (std::size_t j = 0; j < cols; ++j) {
                         for (std::size_t i = 0; i < n; ++i) col[i] = og[i * cols + j];
                         self.solve_in_place(col.data());
                         for (std::size_t i = 0; i < n; ++i)
                           (*pg[0])[i * cols + j] += col[i];
                       }
                     });
}

std::pair<Tensor, SpdSolveReport> spd_solve(const Tensor& k, const Tensor& b) {
  CholeskyFactor f = CholeskyFactor::factorize(k);
  Tensor x = f.solve(b);
  return {std::move(x), f.report()};
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined()) throw NumericError("backward: undefined tensor");
  if (loss.size() != 1) throw NumericError("backward: loss must be a scalar");
  if (!loss.tracked()) throw NumericError("backward: loss is not tracked");

  detail::Node* root = loss.node().get();

  // Post-order DFS for a reverse topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  struct Frame {
    detail::Node* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    Frame& top = stack.back();
    if (top.next_parent < top.node->parents.size()) {
      detail::Node* p = top.node->parents[top.next_parent++].get();
      if (visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(top.node);
      stack.pop_back();
    }
  }

  std::unordered_map<detail::Node*, std::vector<double>> cotangent;
  cotangent[root] = {1.0};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    auto found = cotangent.find(node);
    if (found == cotangent.end()) continue;
    std::vector<double>& g = found->second;
    if (node->backward) {
      std::vector<std::vector<double>*> parent_bufs;
      parent_bufs.reserve(node->parents.size());
      for (const auto& parent : node->parents) {
        auto& buf = cotangent[parent.get()];
        if (buf.size() != parent->data.size()) buf.assign(parent->data.size(), 0.0);
        parent_bufs.push_back(&buf);
      }
      node->backward(g, parent_bufs);
    }
    if (node->requires_grad && node->is_leaf()) {
      if (node->grad.size() != node->data.size())
        node->grad.assign(node->data.size(), 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) node->grad[i] += g[i];
    }
  }
}

}  // namespace l3dmc
