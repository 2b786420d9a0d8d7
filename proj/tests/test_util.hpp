#pragma once

// Test-only oracles. Everything here is written straight from the defining
// formulas and stays independent of the library's computation paths.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "l3dmc/rng.hpp"
#include "l3dmc/tensor.hpp"

namespace testutil {

inline std::vector<double> random_values(l3dmc::Rng& rng, std::size_t n,
                                         double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline l3dmc::Tensor random_tensor(l3dmc::Rng& rng, l3dmc::Shape shape,
                                   double lo = -1.0, double hi = 1.0) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return l3dmc::Tensor::from_data(std::move(shape), random_values(rng, n, lo, hi));
}

inline l3dmc::Tensor random_param(l3dmc::Rng& rng, l3dmc::Shape shape,
                                  double lo = -1.0, double hi = 1.0) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return l3dmc::Tensor::param(std::move(shape), random_values(rng, n, lo, hi));
}

// Independent triple-loop matrix product.
inline std::vector<double> matmul_oracle(const std::vector<double>& a,
                                         const std::vector<double>& b,
                                         std::size_t m, std::size_t k,
                                         std::size_t n) {
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) s += a[i * k + kk] * b[kk * n + j];
      out[i * n + j] = s;
    }
  return out;
}

// Central finite differences against reverse-mode gradients.
//
// `loss_fn` must rebuild the loss from the current contents of `leaves`.
// Returns the worst violation of |fd - an| <= max(abs_tol, rel_tol*scale).
struct GradCheck {
  double worst_abs = 0.0;
  double worst_rel = 0.0;
  bool ok = true;
};

inline GradCheck check_gradients(const std::function<l3dmc::Tensor()>& loss_fn,
                                 std::vector<l3dmc::Tensor> leaves,
                                 double h = 1e-4, double rel_tol = 1e-3,
                                 double abs_tol = 1e-6) {
  GradCheck result;
  for (auto& leaf : leaves) leaf.zero_grad();
  l3dmc::Tensor loss = loss_fn();
  l3dmc::backward(loss);

  for (auto& leaf : leaves) {
    std::vector<double> analytic(leaf.size(), 0.0);
    if (leaf.has_grad()) analytic = leaf.grad();
    auto& data = leaf.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double fp = loss_fn().item();
      data[i] = saved - h;
      const double fm = loss_fn().item();
      data[i] = saved;
      const double fd = (fp - fm) / (2.0 * h);
      const double err = std::abs(fd - analytic[i]);
      const double scale = std::max(std::abs(fd), std::abs(analytic[i]));
      result.worst_abs = std::max(result.worst_abs, err);
      if (scale > 0.0) result.worst_rel = std::max(result.worst_rel, err / scale);
      if (err > std::max(abs_tol, rel_tol * scale)) result.ok = false;
    }
  }
  return result;
}

// Eigenvalues of a symmetric matrix by the cyclic Jacobi method.
inline std::vector<double> symmetric_eigenvalues(std::vector<double> a,
                                                 std::size_t n,
                                                 std::size_t sweeps = 64) {
  for (std::size_t sweep = 0; sweep < sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a[i * n + j] * a[i * n + j];
    if (off < 1e-26) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-18) continue;
        const double app = a[p * n + p];
        const double aqq = a[q * n + q];
        const double theta = 0.5 * std::atan2(2.0 * apq, aqq - app);
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p];
          const double akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k];
          const double aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a[i * n + i];
  return eig;
}

// Scalar transcription of the Mobius addition formula.
inline std::vector<double> mobius_add_oracle(const std::vector<double>& x,
                                             const std::vector<double>& y,
                                             double c) {
  double xy = 0.0, xx = 0.0, yy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xy += x[i] * y[i];
    xx += x[i] * x[i];
    yy += y[i] * y[i];
  }
  const double coef_x = 1.0 + 2.0 * c * xy + c * yy;
  const double coef_y = 1.0 - c * xx;
  const double denom = 1.0 + 2.0 * c * xy + c * c * xx * yy;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = (coef_x * x[i] + coef_y * y[i]) / denom;
  return out;
}

// Scalar transcription of the origin log map.
inline std::vector<double> log0_oracle(const std::vector<double>& z, double c) {
  double nz = 0.0;
  for (double v : z) nz += v * v;
  nz = std::sqrt(nz);
  std::vector<double> out(z.size(), 0.0);
  if (nz == 0.0) return out;
  const double sc = std::sqrt(c);
  const double coef = std::atanh(sc * nz) / (sc * nz);
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = coef * z[i];
  return out;
}

// Dense linear solve by Gaussian elimination with partial pivoting;
// independent of the library's Cholesky path.
inline std::vector<double> gauss_solve(std::vector<double> a, std::vector<double> b,
                                       std::size_t n) {
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[pivot * n + col])) pivot = r;
    if (pivot != col) {
      for (std::size_t k = 0; k < n; ++k) std::swap(a[col * n + k], a[pivot * n + k]);
      std::swap(b[col], b[pivot]);
    }
    const double diag = a[col * n + col];
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] / diag;
      if (f == 0.0) continue;
      for (std::size_t k = col; k < n; ++k) a[r * n + k] -= f * a[col * n + k];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t ii = n; ii-- > 0;) {
    double s = b[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= a[ii * n + k] * x[k];
    x[ii] = s / a[ii * n + ii];
  }
  return x;
}

// Quadratic from the subspace-distance expansion:
// q(alpha) = k(z,z) - 2 alpha^T k + alpha^T K alpha.
inline double subspace_quadratic(const std::vector<double>& gram,
                                 const std::vector<double>& k,
                                 const std::vector<double>& alpha, double kzz,
                                 std::size_t m) {
  double lin = 0.0, quad = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    lin += alpha[i] * k[i];
    double row = 0.0;
    for (std::size_t j = 0; j < m; ++j) row += gram[i * m + j] * alpha[j];
    quad += alpha[i] * row;
  }
  return kzz - 2.0 * lin + quad;
}

// Naive softmax cross-entropy, no log-sum-exp trick.
inline double cross_entropy_oracle(const std::vector<double>& logits,
                                   const std::vector<int>& labels,
                                   std::size_t b, std::size_t c) {
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(logits[i * c + j]);
    const double p = std::exp(logits[i * c + static_cast<std::size_t>(labels[i])]) / denom;
    total += -std::log(p);
  }
  return total / static_cast<double>(b);
}

}  // namespace testutil
