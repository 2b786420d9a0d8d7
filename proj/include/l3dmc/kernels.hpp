#pragma once

#include <string>

#include "l3dmc/manifold.hpp"
#include "l3dmc/tensor.hpp"

namespace l3dmc {

enum class KernelFamily { kEuclideanRbf, kHyperbolicRbf };

std::string to_string(KernelFamily family);
KernelFamily kernel_family_from_string(const std::string& name);

// Gaussian RBF over one of the two fixed-curvature spaces. The hyperbolic
// variant measures squared distance between the origin-tangent images of its
// inputs, which must already satisfy the ball invariant.
struct KernelSpec {
  KernelFamily family = KernelFamily::kEuclideanRbf;
  double lambda = 1.0;
  double curvature_c = 1.0;  // hyperbolic only

  void validate() const;

  static KernelSpec euclidean(double lambda) {
    return KernelSpec{KernelFamily::kEuclideanRbf, lambda, 1.0};
  }
  static KernelSpec hyperbolic(double lambda, double c) {
    return KernelSpec{KernelFamily::kHyperbolicRbf, lambda, c};
  }
};

// k(zi, zj) in (0, 1], rank-0, differentiable in both arguments.
Tensor kernel_value(const KernelSpec& spec, const Tensor& zi, const Tensor& zj);

// K[i][j] = k(Z[i], Z[j]); exactly symmetric with unit diagonal.
Tensor gram_matrix(const KernelSpec& spec, const Tensor& z);

// Component i = k(z, Z[i]).
Tensor cross_kernel(const KernelSpec& spec, const Tensor& z, const Tensor& big_z);

// Row i, column j = k(Znew[i], Zold[j]).
Tensor cross_kernel_matrix(const KernelSpec& spec, const Tensor& z_new,
                           const Tensor& z_old);

}  // namespace l3dmc
