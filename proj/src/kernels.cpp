#include "l3dmc/kernels.hpp"

namespace l3dmc {

std::string to_string(KernelFamily family) {
  return family == KernelFamily::kEuclideanRbf ? "euclidean-rbf" : "hyperbolic-rbf";
}

KernelFamily kernel_family_from_string(const std::string& name) {
  if (name == "euclidean-rbf") return KernelFamily::kEuclideanRbf;
  if (name == "hyperbolic-rbf") return KernelFamily::kHyperbolicRbf;
  throw ShapeError("unknown kernel family: " + name);
}

void KernelSpec::validate() const {
  if (!(lambda > 0.0)) throw ShapeError("KernelSpec: lambda must be > 0");
  if (family == KernelFamily::kHyperbolicRbf && !(curvature_c > 0.0)) {
    throw ShapeError("KernelSpec: curvature_c must be > 0");
  }
}

namespace {

// Maps inputs into the space the RBF operates on: identity for Euclidean,
// origin tangent plane for hyperbolic.
Tensor embed_rows(const KernelSpec& spec, const Tensor& z) {
  if (spec.family == KernelFamily::kHyperbolicRbf) {
    return log0_rows(z, spec.curvature_c);
  }
  return z;
}

Tensor as_row_matrix(const Tensor& z) {
  if (z.ndim() == 1) return reshape(z, {1, z.size()});
  return z;
}

}  // namespace

Tensor kernel_value(const KernelSpec& spec, const Tensor& zi, const Tensor& zj) {
  spec.validate();
  if (zi.ndim() != 1 || zj.ndim() != 1) {
    throw ShapeError("kernel_value: expected rank-1 inputs");
  }
  if (zi.size() != zj.size()) {
    throw ShapeError("kernel_value: dimension mismatch");
  }
  Tensor k = cross_kernel_matrix(spec, as_row_matrix(zi), as_row_matrix(zj));
  return reshape(k, {});
}

Tensor gram_matrix(const KernelSpec& spec, const Tensor& z) {
  spec.validate();
  if (z.ndim() != 2 || z.rows() < 1) {
    throw ShapeError("gram_matrix: expected a non-empty rank-2 tensor");
  }
  Tensor u = embed_rows(spec, z);
  // Each unordered pair produces bitwise-identical entries on both sides of
  // the diagonal, and the diagonal is exactly exp(0) = 1.
  return exp(scale(pairwise_sqdist(u, u), -spec.lambda));
}

Tensor cross_kernel(const KernelSpec& spec, const Tensor& z, const Tensor& big_z) {
  spec.validate();
  if (z.ndim() != 1) throw ShapeError("cross_kernel: z must be rank-1");
  if (big_z.ndim() != 2) throw ShapeError("cross_kernel: Z must be rank-2");
  Tensor k = cross_kernel_matrix(spec, as_row_matrix(z), big_z);
  return reshape(k, {big_z.rows()});
}

Tensor cross_kernel_matrix(const KernelSpec& spec, const Tensor& z_new,
                           const Tensor& z_old) {
  spec.validate();
  if (z_new.ndim() != 2 || z_old.ndim() != 2) {
    throw ShapeError("cross_kernel_matrix: expected rank-2 tensors");
  }
  if (z_new.cols() != z_old.cols()) {
    throw ShapeError("cross_kernel_matrix: dimension mismatch");
  }
  Tensor a = embed_rows(spec, z_new);
  Tensor b = embed_rows(spec, z_old);
  return exp(scale(pairwise_sqdist(a, b), -spec.lambda));
}

}  // namespace l3dmc
