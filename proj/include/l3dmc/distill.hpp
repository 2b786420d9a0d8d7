#pragma once

#include "l3dmc/kernels.hpp"
#include "l3dmc/model.hpp"
#include "l3dmc/tensor.hpp"

namespace l3dmc {

// Span of the old embeddings' RKHS images for one batch: the detached
// embedding rows, their Gram matrix, and its cached factorization. The Gram
// side is constant by construction, so gradients only ever flow through the
// cross-kernel vector of a query point.
struct SubspaceBasis {
  Tensor z_old;          // [m, d], detached
  Tensor gram;           // [m, m]
  CholeskyFactor factor; // of gram (+ recorded ridge)
  KernelSpec spec;

  std::size_t count() const { return z_old.rows(); }
  double gram_ridge() const { return factor.report().ridge_added; }
};

SubspaceBasis build_subspace_basis(const KernelSpec& spec, const Tensor& z_old);

struct DistillConfig {
  double beta = 1.0;
  double lambda_e = 1.0;
  double lambda_h = 1.0;
  double curvature_c = 1.0;
  bool detach_old = true;  // contract: no gradient ever reaches the old side

  void validate() const;
};

// Squared RKHS distance from phi(z) to span{phi(z_old_i)}:
//   delta = k(z,z) - k_zZ^T K_ZZ^{-1} k_zZ,
// clamped at zero from below. Differentiable in z.
Tensor subspace_distance(const Tensor& z_new, const SubspaceBasis& basis);

// Row-wise subspace distances for a batch of query points, one solve against
// the shared factorization.
Tensor subspace_distances(const Tensor& z_new, const SubspaceBasis& basis);

// Minimizing combination coefficients alpha = K_ZZ^{-1} k_zZ.
Tensor alpha_solve(const Tensor& z_new, const SubspaceBasis& basis);

// Gram-conditioning details of the two per-batch bases.
struct KdDiagnostics {
  double ridge_e = 0.0;
  double ridge_h = 0.0;
  double condition_e = 1.0;
  double condition_h = 1.0;
};

// Mixed-curvature distillation loss over a batch of backbone features:
// Euclidean-head term plus beta times the hyperbolic-head term, each the
// batch mean of per-sample subspace distances against bases built from the
// old model's heads on the old features. Hyperbolic head outputs pass
// through exp0 into the ball before the tangent-plane kernel.
Tensor kd_loss(const Tensor& z_new_feat, const Tensor& z_old_feat,
               const ProjectionHeads& heads_new, const ProjectionHeads& heads_old,
               const DistillConfig& cfg, KdDiagnostics* diagnostics = nullptr);

}  // namespace l3dmc
