#include "l3dmc/distill.hpp"

#include "l3dmc/manifold.hpp"

namespace l3dmc {

void DistillConfig::validate() const {
  if (!(beta >= 0.0)) throw ShapeError("DistillConfig: beta must be >= 0");
  if (!(lambda_e > 0.0)) throw ShapeError("DistillConfig: lambda_e must be > 0");
  if (!(lambda_h > 0.0)) throw ShapeError("DistillConfig: lambda_h must be > 0");
  if (!(curvature_c > 0.0)) throw ShapeError("DistillConfig: curvature_c must be > 0");
  if (!detach_old) {
    throw ShapeError("DistillConfig: detach_old is part of the contract");
  }
}

SubspaceBasis build_subspace_basis(const KernelSpec& spec, const Tensor& z_old) {
  spec.validate();
  if (z_old.ndim() != 2 || z_old.rows() < 1) {
    throw ShapeError("build_subspace_basis: expected a non-empty [m,d] tensor");
  }
  Tensor detached = z_old.tracked() ? z_old.detach() : z_old;
  Tensor gram = gram_matrix(spec, detached);
  CholeskyFactor factor = CholeskyFactor::factorize(gram);
  return SubspaceBasis{std::move(detached), std::move(gram), std::move(factor), spec};
}

namespace {

void check_query(const Tensor& z, const SubspaceBasis& basis, const char* op,
                 std::size_t expected_rank) {
  if (z.ndim() != expected_rank) {
    throw ShapeError(std::string(op) + ": unexpected query rank");
  }
  const std::size_t dim = expected_rank == 1 ? z.size() : z.cols();
  if (dim != basis.z_old.cols()) {
    throw ShapeError(std::string(op) + ": query dimension mismatch");
  }
}

}  // namespace

Tensor subspace_distance(const Tensor& z_new, const SubspaceBasis& basis) {
  check_query(z_new, basis, "subspace_distance", 1);
  Tensor k = cross_kernel(basis.spec, z_new, basis.z_old);
  Tensor alpha = basis.factor.solve(k);
  Tensor kzz = kernel_value(basis.spec, z_new, z_new);
  return clamp_min(sub(kzz, dot(k, alpha)), 0.0);
}

Tensor subspace_distances(const Tensor& z_new, const SubspaceBasis& basis) {
  check_query(z_new, basis, "subspace_distances", 2);
  Tensor cross = cross_kernel_matrix(basis.spec, z_new, basis.z_old);  // [B,m]
  Tensor solved = basis.factor.solve(transpose(cross));                // [m,B]
  Tensor quad = rowdot(cross, transpose(solved));                      // [B]
  // k(z,z) = exp(0) = 1 exactly for both RBF families.
  return clamp_min(sub(Tensor::ones({z_new.rows()}), quad), 0.0);
}

Tensor alpha_solve(const Tensor& z_new, const SubspaceBasis& basis) {
  check_query(z_new, basis, "alpha_solve", 1);
  Tensor k = cross_kernel(basis.spec, z_new, basis.z_old);
  return basis.factor.solve(k);
}

Tensor kd_loss(const Tensor& z_new_feat, const Tensor& z_old_feat,
               const ProjectionHeads& heads_new, const ProjectionHeads& heads_old,
               const DistillConfig& cfg, KdDiagnostics* diagnostics) {
  cfg.validate();
  if (z_new_feat.ndim() != 2 || z_old_feat.ndim() != 2) {
    throw ShapeError("kd_loss: features must be [B,D]");
  }
  if (z_new_feat.rows() != z_old_feat.rows()) {
    throw ShapeError("kd_loss: batch size differs between new and old features");
  }
  if (z_new_feat.cols() != z_old_feat.cols()) {
    throw ShapeError("kd_loss: feature width differs between new and old features");
  }

  // Euclidean branch.
  Tensor embed_new_e = heads_new.head_e.forward(z_new_feat);
  Tensor embed_old_e;
  {
    NoGradScope frozen;
    embed_old_e = heads_old.head_e.forward(z_old_feat.detach());
  }
  SubspaceBasis basis_e =
      build_subspace_basis(KernelSpec::euclidean(cfg.lambda_e), embed_old_e);
  Tensor loss = mean(subspace_distances(embed_new_e, basis_e));
  if (diagnostics) {
    diagnostics->ridge_e = basis_e.gram_ridge();
    diagnostics->condition_e = basis_e.factor.report().condition_estimate;
  }

  // Hyperbolic branch, skipped entirely when beta == 0.
  if (cfg.beta > 0.0) {
    Tensor embed_new_h =
        exp0_rows(heads_new.head_h.forward(z_new_feat), cfg.curvature_c);
    Tensor embed_old_h;
    {
      NoGradScope frozen;
      embed_old_h =
          exp0_rows(heads_old.head_h.forward(z_old_feat.detach()), cfg.curvature_c);
    }
    SubspaceBasis basis_h = build_subspace_basis(
        KernelSpec::hyperbolic(cfg.lambda_h, cfg.curvature_c), embed_old_h);
    loss = add(loss, scale(mean(subspace_distances(embed_new_h, basis_h)), cfg.beta));
    if (diagnostics) {
      diagnostics->ridge_h = basis_h.gram_ridge();
      diagnostics->condition_h = basis_h.factor.report().condition_estimate;
    }
  }
  return loss;
}

}  // namespace l3dmc
