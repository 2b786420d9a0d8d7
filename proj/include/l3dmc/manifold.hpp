#pragma once

#include "l3dmc/tensor.hpp"

namespace l3dmc {

// Numerical guard for the open ball: every producing operation leaves points
// with sqrt(c)*||x|| <= 1 - kBallEps, keeping atanh arguments away from 1.
inline constexpr double kBallEps = 1e-5;

// Denominator floor for the removable 0/0 singularities at the origin.
inline constexpr double kNormFloor = 1e-15;

// Point of the Poincare ball with curvature -c (c > 0). Coordinates satisfy
// sqrt(c)*||coords|| < 1; use project_to_ball to establish the invariant.
struct BallPoint {
  Tensor coords;
  double curvature_c = 1.0;

  std::size_t dim() const { return coords.size(); }
};

struct TangentVector {
  Tensor coords;
  BallPoint anchor;
};

// Radially rescales x onto sqrt(c)*||x|| = 1 - kBallEps when it lies outside
// that radius; interior points pass through untouched (graph identity).
BallPoint project_to_ball(const Tensor& x, double c);

BallPoint mobius_add(const BallPoint& x, const BallPoint& y);

// d_c(x,y) = (2/sqrt(c)) * atanh(sqrt(c) * ||(-x) (+)_c y||), as a rank-0
// tensor so it stays differentiable.
Tensor geodesic_distance(const BallPoint& x, const BallPoint& y);

// lambda_v^c = 2 / (1 - c*||v||^2), rank-0.
Tensor conformal_factor(const BallPoint& v);

TangentVector log_map(const BallPoint& anchor, const BallPoint& x);
BallPoint exp_map(const BallPoint& anchor, const TangentVector& v);

// Origin-anchored maps on single vectors.
Tensor log0(const Tensor& z, double c);
BallPoint exp0(const Tensor& v, double c);

// Row-wise origin maps for batched pipelines: each row of the input is an
// independent vector. exp0_rows output rows satisfy the ball invariant.
Tensor exp0_rows(const Tensor& v, double c);
Tensor log0_rows(const Tensor& x, double c);
Tensor project_rows_to_ball(const Tensor& x, double c);

}  // namespace l3dmc
