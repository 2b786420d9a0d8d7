#include "l3dmc/manifold.hpp"

#include <cmath>
#include <string>

namespace l3dmc {

namespace {

void check_pair(const BallPoint& x, const BallPoint& y, const char* op) {
  if (x.coords.ndim() != 1 || y.coords.ndim() != 1) {
    throw ShapeError(std::string(op) + ": ball points are rank-1");
  }
  if (x.dim() != y.dim()) {
    throw ShapeError(std::string(op) + ": dimension mismatch (" +
                     std::to_string(x.dim()) + " vs " + std::to_string(y.dim()) + ")");
  }
  if (x.curvature_c != y.curvature_c) {
    throw ShapeError(std::string(op) + ": curvature mismatch");
  }
}

void check_curvature(double c, const char* op) {
  if (!(c > 0.0)) throw ShapeError(std::string(op) + ": curvature c must be > 0");
}

}  // namespace

BallPoint project_to_ball(const Tensor& x, double c) {
  check_curvature(c, "project_to_ball");
  if (x.ndim() != 1) throw ShapeError("project_to_ball: expected a rank-1 tensor");
  const double limit = (1.0 - kBallEps) / std::sqrt(c);
  double r2 = 0.0;
  for (double v : x.data()) r2 += v * v;
  if (std::sqrt(r2) < limit) return BallPoint{x, c};
  Tensor coef = div(Tensor::scalar(limit), norm(x));
  return BallPoint{scale_by(x, coef), c};
}

BallPoint mobius_add(const BallPoint& x, const BallPoint& y) {
  check_pair(x, y, "mobius_add");
  const double c = x.curvature_c;
  Tensor xy = dot(x.coords, y.coords);
  Tensor xx = dot(x.coords, x.coords);
  Tensor yy = dot(y.coords, y.coords);
  Tensor coef_x = add_scalar(add(scale(xy, 2.0 * c), scale(yy, c)), 1.0);
  Tensor coef_y = add_scalar(scale(xx, -c), 1.0);
  Tensor denom = add_scalar(add(scale(xy, 2.0 * c), scale(mul(xx, yy), c * c)), 1.0);
  Tensor numer = add(scale_by(x.coords, coef_x), scale_by(y.coords, coef_y));
  return project_to_ball(div_by(numer, denom), c);
}

Tensor geodesic_distance(const BallPoint& x, const BallPoint& y) {
  check_pair(x, y, "geodesic_distance");
  const double sc = std::sqrt(x.curvature_c);
  BallPoint w = mobius_add(BallPoint{neg(x.coords), x.curvature_c}, y);
  return scale(atanh(scale(norm(w.coords), sc)), 2.0 / sc);
}

Tensor conformal_factor(const BallPoint& v) {
  Tensor vv = dot(v.coords, v.coords);
  return div(Tensor::scalar(2.0), add_scalar(scale(vv, -v.curvature_c), 1.0));
}

TangentVector log_map(const BallPoint& anchor, const BallPoint& x) {
  check_pair(anchor, x, "log_map");
  const double c = anchor.curvature_c;
  const double sc = std::sqrt(c);
  BallPoint w = mobius_add(BallPoint{neg(anchor.coords), c}, x);
  Tensor r = norm(w.coords);
  Tensor lambda_a = conformal_factor(anchor);
  // (2/(sc*lambda)) * atanh(sc*r) * w/r, with the denominator floored so the
  // x == anchor limit comes out as the zero vector.
  Tensor coef = div(scale(atanh(scale(r, sc)), 2.0 / sc),
                    mul(lambda_a, clamp_min(r, kNormFloor)));
  return TangentVector{scale_by(w.coords, coef), anchor};
}

BallPoint exp_map(const BallPoint& anchor, const TangentVector& v) {
  if (v.anchor.dim() != anchor.dim() ||
      v.anchor.curvature_c != anchor.curvature_c ||
      v.anchor.coords.data() != anchor.coords.data()) {
    throw ShapeError("exp_map: tangent vector is anchored elsewhere");
  }
  if (v.coords.size() != anchor.dim()) {
    throw ShapeError("exp_map: dimension mismatch");
  }
  const double c = anchor.curvature_c;
  const double sc = std::sqrt(c);
  Tensor r = norm(v.coords);
  Tensor lambda_a = conformal_factor(anchor);
  Tensor arg = scale(mul(lambda_a, r), sc / 2.0);
  Tensor coef = div(tanh(arg), scale(clamp_min(r, kNormFloor), sc));
  BallPoint second{scale_by(v.coords, coef), c};
  return mobius_add(anchor, second);
}

Tensor log0(const Tensor& z, double c) {
  check_curvature(c, "log0");
  if (z.ndim() != 1) throw ShapeError("log0: expected a rank-1 tensor");
  return reshape(log0_rows(reshape(z, {1, z.size()}), c), {z.size()});
}

BallPoint exp0(const Tensor& v, double c) {
  check_curvature(c, "exp0");
  if (v.ndim() != 1) throw ShapeError("exp0: expected a rank-1 tensor");
  Tensor rows = exp0_rows(reshape(v, {1, v.size()}), c);
  return BallPoint{reshape(rows, {v.size()}), c};
}

Tensor project_rows_to_ball(const Tensor& x, double c) {
  check_curvature(c, "project_rows_to_ball");
  if (x.ndim() != 2) throw ShapeError("project_rows_to_ball: expected rank-2");
  const double limit = (1.0 - kBallEps) / std::sqrt(c);
  Tensor r = row_norms(x);
  bool any_outside = false;
  for (double v : r.data()) {
    if (v >= limit) {
      any_outside = true;
      break;
    }
  }
  if (!any_outside) return x;
  // min(1, limit/r) per row; interior rows keep scale 1 with no gradient
  // through the norm.
  Tensor coef =
      clamp_max(div(Tensor::full({x.rows()}, limit), clamp_min(r, kNormFloor)), 1.0);
  return rows_scale(x, coef);
}

Tensor exp0_rows(const Tensor& v, double c) {
  check_curvature(c, "exp0_rows");
  if (v.ndim() != 2) throw ShapeError("exp0_rows: expected rank-2");
  const double sc = std::sqrt(c);
  Tensor u = scale(clamp_min(row_norms(v), kNormFloor), sc);
  Tensor coef = div(tanh(u), u);
  return project_rows_to_ball(rows_scale(v, coef), c);
}

Tensor log0_rows(const Tensor& x, double c) {
  check_curvature(c, "log0_rows");
  if (x.ndim() != 2) throw ShapeError("log0_rows: expected rank-2");
  const double sc = std::sqrt(c);
  Tensor u = scale(clamp_min(row_norms(x), kNormFloor), sc);
  Tensor coef = div(atanh(u), u);
  return rows_scale(x, coef);
}

}  // namespace l3dmc
