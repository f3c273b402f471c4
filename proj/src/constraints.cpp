#include "nhfield/constraints.hpp"

#include <cmath>

namespace nhfield {

namespace {

Matrix difference_rows(const ConstraintSet& cs, const JetPoint& p,
                       detail::Block block, int size) {
  const int n = cs.space.base_dim();
  Matrix out(cs.count, size);
  JetPoint q = p;
  for (int a = 0; a < size; ++a) {
    double& c = detail::coord(q, block, a, n);
    const double c0 = c;
    const double h = detail::fd_scale(cs.fd_step, c0);
    c = c0 + h;
    const Vector fp = cs.evaluate(q);
    c = c0 - h;
    const Vector fm = cs.evaluate(q);
    c = c0;
    out.col(a) = (fp - fm) / (2.0 * h);
  }
  return out;
}

Matrix checked(const MatrixField& f, const JetPoint& p, Eigen::Index rows,
               Eigen::Index cols, const char* name) {
  Matrix v = f(p);
  if (v.rows() != rows || v.cols() != cols) {
    throw ConstructionError(std::string(name) + " closure has wrong shape");
  }
  if (!v.allFinite()) {
    throw EvaluationDomainError(std::string(name) + " is not finite");
  }
  return v;
}

ConstraintDerivatives derivatives(const ConstraintSet& cs, const JetPoint& p,
                                  bool use_closures) {
  p.require_matches(cs.space);
  const FiberedSpace& s = cs.space;
  const auto& j = cs.jacobians;
  if (use_closures && j.all) {
    ConstraintDerivatives d = j.all(p);
    if (d.phi.size() != cs.count || d.dPhi_dx.rows() != cs.count ||
        d.dPhi_dx.cols() != s.base_dim() || d.dPhi_dy.rows() != cs.count ||
        d.dPhi_dy.cols() != s.fiber_dim() || d.dPhi_dz.rows() != cs.count ||
        d.dPhi_dz.cols() != s.jet_dim()) {
      throw ConstructionError("combined constraint closure has wrong shapes");
    }
    if (!d.phi.allFinite()) {
      throw EvaluationDomainError("constraint value is not finite at probe");
    }
    return d;
  }
  ConstraintDerivatives d;
  d.phi = cs.evaluate(p);
  d.dPhi_dx = use_closures && j.dPhi_dx
                  ? checked(j.dPhi_dx, p, cs.count, s.base_dim(), "dPhi_dx")
                  : difference_rows(cs, p, detail::Block::X, s.base_dim());
  d.dPhi_dy = use_closures && j.dPhi_dy
                  ? checked(j.dPhi_dy, p, cs.count, s.fiber_dim(), "dPhi_dy")
                  : difference_rows(cs, p, detail::Block::Y, s.fiber_dim());
  d.dPhi_dz = use_closures && j.dPhi_dz
                  ? checked(j.dPhi_dz, p, cs.count, s.jet_dim(), "dPhi_dz")
                  : difference_rows(cs, p, detail::Block::Z, s.jet_dim());
  return d;
}

}  // namespace

ConstraintSet ConstraintSet::empty(const FiberedSpace& space) {
  ConstraintSet cs{space, 0, [](const JetPoint&) { return Vector(0); }, {}};
  const int n = space.base_dim();
  const int m = space.fiber_dim();
  cs.jacobians.dPhi_dx = [n](const JetPoint&) { return Matrix(0, n); };
  cs.jacobians.dPhi_dy = [m](const JetPoint&) { return Matrix(0, m); };
  cs.jacobians.dPhi_dz = [N = n * m](const JetPoint&) { return Matrix(0, N); };
  return cs;
}

Vector ConstraintSet::evaluate(const JetPoint& p) const {
  Vector v = phi(p);
  if (v.size() != count) {
    throw ConstructionError("constraint evaluator returned " +
                            std::to_string(v.size()) + " values, expected " +
                            std::to_string(count));
  }
  if (!v.allFinite()) {
    throw EvaluationDomainError("constraint value is not finite at probe");
  }
  return v;
}

ConstraintDerivatives eval_constraint_derivatives(const ConstraintSet& cs,
                                                  const JetPoint& p) {
  return derivatives(cs, p, true);
}

ConstraintDerivatives eval_constraint_derivatives_differenced(
    const ConstraintSet& cs, const JetPoint& p) {
  return derivatives(cs, p, false);
}

Matrix jacobian_z(const ConstraintSet& cs, const JetPoint& p) {
  p.require_matches(cs.space);
  if (cs.jacobians.all) return eval_constraint_derivatives(cs, p).dPhi_dz;
  if (cs.jacobians.dPhi_dz) {
    return checked(cs.jacobians.dPhi_dz, p, cs.count, cs.space.jet_dim(),
                   "dPhi_dz");
  }
  return difference_rows(cs, p, detail::Block::Z, cs.space.jet_dim());
}

ConstraintRegularity constraint_regularity(const ConstraintSet& cs,
                                           const JetPoint& p, double tol) {
  if (!(tol > 0.0)) throw ConstructionError("regularity tolerance must be > 0");
  ConstraintRegularity r;
  if (cs.count == 0) {
    r.independent = true;
    return r;
  }
  const Matrix a = jacobian_z(cs, p);
  Eigen::JacobiSVD<Matrix> svd(a);
  r.singular_values = svd.singularValues();
  const double largest = r.singular_values(0);
  const double threshold = tol * (largest > 0.0 ? largest : 1.0);
  for (Eigen::Index i = 0; i < r.singular_values.size(); ++i) {
    if (r.singular_values(i) > threshold) ++r.rank;
  }
  // More constraints than jet directions leaves k - m*n implicit zeros.
  r.min_singular_value =
      cs.count > a.cols() ? 0.0
                          : r.singular_values(r.singular_values.size() - 1);
  r.independent = r.rank == cs.count;
  return r;
}

ConstraintSet affine_constraints(const AffineFormCoefficients& coeffs,
                                 const FiberedSpace& space, double fd_step) {
  const int k = static_cast<int>(coeffs.constant.size());
  const int N = space.jet_dim();
  if (static_cast<int>(coeffs.linear.size()) != k) {
    throw ConstructionError("affine constraint: " + std::to_string(k) +
                            " constant terms but " +
                            std::to_string(coeffs.linear.size()) +
                            " linear coefficient rows");
  }
  for (int a = 0; a < k; ++a) {
    if (static_cast<int>(coeffs.linear[a].size()) != N) {
      throw ConstructionError("affine constraint row " + std::to_string(a) +
                              " has " + std::to_string(coeffs.linear[a].size()) +
                              " coefficients, expected m*n = " +
                              std::to_string(N));
    }
  }

  auto value_of = [](const CoefficientField& f, const Vector& x,
                     const Vector& y) { return f ? f(x, y) : 0.0; };

  // Coefficient array at (x, y): column 0 constant term, columns 1.. linear.
  auto coefficients = [coeffs, k, N, value_of](const Vector& x,
                                               const Vector& y) {
    Matrix c(k, N + 1);
    for (int a = 0; a < k; ++a) {
      c(a, 0) = value_of(coeffs.constant[a], x, y);
      for (int j = 0; j < N; ++j) c(a, j + 1) = value_of(coeffs.linear[a][j], x, y);
    }
    return c;
  };

  ConstraintSet cs;
  cs.space = space;
  cs.count = k;
  cs.fd_step = fd_step;
  cs.phi = [coefficients](const JetPoint& p) {
    const Matrix c = coefficients(p.x, p.y);
    return Vector(c.col(0) + c.rightCols(c.cols() - 1) * p.z_flat());
  };
  cs.jacobians.dPhi_dz = [coefficients](const JetPoint& p) {
    const Matrix c = coefficients(p.x, p.y);
    return Matrix(c.rightCols(c.cols() - 1));
  };

  // d/dc of (phi_0 + phi_lin . z) differencing only the coefficient functions.
  auto coefficient_jacobian = [coefficients, fd_step](const JetPoint& p,
                                                      bool wrt_x) {
    const Vector zf = p.z_flat();
    Vector x = p.x;
    Vector y = p.y;
    Vector& v = wrt_x ? x : y;
    Matrix out(0, 0);
    for (Eigen::Index a = 0; a < v.size(); ++a) {
      const double c0 = v(a);
      const double h = detail::fd_scale(fd_step, c0);
      v(a) = c0 + h;
      const Matrix cp = coefficients(x, y);
      v(a) = c0 - h;
      const Matrix cm = coefficients(x, y);
      v(a) = c0;
      const Matrix dc = (cp - cm) / (2.0 * h);
      if (a == 0) out.resize(dc.rows(), v.size());
      out.col(a) = dc.col(0) + dc.rightCols(dc.cols() - 1) * zf;
    }
    return out;
  };
  cs.jacobians.dPhi_dx = [coefficient_jacobian](const JetPoint& p) {
    return coefficient_jacobian(p, true);
  };
  cs.jacobians.dPhi_dy = [coefficient_jacobian](const JetPoint& p) {
    return coefficient_jacobian(p, false);
  };
  if (k == 0) {
    const int n = space.base_dim();
    const int m = space.fiber_dim();
    cs.jacobians.dPhi_dx = [n](const JetPoint&) { return Matrix(0, n); };
    cs.jacobians.dPhi_dy = [m](const JetPoint&) { return Matrix(0, m); };
  }
  return cs;
}

ConstraintSet concatenate(const ConstraintSet& a, const ConstraintSet& b) {
  if (!(a.space == b.space)) {
    throw ConstructionError("cannot concatenate constraints on different spaces");
  }
  ConstraintSet out;
  out.space = a.space;
  out.count = a.count + b.count;
  out.fd_step = std::min(a.fd_step, b.fd_step);
  out.phi = [a, b](const JetPoint& p) {
    Vector v(a.count + b.count);
    v << a.evaluate(p), b.evaluate(p);
    return v;
  };
  auto stack = [](const Matrix& top, const Matrix& bottom) {
    Matrix m(top.rows() + bottom.rows(), top.cols());
    m << top, bottom;
    return m;
  };
  out.jacobians.dPhi_dx = [a, b, stack](const JetPoint& p) {
    return stack(eval_constraint_derivatives(a, p).dPhi_dx,
                 eval_constraint_derivatives(b, p).dPhi_dx);
  };
  out.jacobians.dPhi_dy = [a, b, stack](const JetPoint& p) {
    return stack(eval_constraint_derivatives(a, p).dPhi_dy,
                 eval_constraint_derivatives(b, p).dPhi_dy);
  };
  out.jacobians.dPhi_dz = [a, b, stack](const JetPoint& p) {
    return stack(jacobian_z(a, p), jacobian_z(b, p));
  };
  return out;
}

}  // namespace nhfield
