#pragma once

// Constraint sets Phi^alpha(x, y, z) = 0 on the first jet space.

#include "nhfield/jet.hpp"

namespace nhfield {

struct ConstraintDerivatives;

/// Optional analytic jacobians of a constraint set (k rows each).
///   dPhi_dx  k x n
///   dPhi_dy  k x m
///   dPhi_dz  k x (m*n), flattened jet index

struct ConstraintJacobians {
  /// Value and all jacobians at once; takes precedence when present.
  std::function<ConstraintDerivatives(const JetPoint&)> all;
  MatrixField dPhi_dx;
  MatrixField dPhi_dy;
  MatrixField dPhi_dz;
};

struct ConstraintSet {
  FiberedSpace space;
  int count = 0;  // k
  VectorField phi;
  ConstraintJacobians jacobians;
  double fd_step = 1e-5;

  /// Set with k = 0.
  static ConstraintSet empty(const FiberedSpace& space);

  /// Phi at p, checked for length and finiteness.
  Vector evaluate(const JetPoint& p) const;
};

struct ConstraintDerivatives {
  Vector phi;
  Matrix dPhi_dx;
  Matrix dPhi_dy;
  Matrix dPhi_dz;
};

/// Phi and all three jacobians at p, analytic where available.
ConstraintDerivatives eval_constraint_derivatives(const ConstraintSet& cs,
                                                  const JetPoint& p);

/// Same, differencing Phi for every jacobian.
ConstraintDerivatives eval_constraint_derivatives_differenced(
    const ConstraintSet& cs, const JetPoint& p);

/// k x (m*n) matrix dPhi^alpha / dz^i_mu at p.
Matrix jacobian_z(const ConstraintSet& cs, const JetPoint& p);

struct ConstraintRegularity {
  bool independent = false;
  int rank = 0;
  double min_singular_value = 0.0;
  Vector singular_values;
};

/// Linear independence of the rows dPhi^alpha/dz at p, with singular values
/// below tol * (largest singular value) counted as zero.
ConstraintRegularity constraint_regularity(const ConstraintSet& cs,
                                           const JetPoint& p,
                                           double tol = 1e-10);

using CoefficientField = std::function<double(const Vector& x, const Vector& y)>;

/// Coefficients of k n-forms
///   phi^alpha = (phi^alpha)_0 d^n x + (phi^alpha)^mu_i dy^i ^ d^{n-1}x_mu.
/// `linear(alpha)` is indexed by the flattened jet index (i, mu); an empty
/// function means an identically zero coefficient.
struct AffineFormCoefficients {
  std::vector<CoefficientField> constant;
  std::vector<std::vector<CoefficientField>> linear;
};

/// Phi^alpha = (phi^alpha)_0(x, y) + sum (phi^alpha)^mu_i(x, y) z^i_mu.
/// dPhi/dz is the coefficient array; dPhi/dx and dPhi/dy difference the
/// coefficient functions.
ConstraintSet affine_constraints(const AffineFormCoefficients& coeffs,
                                 const FiberedSpace& space,
                                 double fd_step = 1e-5);

/// Rows of `a` stacked below rows of `b`.
ConstraintSet concatenate(const ConstraintSet& a, const ConstraintSet& b);

}  // namespace nhfield
