#pragma once

// Built-in example systems.

#include "nhfield/constraints.hpp"
#include "nhfield/jet.hpp"
#include "nhfield/mechanics.hpp"

#include <complex>
#include <map>
#include <string>
#include <vector>

namespace nhfield {

/// Keldysh pneumatic tire rolling at constant speed V.
///
/// Coordinates (x, kappa, theta, xi, phi): lateral position of the contact
/// reference point, camber angle, heading angle, lateral deformation and
/// torsional deformation. The kinetic energy only involves the rigid-body
/// coordinates:
///   T = 1/2 (m_x xdot^2 + I_kappa kappadot^2 + I_theta thetadot^2)
///   U = 1/2 (a xi^2 + b phi^2 + rho N kappa^2 + 2 sigma N xi kappa)
/// with the rolling constraints
///   xdot + xidot + V theta + V phi = 0
///   thetadot + phidot - alpha V xi + beta V phi + gamma V kappa = 0.
struct TireParams {
  double a = 2.0;
  double b = 1.0;
  double rho = 0.5;
  double sigma = 0.3;
  double N = 10.0;
  double V = 1.0;
  double alpha = 0.4;
  double beta = 0.2;
  double gamma = 0.1;
  double m_x = 1.0;
  double I_kappa = 0.2;
  double I_theta = 0.5;

  /// Throws ConstructionError on V < 0, N < 0, non-positive inertias or
  /// stiffnesses, or non-finite values.
  void validate() const;

  /// Whether [[a, sigma N], [sigma N, rho N]] is positive semidefinite.
  bool elastic_matrix_psd() const;
};

namespace tire {
inline constexpr int kX = 0;
inline constexpr int kKappa = 1;
inline constexpr int kTheta = 2;
inline constexpr int kXi = 3;
inline constexpr int kPhi = 4;
}  // namespace tire

struct MechanicalSystem {
  LagrangianModel lagrangian;
  ConstraintSet constraints;
};

MechanicalSystem tire_model(const TireParams& p);

/// Elastic potential U(kappa, xi, phi).
double tire_potential(const TireParams& p, const Vector& q);

/// Accelerations and multipliers of the tire obtained by eliminating the
/// multipliers by hand: the xi and phi rows carry no inertia, so
/// lambda1 = dU/dxi and lambda2 = dU/dphi.
struct TireClosedForm {
  Vector qddot;
  Vector lambda;
};

/// Throws InconsistentStateError if s violates a constraint by more than
/// `consistency_tol`.
TireClosedForm tire_reference_solution(const TireParams& p, const MechState& s,
                                       double consistency_tol = 1e-9);

/// (qdot, qddot) of the hand-eliminated tire equations, length 10.
Vector tire_reference_rhs(const TireParams& p, const MechState& s,
                          double consistency_tol = 1e-9);

/// RK4 on tire_reference_rhs; the independent route for trajectory checks.
Trajectory tire_reference_trajectory(const TireParams& p, const MechState& s0,
                                     double h, double t_end);

/// Spectrum of the linearized tire equations at straight rolling, sorted by
/// real part (descending), ties by imaginary part (descending).
std::vector<std::complex<double>> tire_linearize(const TireParams& p);

/// Largest real part of tire_linearize.
double tire_max_growth_rate(const TireParams& p);

/// L = 1/2 mass ydot^2 - 1/2 stiffness y^2.
LagrangianModel oscillator_model(double mass, double stiffness);

/// Particle in R^3 with the nonholonomic constraint
///   zdot - y xdot + offset = 0
/// and an optional restoring potential 1/2 stiffness y^2 (free by default).
/// offset = 0 gives a constraint linear and homogeneous in the velocities.
/// The free particle keeps ydot constant, and RK4 then preserves the
/// constraint to rounding; a nonzero stiffness makes the drift visible.
MechanicalSystem nonholonomic_particle(double offset = 0.0, double stiffness = 0.0);

/// Free scalar wave L = 1/2 (z_0^2 - z_1^2) on base (t, b).
LagrangianModel wave_model();

/// Two free scalar fields with the affine constraint z^1_0 - c z^2_1 = 0.
struct FieldSystem {
  LagrangianModel lagrangian;
  ConstraintSet constraints;
};

FieldSystem scalar_constrained_model(double c);

/// A named model with string-keyed parameter overrides, as used by the CLI.
enum class ModelKind { Mechanical, Field };

struct RegisteredModel {
  std::string name;
  ModelKind kind = ModelKind::Mechanical;
  LagrangianModel lagrangian;
  ConstraintSet constraints;
  /// Parameter values after overrides.
  std::map<std::string, double> parameters;
  /// Mechanical models: default initial state (already consistent).
  MechState initial_state;
  /// Mechanical models: whether the Hessian is singular by construction and
  /// the augmented system is expected to carry the solve.
  bool degenerate_hessian_expected = false;
};

/// Names accepted by make_model.
std::vector<std::string> model_names();

/// Default parameters of a model; throws ConstructionError on unknown names.
std::map<std::string, double> default_parameters(const std::string& name);

/// Builds a model with overrides; unknown model or parameter names and
/// invalid values throw ConstructionError.
RegisteredModel make_model(const std::string& name,
                           const std::map<std::string, double>& overrides = {});

}  // namespace nhfield
