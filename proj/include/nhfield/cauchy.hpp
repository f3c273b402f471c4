#pragma once

// Field theories on a 1+1 base (t, b): semidiscretization over a Cauchy
// surface B into a constrained mechanical system, the Cauchy-data forms and
// the constrained evolution residual.

#include "nhfield/constraints.hpp"
#include "nhfield/jet.hpp"
#include "nhfield/mechanics.hpp"

#include <cstdint>
#include <vector>

namespace nhfield {

enum class Boundary { Periodic, Fixed };

/// Uniform grid over B = [0, length).
///
/// Periodic grids have `nodes` points b_j = j * spacing with
/// spacing = length / nodes. Fixed grids have `nodes` interior unknowns at
/// b_j = (j + 1) * spacing with spacing = length / (nodes + 1); the field is
/// pinned to `left` at b = 0 and `right` at b = length.
struct CauchyGrid {
  double length = 1.0;
  int nodes = 64;
  Boundary boundary = Boundary::Periodic;
  Vector left;
  Vector right;

  static CauchyGrid periodic(double length, int nodes);
  static CauchyGrid fixed(double length, int nodes, Vector left, Vector right);

  double spacing() const;
  double position(int j) const;
  /// Throws ConstructionError unless nodes >= 4, length > 0 and, for fixed
  /// boundaries, boundary data of length m.
  void validate(int fiber_dim) const;
};

/// Field values and time velocities at the nodes (m x nodes each). Spatial
/// derivatives are always derived from Y.
struct CauchyState {
  double t = 0.0;
  Matrix Y;
  Matrix V;
};

/// A vertical tangent vector to the space of Cauchy data: variations of the
/// field values and of both jet components at every node (m x nodes).
/// Empty jet blocks are read as zero.
struct CauchyVariation {
  Matrix dy;
  Matrix dz0;
  Matrix dz1;
};

/// The semidiscretized field theory as a mechanical system on q = vec(Y),
/// node-major (q[j * m + i] = Y(i, j)).
///
/// The induced Lagrangian averages the density over forward and backward
/// spatial differences,
///   L~ = sum_j w_j * 1/2 [L(t, b_j, Y_j, V_j, D+ Y_j) + L(..., D- Y_j)],
/// which is second-order consistent at the nodes and reduces to the compact
/// three-point stencil for quadratic densities. Constraints are imposed at
/// every unknown node with the central difference D0 Y_j; row index
/// j * k + alpha. Both carry analytic derivatives assembled through the
/// difference stencils from the node-level derivatives.
class CauchySystem {
 public:
  CauchySystem(LagrangianModel node_model, ConstraintSet node_constraints,
               CauchyGrid grid);

  const LagrangianModel& node_model() const { return node_model_; }
  const ConstraintSet& node_constraints() const { return node_constraints_; }
  const CauchyGrid& grid() const { return grid_; }
  const LagrangianModel& stacked_model() const { return stacked_model_; }
  const ConstraintSet& stacked_constraints() const { return stacked_constraints_; }

  int fiber_dim() const { return node_model_.space.fiber_dim(); }
  int nodes() const { return grid_.nodes; }
  int constraint_count() const { return node_constraints_.count; }

  MechState pack(const CauchyState& s) const;
  CauchyState unpack(const MechState& s) const;

  /// Central spatial differences of a node array (m x nodes), periodic by
  /// wrapping, fixed by the boundary values.
  Matrix spatial_derivative(const Matrix& Y) const;

  /// Jet at node j: (t, b_j; Y_j; V_j, D0 Y_j).
  JetPoint node_jet(const CauchyState& s, int j) const;

  double induced_lagrangian(const CauchyState& s) const;

  /// Constraint values, k x nodes.
  Matrix constraint_values(const CauchyState& s) const;

  /// Quadrature weights of the unknown nodes.
  Vector quadrature_weights() const;

 private:
  LagrangianModel node_model_;
  ConstraintSet node_constraints_;
  CauchyGrid grid_;
  LagrangianModel stacked_model_;
  ConstraintSet stacked_constraints_;
};

CauchySystem semidiscretize(const LagrangianModel& model,
                            const ConstraintSet& cs, const CauchyGrid& grid);

struct FieldTrajectory {
  std::vector<double> times;
  std::vector<CauchyState> states;
  /// Diagnostics of the stacked mechanical run, aligned with `states`.
  Trajectory mechanics;

  std::size_t size() const { return times.size(); }
  /// Constraint values of sample s, k x nodes.
  Matrix node_constraint_residuals(std::size_t sample, int k) const;
  /// Index of the sample at time t; throws DiagnosticUnavailableError.
  std::size_t sample_at(double t) const;
};

class DiagnosticUnavailableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Projects s0 onto the constraints (velocities only) and integrates the
/// stacked system. Degenerate solves are re-thrown with the offending nodes.
FieldTrajectory evolve_field(const CauchySystem& system, const CauchyState& s0,
                             double h, double t_end,
                             const IntegrateOptions& options = {});

/// Theta~(gamma)(xi) = integral over B of gamma^*(i_xi Theta_L) for a
/// vertical variation; only the dy block contributes.
double theta_tilde(const CauchySystem& system, const CauchyState& state,
                   const CauchyVariation& xi);

/// d Theta~(gamma)(cdot, xi) for the velocity cdot of the Cauchy curve at a
/// recorded sample; `accelerations` are the time derivatives of V.
double dtheta_tilde_along(const CauchySystem& system, const CauchyState& state,
                          const Matrix& accelerations,
                          const CauchyVariation& xi);

/// Xi~(gamma)(cdot, xi) with node multipliers lambda_{alpha 0} (k x nodes)
/// and lambda_{alpha 1} = 0.
double xi_tilde_along(const CauchySystem& system, const CauchyState& state,
                      const Matrix& form_multipliers, const CauchyVariation& xi);

/// Multipliers of the continuum equations recovered from the stacked solve:
/// lambda_{alpha 0}(b_j) = -lambda~_{(j, alpha)} / w_j. The sign flip maps
/// the mechanics convention W qddot - A^T lambda = F onto
/// EL_i = lambda_{alpha mu} dPhi^alpha/dz^i_mu.
Matrix form_multipliers(const CauchySystem& system, const Vector& stacked_lambda);

/// `count` random vertical variations with independent standard normal node
/// values in dy and dz0, dy scaled to unit discrete L2(B) norm and
/// dz1 = D0 dy. Deterministic in `seed`.
std::vector<CauchyVariation> random_variations(const CauchySystem& system,
                                               int count, std::uint64_t seed);

/// max over the test variations of |(dTheta~ - Xi~)(cdot, xi)| at the sample
/// recorded at t_probe.
double dedonder_residual_20(const CauchySystem& system,
                            const FieldTrajectory& trajectory, double t_probe,
                            const std::vector<CauchyVariation>& variations);

}  // namespace nhfield
