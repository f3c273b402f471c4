#pragma once

// Nonholonomic mechanics on a one-dimensional base: the multiplier (KKT)
// solve for accelerations, velocity projection and fixed-step RK4.

#include "nhfield/constraints.hpp"
#include "nhfield/jet.hpp"

#include <optional>

namespace nhfield {

/// Time, positions and velocities. Maps to the jet point (t; q; qdot).
struct MechState {
  double t = 0.0;
  Vector q;
  Vector qdot;

  JetPoint jet() const;
  int dim() const { return static_cast<int>(q.size()); }
};

/// Accelerations and multipliers from one KKT solve.
///
/// Sign convention: W qddot - A^T lambda = F, with F = dL/dq - d/dt|explicit
/// (dL/dqdot) - (d2L/dq dqdot) qdot. A multiplier therefore equals the
/// generalized force the constraint has to supply along dPhi/dqdot.
struct MultiplierSolution {
  Vector qddot;
  Vector lambda;
  double kkt_residual = 0.0;
  double constraint_accel_residual = 0.0;
};

/// The blocks of the augmented system at one state.
struct KktSystem {
  Matrix W;  // d2L / dqdot dqdot
  Matrix A;  // dPhi / dqdot
  Vector F;
  Vector c;  // dPhi/dq qdot + dPhi/dt
  Vector phi;
  double L = 0.0;
  Vector momentum;  // dL / dqdot
};

class DegenerateSystemError : public std::runtime_error {
 public:
  DegenerateSystemError(const std::string& what, MechState state,
                        double min_singular_value, int stage = -1);

  const MechState& state() const { return state_; }
  double min_singular_value() const { return min_singular_value_; }
  /// RK4 stage (0..3) that failed, or -1 outside a step.
  int stage() const { return stage_; }

 private:
  MechState state_;
  double min_singular_value_;
  int stage_;
};

class ProjectionError : public std::runtime_error {
 public:
  ProjectionError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

class InconsistentStateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Constraint drift above the configured ceiling during integration.
class DriftError : public std::runtime_error {
 public:
  DriftError(const std::string& what, double t, double drift)
      : std::runtime_error(what), t_(t), drift_(drift) {}
  double time() const { return t_; }
  double drift() const { return drift_; }

 private:
  double t_;
  double drift_;
};

/// Requires n = 1 and matching spaces; throws ConstructionError otherwise.
void require_mechanical(const LagrangianModel& model, const ConstraintSet& cs);

KktSystem assemble_kkt(const LagrangianModel& model, const ConstraintSet& cs,
                       const MechState& s);

/// Solves [[W, -A^T], [A, 0]] [qddot; lambda] = [F; -c] by pivoted LU.
/// Throws DegenerateSystemError when the estimated reciprocal condition
/// number falls below tol.
MultiplierSolution multiplier_solve(const LagrangianModel& model,
                                    const ConstraintSet& cs,
                                    const MechState& s, double tol = 1e-12);

MultiplierSolution solve_kkt(const KktSystem& system, const MechState& s,
                             double tol = 1e-12);

/// E = qdot . dL/dqdot - L.
double energy(const LagrangianModel& model, const MechState& s);

struct ProjectionOptions {
  double tol = 1e-12;
  int max_iter = 50;
  /// Velocity components the projection may change; empty means all.
  std::vector<int> adjustable;
};

/// Gauss-Newton on Phi(t, q, .) = 0 over the velocities with minimum-norm
/// steps. Positions are never touched.
MechState project_state(const ConstraintSet& cs, const MechState& s,
                        const ProjectionOptions& options = {});

/// Same, also reporting the number of Gauss-Newton iterations taken.
MechState project_state(const ConstraintSet& cs, const MechState& s,
                        const ProjectionOptions& options, int& iterations);

/// One classical RK4 step of (q, qdot) with qddot from multiplier_solve.
/// `first_stage` may carry the solve at s when the caller already has it.
MechState step_rk4(const LagrangianModel& model, const ConstraintSet& cs,
                   const MechState& s, double h, double solve_tol = 1e-12,
                   const MultiplierSolution* first_stage = nullptr);

struct IntegrateOptions {
  bool project_each_step = false;
  int record_every = 1;
  double drift_ceiling = 1e-3;
  /// Initial data must satisfy max|Phi| <= this unless projecting.
  double consistency_tol = 1e-9;
  double solve_tol = 1e-12;
  ProjectionOptions projection;
};

struct SampleDiagnostics {
  Vector phi;
  Vector lambda;
  Vector qddot;
  double energy = 0.0;
  double kkt_residual = 0.0;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<MechState> states;
  std::vector<SampleDiagnostics> diagnostics;

  std::size_t size() const { return times.size(); }
  /// max over samples and constraints of |Phi|.
  double max_constraint_residual() const;
  /// max over samples of |E(t) - E(t0)|.
  double max_energy_deviation() const;
};

/// Fixed-step RK4 from s0 to s0.t + t_end with round(t_end / h) steps.
/// Sample k is at s0.t + k h; samples are recorded every `record_every`
/// steps and at the final step.
Trajectory integrate(const LagrangianModel& model, const ConstraintSet& cs,
                     const MechState& s0, double h, double t_end,
                     const IntegrateOptions& options = {});

}  // namespace nhfield
