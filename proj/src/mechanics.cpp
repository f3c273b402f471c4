#include "nhfield/mechanics.hpp"

#include <cmath>
#include <sstream>

namespace nhfield {

namespace {

std::string state_string(const MechState& s) {
  std::ostringstream os;
  os.precision(17);
  os << "t=" << s.t << " q=(" << s.q.transpose() << ") qdot=("
     << s.qdot.transpose() << ")";
  return os.str();
}

double max_abs(const Vector& v) {
  return v.size() ? v.cwiseAbs().maxCoeff() : 0.0;
}

double smallest_singular_value(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(svd.singularValues().size() - 1);
}

struct Derivative {
  Vector dq;
  Vector dqdot;
};

MechState advance(const MechState& s, const Derivative& d, double h) {
  return MechState{s.t + h, s.q + h * d.dq, s.qdot + h * d.dqdot};
}

}  // namespace

JetPoint MechState::jet() const {
  Vector x(1);
  x(0) = t;
  Matrix z(qdot.size(), 1);
  z.col(0) = qdot;
  return JetPoint(x, q, z);
}

DegenerateSystemError::DegenerateSystemError(const std::string& what,
                                             MechState state,
                                             double min_singular_value,
                                             int stage)
    : std::runtime_error(what),
      state_(std::move(state)),
      min_singular_value_(min_singular_value),
      stage_(stage) {}

void require_mechanical(const LagrangianModel& model, const ConstraintSet& cs) {
  if (model.space.base_dim() != 1) {
    throw ConstructionError("mechanics needs a one-dimensional base, got n = " +
                            std::to_string(model.space.base_dim()));
  }
  if (!(model.space == cs.space)) {
    throw ConstructionError("Lagrangian and constraints live on different spaces");
  }
}

KktSystem assemble_kkt(const LagrangianModel& model, const ConstraintSet& cs,
                       const MechState& s) {
  require_mechanical(model, cs);
  if (s.q.size() != model.space.fiber_dim() ||
      s.qdot.size() != model.space.fiber_dim()) {
    throw ConstructionError("state dimension does not match the model");
  }
  const JetPoint p = s.jet();
  const DerivativeBundle d = eval_derivatives(model, p);
  const ConstraintDerivatives c = eval_constraint_derivatives(cs, p);

  KktSystem k;
  k.W = d.d2L_dzdz;
  k.A = c.dPhi_dz;
  k.F = d.dL_dy - d.d2L_dxdz.row(0).transpose() -
        d.d2L_dydz.transpose() * s.qdot;
  k.c = c.dPhi_dy * s.qdot + c.dPhi_dx.col(0);
  k.phi = c.phi;
  k.L = d.L;
  k.momentum = d.dL_dz;
  return k;
}

MultiplierSolution solve_kkt(const KktSystem& sys, const MechState& s,
                             double tol) {
  const Eigen::Index m = sys.W.rows();
  const Eigen::Index k = sys.A.rows();
  Matrix K = Matrix::Zero(m + k, m + k);
  K.topLeftCorner(m, m) = sys.W;
  K.topRightCorner(m, k) = -sys.A.transpose();
  K.bottomLeftCorner(k, m) = sys.A;
  Vector rhs(m + k);
  rhs << sys.F, -sys.c;

  Eigen::PartialPivLU<Matrix> lu(K);
  // The rcond estimator misses exactly zero pivots, so check those directly.
  const Vector pivots = lu.matrixLU().diagonal().cwiseAbs();
  const double rcond =
      pivots.size() == 0 ? 1.0
                         : std::min(lu.rcond(), pivots.minCoeff() / pivots.maxCoeff());
  if (!(rcond >= tol)) {
    const double smin = smallest_singular_value(K);
    std::ostringstream os;
    os.precision(6);
    os << "degenerate constraint system (reciprocal condition " << rcond
       << ", smallest singular value " << smin << ") at " << state_string(s);
    throw DegenerateSystemError(os.str(), s, smin);
  }
  Vector sol = lu.solve(rhs);
  // One round of iterative refinement.
  sol += lu.solve(rhs - K * sol);

  MultiplierSolution out;
  out.qddot = sol.head(m);
  out.lambda = sol.tail(k);
  out.kkt_residual = max_abs(K * sol - rhs);
  out.constraint_accel_residual = max_abs(sys.A * out.qddot + sys.c);
  return out;
}

MultiplierSolution multiplier_solve(const LagrangianModel& model,
                                    const ConstraintSet& cs,
                                    const MechState& s, double tol) {
  return solve_kkt(assemble_kkt(model, cs, s), s, tol);
}

double energy(const LagrangianModel& model, const MechState& s) {
  const JetPoint p = s.jet();
  const double L = model.density(p);
  Vector momentum;
  if (model.partials.dL_dz) {
    momentum = model.partials.dL_dz(p);
  } else {
    momentum = eval_derivatives(model, p).dL_dz;
  }
  return s.qdot.dot(momentum) - L;
}

MechState project_state(const ConstraintSet& cs, const MechState& s,
                        const ProjectionOptions& options, int& iterations) {
  iterations = 0;
  if (cs.count == 0) return s;
  const int m = static_cast<int>(s.qdot.size());
  std::vector<int> columns = options.adjustable;
  if (columns.empty()) {
    for (int i = 0; i < m; ++i) columns.push_back(i);
  }
  for (int c : columns) {
    if (c < 0 || c >= m) throw ConstructionError("adjustable index out of range");
  }

  MechState out = s;
  Vector phi = cs.evaluate(out.jet());
  while (max_abs(phi) > options.tol) {
    if (iterations >= options.max_iter) {
      std::ostringstream os;
      os << "velocity projection did not converge in " << options.max_iter
         << " iterations (max |Phi| = " << max_abs(phi) << ")";
      throw ProjectionError(os.str(), max_abs(phi));
    }
    const Matrix a_full = jacobian_z(cs, out.jet());
    Matrix a(a_full.rows(), static_cast<Eigen::Index>(columns.size()));
    for (std::size_t j = 0; j < columns.size(); ++j) {
      a.col(static_cast<Eigen::Index>(j)) = a_full.col(columns[j]);
    }
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(a);
    const Vector step = cod.solve(phi);
    for (std::size_t j = 0; j < columns.size(); ++j) {
      out.qdot(columns[j]) -= step(static_cast<Eigen::Index>(j));
    }
    ++iterations;
    const Vector next = cs.evaluate(out.jet());
    if (!(max_abs(next) < max_abs(phi)) && max_abs(next) > options.tol) {
      std::ostringstream os;
      os << "velocity projection stalled at max |Phi| = " << max_abs(next);
      throw ProjectionError(os.str(), max_abs(next));
    }
    phi = next;
  }
  return out;
}

MechState project_state(const ConstraintSet& cs, const MechState& s,
                        const ProjectionOptions& options) {
  int iterations = 0;
  return project_state(cs, s, options, iterations);
}

MechState step_rk4(const LagrangianModel& model, const ConstraintSet& cs,
                   const MechState& s, double h, double solve_tol,
                   const MultiplierSolution* first_stage) {
  if (!(h > 0.0)) throw ConstructionError("step size must be > 0");
  auto rate = [&](const MechState& st, int stage) {
    try {
      const Vector qddot = (stage == 0 && first_stage)
                               ? first_stage->qddot
                               : multiplier_solve(model, cs, st, solve_tol).qddot;
      return Derivative{st.qdot, qddot};
    } catch (const DegenerateSystemError& e) {
      throw DegenerateSystemError(
          std::string(e.what()) + " [RK4 stage " + std::to_string(stage) + "]",
          e.state(), e.min_singular_value(), stage);
    }
  };
  const Derivative k1 = rate(s, 0);
  const Derivative k2 = rate(advance(s, k1, 0.5 * h), 1);
  const Derivative k3 = rate(advance(s, k2, 0.5 * h), 2);
  const Derivative k4 = rate(advance(s, k3, h), 3);
  MechState out;
  out.t = s.t + h;
  out.q = s.q + (h / 6.0) * (k1.dq + 2.0 * k2.dq + 2.0 * k3.dq + k4.dq);
  out.qdot = s.qdot +
             (h / 6.0) * (k1.dqdot + 2.0 * k2.dqdot + 2.0 * k3.dqdot + k4.dqdot);
  return out;
}

double Trajectory::max_constraint_residual() const {
  double worst = 0.0;
  for (const auto& d : diagnostics) worst = std::max(worst, max_abs(d.phi));
  return worst;
}

double Trajectory::max_energy_deviation() const {
  if (diagnostics.empty()) return 0.0;
  const double e0 = diagnostics.front().energy;
  double worst = 0.0;
  for (const auto& d : diagnostics) worst = std::max(worst, std::abs(d.energy - e0));
  return worst;
}

Trajectory integrate(const LagrangianModel& model, const ConstraintSet& cs,
                     const MechState& s0, double h, double t_end,
                     const IntegrateOptions& options) {
  require_mechanical(model, cs);
  if (!(h > 0.0)) throw ConstructionError("step size must be > 0");
  if (!(t_end > 0.0)) throw ConstructionError("t_end must be > 0");
  if (options.record_every < 1) throw ConstructionError("record_every must be >= 1");
  const long long steps = std::llround(t_end / h);
  if (steps < 1) throw ConstructionError("t_end is shorter than one step");

  MechState s = s0;
  if (options.project_each_step) {
    s = project_state(cs, s, options.projection);
  } else {
    const double phi0 = max_abs(cs.evaluate(s.jet()));
    if (phi0 > options.consistency_tol) {
      std::ostringstream os;
      os << "initial state violates the constraints (max |Phi| = " << phi0
         << "); project it first";
      throw InconsistentStateError(os.str());
    }
  }

  Trajectory traj;
  const double t0 = s.t;
  for (long long step = 0;; ++step) {
    const KktSystem sys = assemble_kkt(model, cs, s);
    const MultiplierSolution sol = solve_kkt(sys, s, options.solve_tol);
    const double drift = max_abs(sys.phi);
    if (drift > options.drift_ceiling) {
      std::ostringstream os;
      os << "constraint drift " << drift << " exceeds ceiling "
         << options.drift_ceiling << " at t = " << s.t;
      throw DriftError(os.str(), s.t, drift);
    }
    if (step % options.record_every == 0 || step == steps) {
      traj.times.push_back(s.t);
      traj.states.push_back(s);
      traj.diagnostics.push_back(SampleDiagnostics{
          sys.phi, sol.lambda, sol.qddot, s.qdot.dot(sys.momentum) - sys.L,
          sol.kkt_residual});
    }
    if (step == steps) break;
    MechState next = step_rk4(model, cs, s, h, options.solve_tol, &sol);
    next.t = t0 + static_cast<double>(step + 1) * h;
    if (options.project_each_step) {
      next = project_state(cs, next, options.projection);
    }
    s = std::move(next);
  }
  return traj;
}

}  // namespace nhfield
