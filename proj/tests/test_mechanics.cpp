#include "nhfield/mechanics.hpp"
#include "nhfield/models.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace nhfield;

namespace {

MechState state(double t, std::initializer_list<double> q,
                std::initializer_list<double> qdot) {
  MechState s;
  s.t = t;
  s.q = Eigen::Map<const Vector>(q.begin(), static_cast<Eigen::Index>(q.size()));
  s.qdot = Eigen::Map<const Vector>(qdot.begin(), static_cast<Eigen::Index>(qdot.size()));
  return s;
}

// Closed-form particle accelerations on Phi = zdot - y xdot = 0 with a
// potential 1/2 k y^2, from eliminating the multiplier by hand.
Vector particle_oracle(const MechState& s, double k = 0.0) {
  const double y = s.q(1), xd = s.qdot(0), yd = s.qdot(1);
  const double lambda = xd * yd / (1.0 + y * y);
  return (Vector(3) << -y * lambda, -k * y, lambda).finished();
}

MechState random_consistent_particle(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2, 2);
  MechState s = state(u(rng), {u(rng), u(rng), u(rng)}, {u(rng), u(rng), 0.0});
  s.qdot(2) = s.q(1) * s.qdot(0);
  return s;
}

}  // namespace

TEST(MultiplierSolve, UnconstrainedOscillator) {
  const LagrangianModel osc = oscillator_model(2.0, 3.0);
  const MultiplierSolution sol =
      multiplier_solve(osc, ConstraintSet::empty(osc.space), state(0, {1}, {0}));
  EXPECT_DOUBLE_EQ(sol.qddot(0), -1.5);
  EXPECT_EQ(sol.lambda.size(), 0);
}

TEST(MultiplierSolve, ParticleOracle) {
  const MechanicalSystem p = nonholonomic_particle();
  const MultiplierSolution sol =
      multiplier_solve(p.lagrangian, p.constraints, state(0, {0, 0, 0}, {1, 2, 0}));
  EXPECT_NEAR(sol.lambda(0), 2.0, 1e-14);
  EXPECT_LE((sol.qddot - Vector::Unit(3, 2) * 2.0).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LE(sol.kkt_residual, 1e-12);
  EXPECT_LE(sol.constraint_accel_residual, 1e-12);

  std::mt19937_64 rng(17);
  const MechanicalSystem pk = nonholonomic_particle(0.0, 1.3);
  for (int i = 0; i < 100; ++i) {
    const MechState s = random_consistent_particle(rng);
    EXPECT_LE((multiplier_solve(p.lagrangian, p.constraints, s).qddot -
               particle_oracle(s))
                  .cwiseAbs()
                  .maxCoeff(),
              1e-13);
    EXPECT_LE((multiplier_solve(pk.lagrangian, pk.constraints, s).qddot -
               particle_oracle(s, 1.3))
                  .cwiseAbs()
                  .maxCoeff(),
              1e-13);
  }
}

TEST(MultiplierSolve, TireMultiplierIdentities) {
  TireParams tp;
  const MechanicalSystem tire = tire_model(tp);
  MechState s = state(0, {0, 0.1, 0, 0.05, 0}, {0, 0, 0, 0, 0});
  ProjectionOptions opts;
  opts.adjustable = {tire::kXi, tire::kPhi};
  s = project_state(tire.constraints, s, opts);
  const MultiplierSolution sol = multiplier_solve(tire.lagrangian, tire.constraints, s);
  // lambda1 = dU/dxi = a xi + sigma N kappa = 0.1 + 0.3; lambda2 = dU/dphi = b phi.
  EXPECT_NEAR(sol.lambda(0), 0.4, 1e-14);
  EXPECT_NEAR(sol.lambda(1), 0.0, 1e-14);
}

TEST(MultiplierSolve, ResidualsAndOrthogonality) {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> nd;
  const MechanicalSystem p = nonholonomic_particle();
  for (int i = 0; i < 50; ++i) {
    const MechState s = random_consistent_particle(rng);
    const KktSystem sys = assemble_kkt(p.lagrangian, p.constraints, s);
    const MultiplierSolution sol = solve_kkt(sys, s);
    const Vector r1 = sys.W * sol.qddot - sys.A.transpose() * sol.lambda - sys.F;
    const Vector r2 = sys.A * sol.qddot + sys.c;
    EXPECT_LE(r1.cwiseAbs().maxCoeff(), 1e-10 * (1 + sys.F.cwiseAbs().maxCoeff()));
    EXPECT_LE(r2.cwiseAbs().maxCoeff(), 1e-10 * (1 + sys.c.cwiseAbs().maxCoeff()));
    const Matrix null = Eigen::FullPivLU<Matrix>(sys.A).kernel();
    for (int v = 0; v < 10; ++v) {
      const Vector w = null * Vector::NullaryExpr(null.cols(), [&] { return nd(rng); });
      EXPECT_LE(std::abs(w.dot(sys.W * sol.qddot - sys.F)),
                1e-10 * w.norm() * (1 + sys.F.cwiseAbs().maxCoeff()));
    }
  }
}

TEST(MultiplierSolve, DegenerateSystemCarriesState) {
  // Tire Lagrangian without its constraints: xi and phi have no inertia.
  const MechanicalSystem tire = tire_model(TireParams{});
  const MechState s = state(0.5, {0, 0, 0, 0.1, 0}, {0, 0, 0, 0, 0});
  try {
    multiplier_solve(tire.lagrangian, ConstraintSet::empty(tire.lagrangian.space), s);
    FAIL() << "expected DegenerateSystemError";
  } catch (const DegenerateSystemError& e) {
    EXPECT_EQ(e.state().t, 0.5);
    EXPECT_EQ(e.state().q, s.q);
    EXPECT_LE(e.min_singular_value(), 1e-12);
  }
}

TEST(MultiplierSolve, RejectsFieldModels) {
  const LagrangianModel wave = wave_model();
  EXPECT_THROW(multiplier_solve(wave, ConstraintSet::empty(wave.space), state(0, {0}, {0})),
               ConstructionError);
}

TEST(ProjectState, ConsistentStateUnchanged) {
  const MechanicalSystem p = nonholonomic_particle();
  const MechState s = state(0, {0, 1, 0}, {1, 0, 1});
  int iterations = -1;
  const MechState out = project_state(p.constraints, s, {}, iterations);
  EXPECT_EQ(iterations, 0);
  EXPECT_EQ(out.qdot, s.qdot);
  EXPECT_EQ(out.q, s.q);
}

TEST(ProjectState, TireXiViolation) {
  TireParams tp;
  const MechanicalSystem tire = tire_model(tp);
  MechState s = state(0, {0.2, 0.1, -0.1, 0.05, 0.03}, {0.1, 0.2, 0, 0, 0});
  // Make the state consistent by hand, then violate Phi1 by 0.3 through xidot.
  s.qdot(tire::kXi) = -s.qdot(0) - tp.V * s.q(2) - tp.V * s.q(4);
  s.qdot(tire::kPhi) = -s.qdot(2) + tp.alpha * tp.V * s.q(3) - tp.beta * tp.V * s.q(4) -
                       tp.gamma * tp.V * s.q(1);
  const MechState good = s;
  s.qdot(tire::kXi) += 0.3;
  ProjectionOptions opts;
  opts.adjustable = {tire::kXi, tire::kPhi};
  const MechState out = project_state(tire.constraints, s, opts);
  EXPECT_LE(tire.constraints.evaluate(out.jet()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(out.q, s.q);
  for (int i : {0, 1, 2}) EXPECT_EQ(out.qdot(i), s.qdot(i));
  EXPECT_NEAR(out.qdot(tire::kXi), good.qdot(tire::kXi), 1e-12);

  // Without a mask the minimum-norm step also moves xdot.
  const MechState free = project_state(tire.constraints, s);
  EXPECT_LE(tire.constraints.evaluate(free.jet()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NE(free.qdot(0), s.qdot(0));
}

TEST(ProjectState, AffineVelocityConstraint) {
  const FiberedSpace sp = FiberedSpace::with_dims(1, 1);
  AffineFormCoefficients c;
  c.constant.emplace_back();
  c.linear = {{[](const Vector&, const Vector&) { return 1.0; }}};
  const MechState out = project_state(affine_constraints(c, sp), state(0, {1}, {5}));
  EXPECT_EQ(out.qdot(0), 0.0);
}

TEST(ProjectState, FailureReportsResidual) {
  const FiberedSpace sp = FiberedSpace::with_dims(1, 1);
  ConstraintSet cs = ConstraintSet::empty(sp);
  cs.count = 1;
  cs.jacobians = {};
  cs.phi = [](const JetPoint& p) { return Vector::Constant(1, p.z(0, 0) * p.z(0, 0) + 1.0); };
  try {
    project_state(cs, state(0, {0}, {1}));
    FAIL() << "expected ProjectionError";
  } catch (const ProjectionError& e) {
    EXPECT_GE(e.residual(), 1.0);
  }
}

TEST(StepRk4, OscillatorMatchesExact) {
  const LagrangianModel osc = oscillator_model(2.0, 3.0);
  const double w = std::sqrt(1.5), h = 0.01;
  const MechState s1 =
      step_rk4(osc, ConstraintSet::empty(osc.space), state(0, {1}, {0}), h);
  EXPECT_NEAR(s1.q(0), std::cos(w * h), 1e-9);
  EXPECT_NEAR(s1.qdot(0), -w * std::sin(w * h), 1e-9);
  EXPECT_DOUBLE_EQ(s1.t, h);
}

TEST(StepRk4, EquilibriumIsFixed) {
  const MechanicalSystem p = nonholonomic_particle();
  const MechState s = state(0, {0.3, -0.2, 0.1}, {0, 0, 0});
  const MechState out = step_rk4(p.lagrangian, p.constraints, s, 0.1);
  EXPECT_EQ(out.q, s.q);
  EXPECT_EQ(out.qdot, s.qdot);
}

TEST(StepRk4, TireMatchesHandEliminatedRk4) {
  TireParams tp;
  const RegisteredModel tire = make_model("tire");
  const double h = 1e-3;
  const MechState s = tire.initial_state;
  const MechState a = step_rk4(tire.lagrangian, tire.constraints, s, h);
  // Classical RK4 on the closed ODE, written out here.
  auto f = [&](const Vector& y, double t) {
    MechState st{t, y.head(5), y.tail(5)};
    return tire_reference_rhs(tp, st, 1e-6);
  };
  Vector y(10);
  y << s.q, s.qdot;
  const Vector k1 = f(y, 0), k2 = f(y + 0.5 * h * k1, 0.5 * h),
               k3 = f(y + 0.5 * h * k2, 0.5 * h), k4 = f(y + h * k3, h);
  const Vector yn = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  EXPECT_LE((a.q - yn.head(5)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((a.qdot - yn.tail(5)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Integrate, OscillatorExact) {
  const LagrangianModel osc = oscillator_model(2.0, 3.0);
  const Trajectory tr = integrate(osc, ConstraintSet::empty(osc.space), state(0, {1}, {0}),
                                  1e-3, 10.0);
  ASSERT_EQ(tr.size(), 10001u);
  const double w = std::sqrt(1.5);
  double err = 0;
  for (std::size_t i = 0; i < tr.size(); ++i) {
    EXPECT_DOUBLE_EQ(tr.times[i], 1e-3 * static_cast<double>(i));
    err = std::max(err, std::abs(tr.states[i].q(0) - std::cos(w * tr.times[i])));
  }
  EXPECT_LE(err, 1e-7);
}

TEST(Integrate, ParticleConservesEnergyAndConstraint) {
  const RegisteredModel p = make_model("particle");
  const Trajectory tr = integrate(p.lagrangian, p.constraints, p.initial_state, 1e-3, 10.0);
  EXPECT_LE(tr.max_constraint_residual(), 1e-8);
  EXPECT_LE(tr.max_energy_deviation(), 1e-8);
}

TEST(Integrate, DriftOrderOnStiffParticle) {
  const RegisteredModel p = make_model("particle", {{"stiffness", 1.0}});
  double prev = 0.0;
  for (double h : {0.04, 0.02, 0.01}) {
    const double drift =
        integrate(p.lagrangian, p.constraints, p.initial_state, h, 10.0).max_constraint_residual();
    if (prev > 0.0) EXPECT_GE(prev / drift, 8.0) << h;
    prev = drift;
  }
}

TEST(Integrate, RecordEveryKeepsFinalSample) {
  const LagrangianModel osc = oscillator_model(1.0, 1.0);
  IntegrateOptions o;
  o.record_every = 3;
  const Trajectory tr =
      integrate(osc, ConstraintSet::empty(osc.space), state(2.0, {1}, {0}), 0.1, 1.0, o);
  ASSERT_EQ(tr.size(), 5u);  // steps 0, 3, 6, 9, 10
  EXPECT_DOUBLE_EQ(tr.times.front(), 2.0);
  EXPECT_NEAR(tr.times.back(), 3.0, 1e-15);
  EXPECT_NEAR(tr.times[1], 2.3, 1e-15);
}

TEST(Integrate, InconsistentStartRejectedUnlessProjecting) {
  const MechanicalSystem p = nonholonomic_particle();
  const MechState bad = state(0, {0, 1, 0}, {1, 0, 0});
  EXPECT_THROW(integrate(p.lagrangian, p.constraints, bad, 1e-2, 0.1), InconsistentStateError);
  IntegrateOptions o;
  o.project_each_step = true;
  const Trajectory tr = integrate(p.lagrangian, p.constraints, bad, 1e-2, 0.1, o);
  EXPECT_LE(tr.max_constraint_residual(), 1e-12);
}

TEST(Integrate, DriftCeilingAborts) {
  const RegisteredModel p = make_model("particle", {{"stiffness", 4.0}});
  IntegrateOptions o;
  o.drift_ceiling = 1e-9;
  EXPECT_THROW(integrate(p.lagrangian, p.constraints, p.initial_state, 0.1, 10.0, o), DriftError);
}

TEST(Integrate, InvalidStepRejected) {
  const LagrangianModel osc = oscillator_model(1.0, 1.0);
  EXPECT_THROW(integrate(osc, ConstraintSet::empty(osc.space), state(0, {1}, {0}), -1.0, 1.0),
               ConstructionError);
}

TEST(Energy, Definition) {
  const LagrangianModel osc = oscillator_model(2.0, 3.0);
  EXPECT_DOUBLE_EQ(energy(osc, state(0, {1}, {2})), 0.5 * 2 * 4 + 0.5 * 3);
}
