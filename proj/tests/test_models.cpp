#include "nhfield/cauchy.hpp"
#include "nhfield/models.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace nhfield;

namespace {

MechState consistent_tire_state(const TireParams& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  MechState s{u(rng), Vector(5), Vector(5)};
  for (auto& v : s.q) v = u(rng);
  for (auto& v : s.qdot) v = u(rng);
  s.qdot(tire::kXi) = -s.qdot(0) - p.V * s.q(2) - p.V * s.q(4);
  s.qdot(tire::kPhi) = -s.qdot(2) + p.alpha * p.V * s.q(3) - p.beta * p.V * s.q(4) -
                       p.gamma * p.V * s.q(1);
  return s;
}

// The closed tire ODE is linear; its 10 x 10 system matrix written out by hand.
Matrix tire_system_matrix(const TireParams& p) {
  Matrix M = Matrix::Zero(10, 10);
  M.topRightCorner(5, 5).setIdentity();
  enum { x, k, th, xi, ph };
  auto r = [](int i) { return 5 + i; };
  auto v = [](int i) { return 5 + i; };
  M(r(x), xi) = p.a / p.m_x;
  M(r(x), k) = p.sigma * p.N / p.m_x;
  M(r(k), k) = -p.rho * p.N / p.I_kappa;
  M(r(k), xi) = -p.sigma * p.N / p.I_kappa;
  M(r(th), ph) = p.b / p.I_theta;
  M.row(r(xi)) = -M.row(r(x));
  M(r(xi), v(th)) -= p.V;
  M(r(xi), v(ph)) -= p.V;
  M.row(r(ph)) = -M.row(r(th));
  M(r(ph), v(xi)) += p.alpha * p.V;
  M(r(ph), v(ph)) -= p.beta * p.V;
  M(r(ph), v(k)) -= p.gamma * p.V;
  return M;
}

std::vector<std::complex<double>> sorted_spectrum(const Matrix& M) {
  Eigen::EigenSolver<Matrix> es(M);
  std::vector<std::complex<double>> ev(es.eigenvalues().begin(), es.eigenvalues().end());
  return ev;
}

// Each eigenvalue of a has a partner in b within tol (multiset match).
bool same_spectrum(std::vector<std::complex<double>> a, std::vector<std::complex<double>> b,
                   double tol) {
  if (a.size() != b.size()) return false;
  for (const auto& z : a) {
    auto it = std::min_element(b.begin(), b.end(), [&](auto l, auto r) {
      return std::abs(l - z) < std::abs(r - z);
    });
    if (std::abs(*it - z) > tol) return false;
    b.erase(it);
  }
  return true;
}

}  // namespace

TEST(TireParams, Validation) {
  TireParams p;
  EXPECT_NO_THROW(p.validate());
  for (auto mutate : std::vector<std::function<void(TireParams&)>>{
           [](TireParams& q) { q.a = -1; }, [](TireParams& q) { q.b = 0; },
           [](TireParams& q) { q.V = -0.1; }, [](TireParams& q) { q.N = -1; },
           [](TireParams& q) { q.m_x = 0; }, [](TireParams& q) { q.I_theta = -2; },
           [](TireParams& q) { q.rho = std::nan(""); }}) {
    TireParams q;
    mutate(q);
    EXPECT_THROW(q.validate(), ConstructionError);
    EXPECT_THROW(tire_model(q), ConstructionError);
  }
  EXPECT_TRUE(p.elastic_matrix_psd());  // 2 * 5 >= 3^2
  p.sigma = 0.5;
  EXPECT_FALSE(p.elastic_matrix_psd());
}

TEST(TireModel, PotentialAndRows) {
  TireParams p;
  p.a = 3.7;
  Vector q = Vector::Zero(5);
  q(tire::kXi) = 1.0;
  EXPECT_DOUBLE_EQ(tire_potential(p, q), 0.5 * 3.7);
  q << 0, 0.2, 0, -0.4, 0.3;
  EXPECT_NEAR(tire_potential(p, q),
              0.5 * (3.7 * 0.16 + 1.0 * 0.09 + 0.5 * 10 * 0.04 + 2 * 0.3 * 10 * -0.08),
              1e-15);
}

TEST(TireModel, HessianDegenerateConstraintsIndependent) {
  const MechanicalSystem t = tire_model(TireParams{});
  const JetPoint o = JetPoint::origin(t.lagrangian.space);
  const HessianRegularity h = hessian_regularity(t.lagrangian, o);
  EXPECT_FALSE(h.regular);
  EXPECT_EQ((h.singular_values.array() <= 1e-10 * h.max_singular_value).count(), 2);
  EXPECT_TRUE(constraint_regularity(t.constraints, o).independent);
}

TEST(TireReference, OriginHasNoElasticForces) {
  TireParams p;
  MechState s{0, Vector::Zero(5), Vector::Zero(5)};
  s.qdot(0) = 0.3;
  s.qdot(tire::kXi) = -0.3;
  const TireClosedForm cf = tire_reference_solution(p, s);
  EXPECT_EQ(cf.qddot(0), 0.0);
  EXPECT_EQ(cf.qddot(tire::kTheta), 0.0);
  EXPECT_EQ(cf.qddot(tire::kKappa), 0.0);
}

TEST(TireReference, LambdaOneSubstitution) {
  TireParams p;
  MechState s{0, Vector::Zero(5), Vector::Zero(5)};
  s.q(tire::kXi) = 0.05;
  s.q(tire::kKappa) = 0.1;
  s.qdot(tire::kPhi) = -p.gamma * p.V * 0.1 + p.alpha * p.V * 0.05;
  const TireClosedForm cf = tire_reference_solution(p, s);
  EXPECT_NEAR(cf.lambda(0), 0.4, 1e-15);
  const MechanicalSystem t = tire_model(p);
  EXPECT_NEAR(multiplier_solve(t.lagrangian, t.constraints, s).lambda(0), 0.4, 1e-14);
}

TEST(TireReference, AgreesWithGenericSolve) {
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    TireParams p;
    if (trial % 2) {
      p.a = u(rng);
      p.V = u(rng);
      p.m_x = u(rng);
      p.I_kappa = u(rng);
    }
    const MechanicalSystem t = tire_model(p);
    const MechState s = consistent_tire_state(p, rng);
    const MultiplierSolution g = multiplier_solve(t.lagrangian, t.constraints, s);
    const TireClosedForm cf = tire_reference_solution(p, s);
    const double scale = std::max(1.0, cf.qddot.cwiseAbs().maxCoeff());
    EXPECT_LE((g.qddot - cf.qddot).cwiseAbs().maxCoeff(), 1e-12 * scale);
    EXPECT_LE((g.lambda - cf.lambda).cwiseAbs().maxCoeff(),
              1e-12 * std::max(1.0, cf.lambda.cwiseAbs().maxCoeff()));
  }
}

TEST(TireReference, InconsistentStateRejected) {
  TireParams p;
  MechState s{0, Vector::Zero(5), Vector::Zero(5)};
  s.qdot(0) = 1e-6;
  EXPECT_THROW(tire_reference_rhs(p, s), InconsistentStateError);
}

TEST(TireLinearize, MatchesHandAssembledMatrix) {
  for (double V : {0.0, 1.0, 2.5}) {
    TireParams p;
    p.V = V;
    EXPECT_TRUE(same_spectrum(tire_linearize(p), sorted_spectrum(tire_system_matrix(p)), 1e-6))
        << V;
  }
  const auto ev = tire_linearize(TireParams{});
  for (std::size_t i = 1; i < ev.size(); ++i) EXPECT_GE(ev[i - 1].real(), ev[i].real() - 1e-12);
}

TEST(TireLinearize, ZeroVelocityDecouples) {
  TireParams p;
  p.V = 0.0;
  // With V = 0 the constraints reduce to xidot = -xdot and phidot = -thetadot.
  // The spectrum is then on the imaginary axis and holds the theta/phi pair
  // with omega^2 = b / I_theta.
  const auto ev = tire_linearize(p);
  const double w_theta = std::sqrt(p.b / p.I_theta);
  bool found = false;
  for (const auto& z : ev) {
    EXPECT_NEAR(z.real(), 0.0, 1e-6);
    found |= std::abs(std::abs(z.imag()) - w_theta) < 1e-6;
  }
  EXPECT_TRUE(found);
  int zeros = 0;
  for (const auto& z : ev) zeros += std::abs(z) < 1e-6;
  EXPECT_GE(zeros, 4);  // x and theta drift modes (each a Jordan pair)
}

TEST(TireLinearize, StabilityFlagScaleInvariant) {
  for (double c : {0.1, 0.5, 2.0, 10.0}) {
    for (double V : {0.5, 1.0, 3.0}) {
      TireParams p;
      p.V = V;
      TireParams q = p;
      q.a *= c;
      q.b *= c;
      q.N *= c;  // scales rho N and sigma N together
      q.m_x *= c;
      q.I_kappa *= c;
      q.I_theta *= c;
      EXPECT_EQ(tire_max_growth_rate(p) > 1e-9, tire_max_growth_rate(q) > 1e-9) << c << " " << V;
    }
  }
}

TEST(TireLinearize, LoadCouplingChangesSpectrum) {
  TireParams p;
  TireParams q = p;
  q.N *= 2.0;
  const auto a = tire_linearize(p), b = tire_linearize(q);
  double diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  EXPECT_GE(diff, 1e-6);
}

TEST(TireTrajectory, MatchesOracleAndLocksMultipliers) {
  TireParams p;
  const RegisteredModel t = make_model("tire");
  const Trajectory tr = integrate(t.lagrangian, t.constraints, t.initial_state, 1e-3, 10.0);
  const Trajectory ref = tire_reference_trajectory(p, t.initial_state, 1e-3, 10.0);
  ASSERT_EQ(tr.size(), ref.size());
  double err = 0, lam = 0;
  for (std::size_t i = 0; i < tr.size(); ++i) {
    err = std::max(err, (tr.states[i].q - ref.states[i].q).cwiseAbs().maxCoeff());
    err = std::max(err, (tr.states[i].qdot - ref.states[i].qdot).cwiseAbs().maxCoeff());
    const Vector& q = tr.states[i].q;
    const Vector& l = tr.diagnostics[i].lambda;
    lam = std::max(lam, std::abs(l(0) - (p.a * q(tire::kXi) + p.sigma * p.N * q(tire::kKappa))));
    lam = std::max(lam, std::abs(l(1) - p.b * q(tire::kPhi)));
  }
  EXPECT_LE(err, 1e-6);
  EXPECT_LE(lam, 1e-10);
  EXPECT_LE(tr.max_constraint_residual(), 1e-8);
}

TEST(Oscillator, Derivatives) {
  const LagrangianModel o = oscillator_model(2.0, 3.0);
  JetPoint p = JetPoint::origin(o.space);
  p.y(0) = 2.0;
  p.z(0, 0) = 1.0;
  EXPECT_DOUBLE_EQ(o(p), 1.0 - 6.0);
}

TEST(WaveModel, Basics) {
  const LagrangianModel w = wave_model();
  JetPoint p = JetPoint::origin(w.space);
  p.z << 0.7, 0.7;
  EXPECT_EQ(w(p), 0.0);
  p.z << 0.7, -0.7;
  EXPECT_EQ(w(p), 0.0);
  const HessianRegularity h = hessian_regularity(w, p);
  EXPECT_TRUE(h.regular);
  EXPECT_EQ(eval_derivatives(w, p).d2L_dzdz, (Matrix(2, 2) << 1, 0, 0, -1).finished());
}

TEST(WaveModel, EulerLagrangeResidualOfTravelingWave) {
  // EL = d/dt(z0) - d/db(z1) evaluated by differencing an exact traveling
  // wave u = sin(b - t) through the model's momenta.
  const LagrangianModel w = wave_model();
  auto jet = [](double t, double b) {
    Matrix z(1, 2);
    z << -std::cos(b - t), std::cos(b - t);
    return JetPoint((Vector(2) << t, b).finished(), Vector::Constant(1, std::sin(b - t)), z);
  };
  const double h = 1e-4;
  for (double b : {0.1, 1.3, 2.9}) {
    const double t = 0.4;
    const double dp0 = (eval_derivatives(w, jet(t + h, b)).dL_dz(0) -
                        eval_derivatives(w, jet(t - h, b)).dL_dz(0)) / (2 * h);
    const double dp1 = (eval_derivatives(w, jet(t, b + h)).dL_dz(1) -
                        eval_derivatives(w, jet(t, b - h)).dL_dz(1)) / (2 * h);
    EXPECT_NEAR(dp0 + dp1 - eval_derivatives(w, jet(t, b)).dL_dy(0), 0.0, 1e-7);
  }
}

TEST(ScalarConstrained, JacobianRow) {
  const FieldSystem f = scalar_constrained_model(0.5);
  const Matrix a = jacobian_z(f.constraints, JetPoint::origin(f.constraints.space));
  EXPECT_EQ(a, (Matrix(1, 4) << 1, 0, 0, -0.5).finished());
}

TEST(ScalarConstrained, ZeroCouplingFreezesFirstField) {
  const FieldSystem f = scalar_constrained_model(0.0);
  const int N = 16;
  CauchySystem sys(f.lagrangian, f.constraints, CauchyGrid::periodic(1.0, N));
  CauchyState s{0, Matrix(2, N), Matrix::Zero(2, N)};
  for (int j = 0; j < N; ++j) {
    const double b = sys.grid().position(j);
    s.Y(0, j) = std::cos(2 * M_PI * b);
    s.Y(1, j) = std::sin(2 * M_PI * b);
    s.V(1, j) = 0.5 * std::cos(4 * M_PI * b);
  }
  const FieldTrajectory tr = evolve_field(sys, s, 1e-3, 0.5);
  double dev = 0;
  for (const CauchyState& c : tr.states) {
    dev = std::max(dev, (c.Y.row(0) - s.Y.row(0)).cwiseAbs().maxCoeff());
  }
  EXPECT_LE(dev, 1e-10);
}

TEST(Registry, NamesDefaultsAndOverrides) {
  const auto names = model_names();
  for (const char* n : {"tire", "particle", "oscillator", "wave", "scalar-constrained"}) {
    EXPECT_NE(std::find(names.begin(), names.end(), n), names.end()) << n;
    EXPECT_NO_THROW(make_model(n));
  }
  EXPECT_THROW(make_model("bicycle"), ConstructionError);
  EXPECT_THROW(make_model("tire", {{"q", 1.0}}), ConstructionError);
  EXPECT_THROW(make_model("tire", {{"a", -1.0}}), ConstructionError);
  const RegisteredModel t = make_model("tire", {{"V", 2.0}});
  EXPECT_EQ(t.parameters.at("V"), 2.0);
  EXPECT_TRUE(t.degenerate_hessian_expected);
  EXPECT_LE(t.constraints.evaluate(t.initial_state.jet()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(make_model("wave").kind, ModelKind::Field);
}
