#include "nhfield/jet.hpp"
#include "nhfield/models.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace nhfield;

namespace {

JetPoint wave_point(double z0, double z1) {
  Matrix z(1, 2);
  z << z0, z1;
  return JetPoint((Vector(2) << 0.3, 0.7).finished(), Vector::Constant(1, 0.2), z);
}

JetPoint mech_point(const Vector& q, const Vector& qdot, double t = 0.0) {
  return JetPoint(Vector::Constant(1, t), q, Matrix(qdot));
}

JetPoint random_jet(const FiberedSpace& s, std::mt19937_64& rng, double lo = -1,
                    double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  JetPoint p = JetPoint::origin(s);
  for (auto& v : p.x.reshaped()) v = u(rng);
  for (auto& v : p.y.reshaped()) v = u(rng);
  for (auto& v : p.z.reshaped()) v = u(rng);
  return p;
}

// L = sum_i c_i y_i^2 + sum z^T Q z + y^T B z + x^T C z, no closures.
LagrangianModel random_quadratic(const FiberedSpace& s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  const int m = s.fiber_dim(), n = s.base_dim(), N = m * n;
  Matrix Q(N, N), B(m, N), C(n, N);
  Vector c(m);
  for (auto& v : Q.reshaped()) v = u(rng);
  for (auto& v : B.reshaped()) v = u(rng);
  for (auto& v : C.reshaped()) v = u(rng);
  for (auto& v : c) v = u(rng);
  LagrangianModel model;
  model.space = s;
  model.density = [=](const JetPoint& p) {
    const Vector z = p.z_flat();
    return c.dot(p.y.cwiseProduct(p.y)) + z.dot(Q * z) + p.y.dot(B * z) +
           p.x.dot(C * z);
  };
  return model;
}

}  // namespace

TEST(FiberedSpace, DimensionsAndFlattening) {
  FiberedSpace s({"t", "b"}, {"u", "v", "w"});
  EXPECT_EQ(s.base_dim(), 2);
  EXPECT_EQ(s.fiber_dim(), 3);
  EXPECT_EQ(s.jet_dim(), 6);
  EXPECT_EQ(s.jet_index(1, 0), 2);
  EXPECT_EQ(s.jet_index(2, 1), 5);
}

TEST(FiberedSpace, RejectsBadLabels) {
  EXPECT_THROW(FiberedSpace({}, {"u"}), ConstructionError);
  EXPECT_THROW(FiberedSpace({"t"}, {}), ConstructionError);
  EXPECT_THROW(FiberedSpace({"t"}, {"u", "u"}), ConstructionError);
}

TEST(JetPoint, FlatteningRoundTrip) {
  JetPoint p = JetPoint::origin(FiberedSpace::with_dims(2, 2));
  p.z << 1, 2, 3, 4;
  const Vector flat = p.z_flat();
  EXPECT_EQ(flat(1), 2.0);  // (i=0, mu=1)
  EXPECT_EQ(flat(2), 3.0);  // (i=1, mu=0)
  JetPoint q = JetPoint::origin(FiberedSpace::with_dims(2, 2));
  q.set_z_flat(flat);
  EXPECT_EQ(q.z, p.z);
}

TEST(EvalDerivatives, WaveQuadraticForm) {
  const LagrangianModel wave = wave_model();
  const DerivativeBundle d = eval_derivatives(wave, wave_point(0.4, -1.3));
  EXPECT_DOUBLE_EQ(d.dL_dz(0), 0.4);
  EXPECT_DOUBLE_EQ(d.dL_dz(1), 1.3);
  EXPECT_DOUBLE_EQ(d.d2L_dzdz(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(d.d2L_dzdz(1, 1), -1.0);
  EXPECT_DOUBLE_EQ(d.d2L_dzdz(0, 1), 0.0);
}

TEST(EvalDerivatives, Oscillator) {
  const LagrangianModel osc = oscillator_model(2.0, 3.0);
  const DerivativeBundle d =
      eval_derivatives(osc, mech_point(Vector::Constant(1, 1.0), Vector::Constant(1, 2.0)));
  EXPECT_DOUBLE_EQ(d.dL_dy(0), -3.0);
  EXPECT_DOUBLE_EQ(d.dL_dz(0), 4.0);
  EXPECT_DOUBLE_EQ(d.d2L_dzdz(0, 0), 2.0);

  const DerivativeBundle f = eval_derivatives_differenced(
      osc, mech_point(Vector::Constant(1, 1.0), Vector::Constant(1, 2.0)));
  EXPECT_NEAR(f.dL_dy(0), -3.0, 1e-8);
  EXPECT_NEAR(f.dL_dz(0), 4.0, 1e-8);
  EXPECT_NEAR(f.d2L_dzdz(0, 0), 2.0, 1e-7);
}

TEST(EvalDerivatives, TireHessianAtOrigin) {
  // T = 1/2 (m_x xdot^2 + I_k kdot^2 + I_th thdot^2): second derivatives by
  // hand are the inertias on (x, kappa, theta) and zero on (xi, phi).
  TireParams p;
  p.m_x = 1.7;
  p.I_kappa = 0.3;
  p.I_theta = 0.9;
  const MechanicalSystem tire = tire_model(p);
  const JetPoint o = JetPoint::origin(tire.lagrangian.space);
  Matrix expected = Matrix::Zero(5, 5);
  expected.diagonal() << 1.7, 0.3, 0.9, 0.0, 0.0;
  EXPECT_EQ(eval_derivatives(tire.lagrangian, o).d2L_dzdz, expected);
  EXPECT_LE((eval_derivatives_differenced(tire.lagrangian, o).d2L_dzdz - expected)
                .cwiseAbs()
                .maxCoeff(),
            1e-7);
}

TEST(EvalDerivatives, NonFiniteNamesProbe) {
  LagrangianModel bad;
  bad.space = FiberedSpace::with_dims(1, 1);
  bad.density = [](const JetPoint& p) { return std::log(p.y(0)); };
  JetPoint p = JetPoint::origin(bad.space);
  p.y(0) = 1e-7;  // the left probe at y - fd_step is negative
  try {
    eval_derivatives(bad, p);
    FAIL() << "expected EvaluationDomainError";
  } catch (const EvaluationDomainError& e) {
    EXPECT_NE(std::string(e.what()).find("y"), std::string::npos);
  }
}

TEST(EvalDerivatives, ShapeMismatchRejected) {
  EXPECT_THROW(eval_derivatives(wave_model(), mech_point(Vector::Zero(1), Vector::Zero(1))),
               ConstructionError);
}

TEST(EvalDerivatives, AnalyticClosureShapesChecked) {
  LagrangianModel m = oscillator_model(1.0, 1.0);
  m.partials.dL_dy = [](const JetPoint&) { return Vector::Zero(2).eval(); };
  EXPECT_THROW(eval_derivatives(m, mech_point(Vector::Zero(1), Vector::Zero(1))),
               ConstructionError);
}

TEST(EvalDerivatives, DifferencedExactOnQuadratics) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const FiberedSpace s = FiberedSpace::with_dims(1 + trial % 2, 1 + trial % 3);
    const LagrangianModel model = random_quadratic(s, rng);
    const JetPoint p = random_jet(s, rng, -3, 3);
    // Oracle: the closed-form partials of the quadratic, recovered by exact
    // polynomial identities rather than by differencing.
    const DerivativeBundle d = eval_derivatives(model, p);
    LagrangianModel scaled = model;
    const int N = s.jet_dim();
    for (int a = 0; a < N; ++a) {
      for (int b = 0; b < N; ++b) {
        // For a quadratic, L(z + e_a + e_b) - L(z + e_a) - L(z + e_b) + L(z)
        // equals the mixed second derivative exactly (a != b) or twice the
        // diagonal coefficient (a == b, using unit steps).
        JetPoint pa = p, pb = p, pab = p;
        Vector za = p.z_flat(), zb = za, zab = za;
        za(a) += 1.0;
        zb(b) += 1.0;
        zab(a) += 1.0;
        zab(b) += 1.0;
        pa.set_z_flat(za);
        pb.set_z_flat(zb);
        pab.set_z_flat(zab);
        double oracle = model(pab) - model(pa) - model(pb) + model(p);
        if (a == b) {
          JetPoint pm = p;
          Vector zm = p.z_flat();
          zm(a) -= 1.0;
          pm.set_z_flat(zm);
          oracle = model(pa) - 2.0 * model(p) + model(pm);
        }
        EXPECT_NEAR(d.d2L_dzdz(a, b), oracle, 1e-9 * std::max(1.0, std::abs(oracle)));
      }
    }
  }
}

TEST(EvalDerivatives, HessianSymmetry) {
  std::mt19937_64 rng(5);
  const MechanicalSystem tire = tire_model(TireParams{});
  for (int i = 0; i < 20; ++i) {
    const DerivativeBundle d =
        eval_derivatives(tire.lagrangian, random_jet(tire.lagrangian.space, rng));
    EXPECT_LE((d.d2L_dzdz - d.d2L_dzdz.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  }
  for (int i = 0; i < 20; ++i) {
    const FiberedSpace s = FiberedSpace::with_dims(2, 2);
    const LagrangianModel q = random_quadratic(s, rng);
    const DerivativeBundle d = eval_derivatives(q, random_jet(s, rng));
    // Differenced bound: a few units of the truncation/rounding scale.
    EXPECT_LE((d.d2L_dzdz - d.d2L_dzdz.transpose()).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(HessianRegularity, Examples) {
  const JetPoint osc_p = mech_point(Vector::Constant(1, 1.0), Vector::Constant(1, 2.0));
  const HessianRegularity osc = hessian_regularity(oscillator_model(2.0, 3.0), osc_p);
  EXPECT_TRUE(osc.regular);
  EXPECT_DOUBLE_EQ(osc.min_singular_value, 2.0);

  LagrangianModel linear;
  linear.space = FiberedSpace::with_dims(1, 1);
  linear.density = [](const JetPoint& p) { return p.z(0, 0); };
  const HessianRegularity lin = hessian_regularity(linear, osc_p);
  EXPECT_FALSE(lin.regular);
  EXPECT_NEAR(lin.min_singular_value, 0.0, 1e-9);

  const MechanicalSystem tire = tire_model(TireParams{});
  const HessianRegularity t =
      hessian_regularity(tire.lagrangian, JetPoint::origin(tire.lagrangian.space));
  EXPECT_FALSE(t.regular);
  int zeros = 0;
  for (double s : t.singular_values) zeros += s <= 1e-10 * t.max_singular_value;
  EXPECT_EQ(zeros, 2);

  EXPECT_TRUE(hessian_regularity(wave_model(), wave_point(1, 2)).regular);
  EXPECT_THROW(hessian_regularity(wave_model(), wave_point(1, 2), 0.0), ConstructionError);
}

TEST(HessianRegularity, ScaleInvariantFlag) {
  const MechanicalSystem tire = tire_model(TireParams{});
  const JetPoint p = JetPoint::origin(tire.lagrangian.space);
  for (const LagrangianModel& base : {wave_model(), tire.lagrangian}) {
    const JetPoint q = base.space.base_dim() == 2 ? wave_point(0.1, 0.2) : p;
    const bool flag = hessian_regularity(base, q).regular;
    for (double c : {1e-3, -1e-3, 0.5, -7.0, 1e3, -1e3}) {
      LagrangianModel scaled;
      scaled.space = base.space;
      scaled.density = [base, c](const JetPoint& j) { return c * base(j); };
      EXPECT_EQ(hessian_regularity(scaled, q).regular, flag) << c;
    }
  }
}

TEST(CheckDerivatives, ConsistentAndSabotaged) {
  std::mt19937_64 rng(3);
  const LagrangianModel osc = oscillator_model(2.0, 3.0);
  std::vector<JetPoint> probes;
  for (int i = 0; i < 10; ++i) probes.push_back(random_jet(osc.space, rng));
  EXPECT_TRUE(check_derivatives(osc, probes).passed);

  LagrangianModel bad = osc;
  bad.partials.dL_dy = [](const JetPoint& p) { return Vector::Constant(1, 3.0 * p.y(0)); };
  const DerivativeCheckReport r = check_derivatives(bad, probes);
  EXPECT_FALSE(r.passed);
  ASSERT_EQ(r.failures().size(), 1u);
  EXPECT_EQ(r.failures()[0], "dL_dy");

  EXPECT_THROW(check_derivatives(osc, {}), ConstructionError);
}

TEST(CheckDerivatives, TireAtRandomJets) {
  std::mt19937_64 rng(2024);
  const MechanicalSystem tire = tire_model(TireParams{});
  std::vector<JetPoint> probes;
  for (int i = 0; i < 100; ++i) probes.push_back(random_jet(tire.lagrangian.space, rng));
  const DerivativeCheckReport r = check_derivatives(tire.lagrangian, probes, 1e-6);
  EXPECT_TRUE(r.passed);
}
