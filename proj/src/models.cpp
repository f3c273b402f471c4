#include "nhfield/models.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace nhfield {

namespace {

void require_finite(double v, const char* name) {
  if (!std::isfinite(v)) {
    throw ConstructionError(std::string("tire parameter ") + name +
                            " must be finite");
  }
}

// Hand-eliminated tire dynamics without the consistency check.
TireClosedForm tire_closed_form(const TireParams& p, const Vector& q,
                                const Vector& v) {
  using namespace tire;
  const double V = p.V;
  TireClosedForm out;
  out.lambda.resize(2);
  out.lambda(0) = p.a * q(kXi) + p.sigma * p.N * q(kKappa);
  out.lambda(1) = p.b * q(kPhi);
  out.qddot.resize(5);
  out.qddot(kX) = out.lambda(0) / p.m_x;
  out.qddot(kTheta) = out.lambda(1) / p.I_theta;
  out.qddot(kKappa) =
      -(p.rho * p.N * q(kKappa) + p.sigma * p.N * q(kXi)) / p.I_kappa;
  out.qddot(kXi) = -out.qddot(kX) - V * v(kTheta) - V * v(kPhi);
  out.qddot(kPhi) = -out.qddot(kTheta) + p.alpha * V * v(kXi) -
                    p.beta * V * v(kPhi) - p.gamma * V * v(kKappa);
  return out;
}

Vector tire_constraint_values(const TireParams& p, const Vector& q,
                              const Vector& v) {
  using namespace tire;
  Vector phi(2);
  phi(0) = v(kX) + v(kXi) + p.V * q(kTheta) + p.V * q(kPhi);
  phi(1) = v(kTheta) + v(kPhi) - p.alpha * p.V * q(kXi) +
           p.beta * p.V * q(kPhi) + p.gamma * p.V * q(kKappa);
  return phi;
}

std::map<std::string, double> tire_defaults() {
  const TireParams d;
  return {{"a", d.a},         {"b", d.b},           {"rho", d.rho},
          {"sigma", d.sigma}, {"N", d.N},           {"V", d.V},
          {"alpha", d.alpha}, {"beta", d.beta},     {"gamma", d.gamma},
          {"m_x", d.m_x},     {"I_kappa", d.I_kappa}, {"I_theta", d.I_theta},
          // Initial deformation of the default run.
          {"kappa0", 0.1},    {"xi0", 0.05},        {"xdot0", 0.0}};
}

TireParams tire_from(const std::map<std::string, double>& v) {
  TireParams p;
  p.a = v.at("a");
  p.b = v.at("b");
  p.rho = v.at("rho");
  p.sigma = v.at("sigma");
  p.N = v.at("N");
  p.V = v.at("V");
  p.alpha = v.at("alpha");
  p.beta = v.at("beta");
  p.gamma = v.at("gamma");
  p.m_x = v.at("m_x");
  p.I_kappa = v.at("I_kappa");
  p.I_theta = v.at("I_theta");
  return p;
}

}  // namespace

void TireParams::validate() const {
  const std::pair<double, const char*> all[] = {
      {a, "a"},         {b, "b"},       {rho, "rho"},         {sigma, "sigma"},
      {N, "N"},         {V, "V"},       {alpha, "alpha"},     {beta, "beta"},
      {gamma, "gamma"}, {m_x, "m_x"},   {I_kappa, "I_kappa"}, {I_theta, "I_theta"}};
  for (const auto& [value, name] : all) require_finite(value, name);
  if (V < 0.0) throw ConstructionError("tire parameter V must be >= 0");
  if (N < 0.0) throw ConstructionError("tire parameter N must be >= 0");
  if (!(a > 0.0)) throw ConstructionError("tire parameter a must be > 0");
  if (!(b > 0.0)) throw ConstructionError("tire parameter b must be > 0");
  if (!(m_x > 0.0) || !(I_kappa > 0.0) || !(I_theta > 0.0)) {
    throw ConstructionError("tire inertias must be > 0");
  }
}

bool TireParams::elastic_matrix_psd() const {
  const double off = sigma * N;
  const double diag = rho * N;
  return a >= 0.0 && diag >= 0.0 && a * diag - off * off >= 0.0;
}

double tire_potential(const TireParams& p, const Vector& q) {
  using namespace tire;
  const double xi = q(kXi);
  const double phi = q(kPhi);
  const double kappa = q(kKappa);
  return 0.5 * (p.a * xi * xi + p.b * phi * phi + p.rho * p.N * kappa * kappa +
                2.0 * p.sigma * p.N * xi * kappa);
}

MechanicalSystem tire_model(const TireParams& p) {
  p.validate();
  using namespace tire;
  const FiberedSpace space({"t"}, {"x", "kappa", "theta", "xi", "phi"});

  LagrangianModel lag;
  lag.space = space;
  const Vector inertia =
      (Vector(5) << p.m_x, p.I_kappa, p.I_theta, 0.0, 0.0).finished();
  lag.density = [p, inertia](const JetPoint& j) {
    const Vector v = j.z.col(0);
    return 0.5 * v.dot(inertia.cwiseProduct(v)) - tire_potential(p, j.y);
  };
  lag.partials.dL_dy = [p](const JetPoint& j) {
    Vector g = Vector::Zero(5);
    g(kKappa) = -(p.rho * p.N * j.y(kKappa) + p.sigma * p.N * j.y(kXi));
    g(kXi) = -(p.a * j.y(kXi) + p.sigma * p.N * j.y(kKappa));
    g(kPhi) = -p.b * j.y(kPhi);
    return g;
  };
  lag.partials.dL_dz = [inertia](const JetPoint& j) {
    return Vector(inertia.cwiseProduct(j.z.col(0)));
  };
  lag.partials.d2L_dzdz = [inertia](const JetPoint&) {
    return Matrix(inertia.asDiagonal());
  };
  lag.partials.d2L_dydz = [](const JetPoint&) { return Matrix(Matrix::Zero(5, 5)); };
  lag.partials.d2L_dxdz = [](const JetPoint&) { return Matrix(Matrix::Zero(1, 5)); };

  AffineFormCoefficients coeffs;
  const double V = p.V;
  coeffs.constant.push_back(
      [V](const Vector&, const Vector& y) { return V * y(kTheta) + V * y(kPhi); });
  coeffs.constant.push_back([p](const Vector&, const Vector& y) {
    return -p.alpha * p.V * y(kXi) + p.beta * p.V * y(kPhi) +
           p.gamma * p.V * y(kKappa);
  });
  auto one = [](const Vector&, const Vector&) { return 1.0; };
  coeffs.linear.assign(2, std::vector<CoefficientField>(5));
  coeffs.linear[0][kX] = one;
  coeffs.linear[0][kXi] = one;
  coeffs.linear[1][kTheta] = one;
  coeffs.linear[1][kPhi] = one;
  ConstraintSet cs = affine_constraints(coeffs, space);
  // Exact position jacobian of the constant terms.
  cs.jacobians.dPhi_dy = [p](const JetPoint&) {
    Matrix d = Matrix::Zero(2, 5);
    d(0, kTheta) = p.V;
    d(0, kPhi) = p.V;
    d(1, kXi) = -p.alpha * p.V;
    d(1, kPhi) = p.beta * p.V;
    d(1, kKappa) = p.gamma * p.V;
    return d;
  };
  cs.jacobians.dPhi_dx = [](const JetPoint&) { return Matrix(Matrix::Zero(2, 1)); };
  return MechanicalSystem{std::move(lag), std::move(cs)};
}

TireClosedForm tire_reference_solution(const TireParams& p, const MechState& s,
                                       double consistency_tol) {
  if (s.q.size() != 5 || s.qdot.size() != 5) {
    throw ConstructionError("tire state must have 5 coordinates");
  }
  const Vector phi = tire_constraint_values(p, s.q, s.qdot);
  const double worst = phi.cwiseAbs().maxCoeff();
  if (worst > consistency_tol) {
    std::ostringstream os;
    os << "tire state violates the rolling constraints (max |Phi| = " << worst
       << ")";
    throw InconsistentStateError(os.str());
  }
  return tire_closed_form(p, s.q, s.qdot);
}

Vector tire_reference_rhs(const TireParams& p, const MechState& s,
                          double consistency_tol) {
  const TireClosedForm sol = tire_reference_solution(p, s, consistency_tol);
  Vector out(10);
  out << s.qdot, sol.qddot;
  return out;
}

Trajectory tire_reference_trajectory(const TireParams& p, const MechState& s0,
                                     double h, double t_end) {
  p.validate();
  const long long steps = std::llround(t_end / h);
  auto rhs = [&p](const Vector& q, const Vector& v) {
    Vector out(10);
    out << v, tire_closed_form(p, q, v).qddot;
    return out;
  };
  Trajectory traj;
  Vector state(10);
  state << s0.q, s0.qdot;
  auto record = [&](double t) {
    MechState s{t, state.head(5), state.tail(5)};
    const TireClosedForm cf = tire_closed_form(p, s.q, s.qdot);
    const double e = 0.5 * (p.m_x * s.qdot(0) * s.qdot(0) +
                            p.I_kappa * s.qdot(1) * s.qdot(1) +
                            p.I_theta * s.qdot(2) * s.qdot(2)) +
                     tire_potential(p, s.q);
    traj.times.push_back(t);
    traj.states.push_back(s);
    traj.diagnostics.push_back(SampleDiagnostics{
        tire_constraint_values(p, s.q, s.qdot), cf.lambda, cf.qddot, e, 0.0});
  };
  record(s0.t);
  for (long long k = 0; k < steps; ++k) {
    const Vector k1 = rhs(state.head(5), state.tail(5));
    const Vector x2 = state + 0.5 * h * k1;
    const Vector k2 = rhs(x2.head(5), x2.tail(5));
    const Vector x3 = state + 0.5 * h * k2;
    const Vector k3 = rhs(x3.head(5), x3.tail(5));
    const Vector x4 = state + h * k3;
    const Vector k4 = rhs(x4.head(5), x4.tail(5));
    state += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    record(s0.t + static_cast<double>(k + 1) * h);
  }
  return traj;
}

std::vector<std::complex<double>> tire_linearize(const TireParams& p) {
  // The closed equations are linear in (q, qdot); differencing at the origin
  // recovers the system matrix exactly up to rounding.
  Matrix J(10, 10);
  const double h = 1e-3;
  for (int c = 0; c < 10; ++c) {
    Vector plus = Vector::Zero(10);
    Vector minus = Vector::Zero(10);
    plus(c) = h;
    minus(c) = -h;
    Vector fp(10), fm(10);
    fp << plus.tail(5), tire_closed_form(p, plus.head(5), plus.tail(5)).qddot;
    fm << minus.tail(5), tire_closed_form(p, minus.head(5), minus.tail(5)).qddot;
    J.col(c) = (fp - fm) / (2.0 * h);
  }
  Eigen::EigenSolver<Matrix> es(J, false);
  std::vector<std::complex<double>> ev(es.eigenvalues().begin(),
                                       es.eigenvalues().end());
  std::sort(ev.begin(), ev.end(), [](const auto& l, const auto& r) {
    if (l.real() != r.real()) return l.real() > r.real();
    return l.imag() > r.imag();
  });
  return ev;
}

double tire_max_growth_rate(const TireParams& p) {
  return tire_linearize(p).front().real();
}

LagrangianModel oscillator_model(double mass, double stiffness) {
  LagrangianModel lag;
  lag.space = FiberedSpace({"t"}, {"y"});
  lag.density = [mass, stiffness](const JetPoint& j) {
    const double v = j.z(0, 0);
    return 0.5 * mass * v * v - 0.5 * stiffness * j.y(0) * j.y(0);
  };
  lag.partials.dL_dy = [stiffness](const JetPoint& j) {
    return Vector::Constant(1, -stiffness * j.y(0)).eval();
  };
  lag.partials.dL_dz = [mass](const JetPoint& j) {
    return Vector::Constant(1, mass * j.z(0, 0)).eval();
  };
  lag.partials.d2L_dzdz = [mass](const JetPoint&) {
    return Matrix::Constant(1, 1, mass).eval();
  };
  lag.partials.d2L_dydz = [](const JetPoint&) { return Matrix::Zero(1, 1).eval(); };
  lag.partials.d2L_dxdz = [](const JetPoint&) { return Matrix::Zero(1, 1).eval(); };
  return lag;
}

MechanicalSystem nonholonomic_particle(double offset, double stiffness) {
  const FiberedSpace space({"t"}, {"x", "y", "z"});
  LagrangianModel lag;
  lag.space = space;
  lag.density = [stiffness](const JetPoint& j) {
    return 0.5 * j.z.col(0).squaredNorm() - 0.5 * stiffness * j.y(1) * j.y(1);
  };
  lag.partials.dL_dy = [stiffness](const JetPoint& j) {
    Vector d = Vector::Zero(3);
    d(1) = -stiffness * j.y(1);
    return d;
  };
  lag.partials.dL_dz = [](const JetPoint& j) { return Vector(j.z.col(0)); };
  lag.partials.d2L_dzdz = [](const JetPoint&) { return Matrix::Identity(3, 3).eval(); };
  lag.partials.d2L_dydz = [](const JetPoint&) { return Matrix::Zero(3, 3).eval(); };
  lag.partials.d2L_dxdz = [](const JetPoint&) { return Matrix::Zero(1, 3).eval(); };

  AffineFormCoefficients coeffs;
  if (offset != 0.0) {
    coeffs.constant.push_back([offset](const Vector&, const Vector&) { return offset; });
  } else {
    coeffs.constant.emplace_back();
  }
  coeffs.linear.assign(1, std::vector<CoefficientField>(3));
  coeffs.linear[0][0] = [](const Vector&, const Vector& y) { return -y(1); };
  coeffs.linear[0][2] = [](const Vector&, const Vector&) { return 1.0; };
  ConstraintSet cs = affine_constraints(coeffs, space);
  cs.jacobians.dPhi_dy = [](const JetPoint& j) {
    Matrix d = Matrix::Zero(1, 3);
    d(0, 1) = -j.z(0, 0);
    return d;
  };
  cs.jacobians.dPhi_dx = [](const JetPoint&) { return Matrix::Zero(1, 1).eval(); };
  return MechanicalSystem{std::move(lag), std::move(cs)};
}

LagrangianModel wave_model() {
  LagrangianModel lag;
  lag.space = FiberedSpace({"t", "b"}, {"u"});
  lag.density = [](const JetPoint& j) {
    return 0.5 * (j.z(0, 0) * j.z(0, 0) - j.z(0, 1) * j.z(0, 1));
  };
  lag.partials.dL_dy = [](const JetPoint&) { return Vector::Zero(1).eval(); };
  lag.partials.dL_dz = [](const JetPoint& j) {
    return (Vector(2) << j.z(0, 0), -j.z(0, 1)).finished();
  };
  lag.partials.d2L_dzdz = [](const JetPoint&) {
    return (Matrix(2, 2) << 1.0, 0.0, 0.0, -1.0).finished();
  };
  lag.partials.d2L_dydz = [](const JetPoint&) { return Matrix::Zero(1, 2).eval(); };
  lag.partials.d2L_dxdz = [](const JetPoint&) { return Matrix::Zero(2, 2).eval(); };
  return lag;
}

FieldSystem scalar_constrained_model(double c) {
  const FiberedSpace space({"t", "b"}, {"u1", "u2"});
  LagrangianModel lag;
  lag.space = space;
  const Vector signs = (Vector(4) << 1.0, -1.0, 1.0, -1.0).finished();
  lag.density = [signs](const JetPoint& j) {
    const Vector z = j.z_flat();
    return 0.5 * z.dot(signs.cwiseProduct(z));
  };
  lag.partials.dL_dy = [](const JetPoint&) { return Vector::Zero(2).eval(); };
  lag.partials.dL_dz = [signs](const JetPoint& j) {
    return Vector(signs.cwiseProduct(j.z_flat()));
  };
  lag.partials.d2L_dzdz = [signs](const JetPoint&) {
    return Matrix(signs.asDiagonal());
  };
  lag.partials.d2L_dydz = [](const JetPoint&) { return Matrix::Zero(2, 4).eval(); };
  lag.partials.d2L_dxdz = [](const JetPoint&) { return Matrix::Zero(2, 4).eval(); };

  AffineFormCoefficients coeffs;
  coeffs.constant.emplace_back();
  coeffs.linear.assign(1, std::vector<CoefficientField>(4));
  coeffs.linear[0][space.jet_index(0, 0)] = [](const Vector&, const Vector&) {
    return 1.0;
  };
  if (c != 0.0) {
    coeffs.linear[0][space.jet_index(1, 1)] = [c](const Vector&, const Vector&) {
      return -c;
    };
  }
  return FieldSystem{std::move(lag), affine_constraints(coeffs, space)};
}

std::vector<std::string> model_names() {
  return {"tire", "particle", "oscillator", "wave", "scalar-constrained"};
}

std::map<std::string, double> default_parameters(const std::string& name) {
  if (name == "tire") return tire_defaults();
  if (name == "particle") {
    return {{"offset", 0.0}, {"stiffness", 0.0}, {"xdot0", 1.0}, {"ydot0", 2.0}};
  }
  if (name == "oscillator") {
    return {{"mass", 2.0}, {"stiffness", 3.0}, {"y0", 1.0}, {"ydot0", 0.0}};
  }
  if (name == "wave") return {{"amplitude", 1.0}, {"mode", 1.0}};
  if (name == "scalar-constrained") {
    return {{"c", 0.5}, {"amplitude", 1.0}, {"mode", 1.0}};
  }
  throw ConstructionError("unknown model '" + name + "'");
}

RegisteredModel make_model(const std::string& name,
                           const std::map<std::string, double>& overrides) {
  std::map<std::string, double> params = default_parameters(name);
  for (const auto& [key, value] : overrides) {
    auto it = params.find(key);
    if (it == params.end()) {
      throw ConstructionError("model '" + name + "' has no parameter '" + key + "'");
    }
    if (!std::isfinite(value)) {
      throw ConstructionError("parameter '" + key + "' must be finite");
    }
    it->second = value;
  }

  RegisteredModel out;
  out.name = name;
  out.parameters = params;
  if (name == "tire") {
    const TireParams p = tire_from(params);
    MechanicalSystem sys = tire_model(p);
    using namespace tire;
    MechState s0{0.0, Vector::Zero(5), Vector::Zero(5)};
    s0.q(kKappa) = params.at("kappa0");
    s0.q(kXi) = params.at("xi0");
    s0.qdot(kX) = params.at("xdot0");
    ProjectionOptions proj;
    proj.adjustable = {kXi, kPhi};
    out.initial_state = project_state(sys.constraints, s0, proj);
    out.lagrangian = std::move(sys.lagrangian);
    out.constraints = std::move(sys.constraints);
    out.degenerate_hessian_expected = true;
  } else if (name == "particle") {
    MechanicalSystem sys =
        nonholonomic_particle(params.at("offset"), params.at("stiffness"));
    MechState s0{0.0, Vector::Zero(3), Vector::Zero(3)};
    s0.qdot(0) = params.at("xdot0");
    s0.qdot(1) = params.at("ydot0");
    ProjectionOptions proj;
    proj.adjustable = {2};
    out.initial_state = project_state(sys.constraints, s0, proj);
    out.lagrangian = std::move(sys.lagrangian);
    out.constraints = std::move(sys.constraints);
  } else if (name == "oscillator") {
    if (!(params.at("mass") > 0.0)) throw ConstructionError("mass must be > 0");
    out.lagrangian = oscillator_model(params.at("mass"), params.at("stiffness"));
    out.constraints = ConstraintSet::empty(out.lagrangian.space);
    out.initial_state = MechState{0.0, Vector::Constant(1, params.at("y0")),
                                  Vector::Constant(1, params.at("ydot0"))};
  } else if (name == "wave") {
    out.kind = ModelKind::Field;
    out.lagrangian = wave_model();
    out.constraints = ConstraintSet::empty(out.lagrangian.space);
  } else {
    out.kind = ModelKind::Field;
    FieldSystem sys = scalar_constrained_model(params.at("c"));
    out.lagrangian = std::move(sys.lagrangian);
    out.constraints = std::move(sys.constraints);
  }
  return out;
}

}  // namespace nhfield
