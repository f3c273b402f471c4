#include "nhfield/cauchy.hpp"

#include <cmath>
#include <memory>
#include <random>
#include <sstream>

namespace nhfield {

namespace {

// One evaluation site of the node density inside the induced Lagrangian or
// constraints. `node` < 0 marks a boundary site with pinned value `ghost_y`
// and zero velocity. The spatial jet is sum(c * Y_ref) + z1_offset, where the
// offset collects the pinned boundary values the stencil touches.
struct Site {
  double weight = 0.0;
  int node = -1;
  double b = 0.0;
  Vector ghost_y;
  std::vector<std::pair<int, double>> stencil;
  Vector z1_offset;
};

struct Layout {
  int m = 0;
  int nodes = 0;
  std::vector<Site> lagrangian_sites;
  std::vector<Site> constraint_sites;  // one per unknown node, central stencil
};

// Adds coefficient c on neighbour `ref` (which may be a boundary) to a stencil.
void add_ref(const CauchyGrid& grid, int ref, double c, Site& site) {
  const int n = grid.nodes;
  if (grid.boundary == Boundary::Periodic) {
    site.stencil.emplace_back(((ref % n) + n) % n, c);
    return;
  }
  if (ref < 0) {
    site.z1_offset += c * grid.left;
  } else if (ref >= n) {
    site.z1_offset += c * grid.right;
  } else {
    site.stencil.emplace_back(ref, c);
  }
}

Layout build_layout(const CauchyGrid& grid, int m) {
  Layout layout;
  layout.m = m;
  layout.nodes = grid.nodes;
  const double h = grid.spacing();
  const int n = grid.nodes;
  auto fresh = [m](double weight, int node, double b) {
    Site s;
    s.weight = weight;
    s.node = node;
    s.b = b;
    s.z1_offset = Vector::Zero(m);
    return s;
  };
  for (int j = 0; j < n; ++j) {
    const double b = grid.position(j);
    Site forward = fresh(0.5 * h, j, b);
    add_ref(grid, j + 1, 1.0 / h, forward);
    add_ref(grid, j, -1.0 / h, forward);
    Site backward = fresh(0.5 * h, j, b);
    add_ref(grid, j, 1.0 / h, backward);
    add_ref(grid, j - 1, -1.0 / h, backward);
    layout.lagrangian_sites.push_back(std::move(forward));
    layout.lagrangian_sites.push_back(std::move(backward));

    Site central = fresh(h, j, b);
    add_ref(grid, j + 1, 0.5 / h, central);
    add_ref(grid, j - 1, -0.5 / h, central);
    layout.constraint_sites.push_back(std::move(central));
  }
  if (grid.boundary == Boundary::Fixed) {
    // Trapezoid end points: one-sided jets with the pinned values.
    Site left = fresh(0.5 * h, -1, 0.0);
    left.ghost_y = grid.left;
    add_ref(grid, 0, 1.0 / h, left);
    add_ref(grid, -1, -1.0 / h, left);
    Site right = fresh(0.5 * h, -1, grid.length);
    right.ghost_y = grid.right;
    add_ref(grid, n, 1.0 / h, right);
    add_ref(grid, n - 1, -1.0 / h, right);
    layout.lagrangian_sites.push_back(std::move(left));
    layout.lagrangian_sites.push_back(std::move(right));
  }
  return layout;
}

JetPoint site_jet(const Site& site, int m, double t, const Vector& q,
                  const Vector& qdot) {
  Vector x(2);
  x << t, site.b;
  Matrix z(m, 2);
  Vector y;
  if (site.node >= 0) {
    y = q.segment(site.node * m, m);
    z.col(0) = qdot.segment(site.node * m, m);
  } else {
    y = site.ghost_y;
    z.col(0).setZero();
  }
  Vector dz = site.z1_offset;
  for (const auto& [ref, c] : site.stencil) dz += c * q.segment(ref * m, m);
  z.col(1) = dz;
  return JetPoint(std::move(x), std::move(y), std::move(z));
}

DerivativeBundle stacked_bundle(const LagrangianModel& node_model,
                                const Layout& layout, const JetPoint& p) {
  const int m = layout.m;
  const int M = m * layout.nodes;
  const double t = p.x(0);
  const Vector& q = p.y;
  const Vector qdot = p.z.col(0);

  DerivativeBundle out;
  out.L = 0.0;
  out.dL_dy = Vector::Zero(M);
  out.dL_dz = Vector::Zero(M);
  out.d2L_dzdz = Matrix::Zero(M, M);
  out.d2L_dydz = Matrix::Zero(M, M);
  out.d2L_dxdz = Matrix::Zero(1, M);

  for (const Site& site : layout.lagrangian_sites) {
    const DerivativeBundle d =
        eval_derivatives(node_model, site_jet(site, m, t, q, qdot));
    const double w = site.weight;
    out.L += w * d.L;
    if (site.node >= 0) {
      const int base = site.node * m;
      for (int i = 0; i < m; ++i) {
        out.dL_dy(base + i) += w * d.dL_dy(i);
        out.dL_dz(base + i) += w * d.dL_dz(2 * i);
        out.d2L_dxdz(0, base + i) += w * d.d2L_dxdz(0, 2 * i);
        for (int k = 0; k < m; ++k) {
          out.d2L_dzdz(base + i, base + k) += w * d.d2L_dzdz(2 * i, 2 * k);
          out.d2L_dydz(base + k, base + i) += w * d.d2L_dydz(k, 2 * i);
        }
      }
    }
    for (const auto& [ref, c] : site.stencil) {
      const int rbase = ref * m;
      for (int i = 0; i < m; ++i) {
        out.dL_dy(rbase + i) += w * c * d.dL_dz(2 * i + 1);
      }
      if (site.node < 0) continue;
      const int base = site.node * m;
      for (int k = 0; k < m; ++k) {
        for (int i = 0; i < m; ++i) {
          out.d2L_dydz(rbase + k, base + i) +=
              w * c * d.d2L_dzdz(2 * k + 1, 2 * i);
        }
      }
    }
  }
  return out;
}

ConstraintDerivatives stacked_constraints_at(const ConstraintSet& node_cs,
                                             const Layout& layout,
                                             const JetPoint& p) {
  const int m = layout.m;
  const int k = node_cs.count;
  const int M = m * layout.nodes;
  const int K = k * layout.nodes;
  const double t = p.x(0);
  const Vector& q = p.y;
  const Vector qdot = p.z.col(0);

  ConstraintDerivatives out;
  out.phi = Vector::Zero(K);
  out.dPhi_dx = Matrix::Zero(K, 1);
  out.dPhi_dy = Matrix::Zero(K, M);
  out.dPhi_dz = Matrix::Zero(K, M);
  for (const Site& site : layout.constraint_sites) {
    const ConstraintDerivatives d =
        eval_constraint_derivatives(node_cs, site_jet(site, m, t, q, qdot));
    const int row = site.node * k;
    const int base = site.node * m;
    out.phi.segment(row, k) = d.phi;
    out.dPhi_dx.block(row, 0, k, 1) = d.dPhi_dx.col(0);
    for (int a = 0; a < k; ++a) {
      for (int i = 0; i < m; ++i) {
        out.dPhi_dz(row + a, base + i) = d.dPhi_dz(a, 2 * i);
        out.dPhi_dy(row + a, base + i) += d.dPhi_dy(a, i);
        for (const auto& [ref, c] : site.stencil) {
          out.dPhi_dy(row + a, ref * m + i) += c * d.dPhi_dz(a, 2 * i + 1);
        }
      }
    }
  }
  return out;
}

FiberedSpace stacked_space(const FiberedSpace& node_space, int nodes) {
  std::vector<std::string> names;
  for (int j = 0; j < nodes; ++j) {
    for (const auto& f : node_space.fiber_names()) {
      names.push_back(f + "[" + std::to_string(j) + "]");
    }
  }
  return FiberedSpace({node_space.base_names().front()}, std::move(names));
}

// Node values over the full quadrature grid: the unknown nodes, plus the two
// pinned end points on fixed grids.
struct ExtendedProfile {
  std::vector<double> b;
  Matrix Y, V, A;
  int offset = 0;  // extended index of unknown node 0
};

ExtendedProfile extend(const CauchySystem& sys, const CauchyState& s,
                       const Matrix& acc) {
  const CauchyGrid& g = sys.grid();
  const int m = sys.fiber_dim();
  const int n = g.nodes;
  ExtendedProfile e;
  if (g.boundary == Boundary::Periodic) {
    for (int j = 0; j < n; ++j) e.b.push_back(g.position(j));
    e.Y = s.Y;
    e.V = s.V;
    e.A = acc;
    return e;
  }
  e.offset = 1;
  e.b.push_back(0.0);
  for (int j = 0; j < n; ++j) e.b.push_back(g.position(j));
  e.b.push_back(g.length);
  e.Y.resize(m, n + 2);
  e.V = Matrix::Zero(m, n + 2);
  e.A = Matrix::Zero(m, n + 2);
  e.Y.col(0) = g.left;
  e.Y.col(n + 1) = g.right;
  e.Y.middleCols(1, n) = s.Y;
  e.V.middleCols(1, n) = s.V;
  e.A.middleCols(1, n) = acc;
  return e;
}

// d/db over the extended grid: central inside (wrapping when periodic),
// one-sided second order at pinned end points.
Matrix extended_derivative(const CauchyGrid& g, const Matrix& f) {
  const double h = g.spacing();
  const Eigen::Index n = f.cols();
  Matrix d(f.rows(), n);
  if (g.boundary == Boundary::Periodic) {
    for (Eigen::Index j = 0; j < n; ++j) {
      d.col(j) = (f.col((j + 1) % n) - f.col((j + n - 1) % n)) / (2.0 * h);
    }
    return d;
  }
  for (Eigen::Index j = 1; j + 1 < n; ++j) {
    d.col(j) = (f.col(j + 1) - f.col(j - 1)) / (2.0 * h);
  }
  d.col(0) = (-3.0 * f.col(0) + 4.0 * f.col(1) - f.col(2)) / (2.0 * h);
  d.col(n - 1) =
      (3.0 * f.col(n - 1) - 4.0 * f.col(n - 2) + f.col(n - 3)) / (2.0 * h);
  return d;
}

Matrix block_or_zero(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
  return m.size() == 0 ? Matrix::Zero(rows, cols) : m;
}

void require_variation_shape(const CauchySystem& sys, const CauchyVariation& xi) {
  const int m = sys.fiber_dim();
  const int n = sys.nodes();
  auto ok = [&](const Matrix& b, bool optional) {
    return (optional && b.size() == 0) || (b.rows() == m && b.cols() == n);
  };
  if (!ok(xi.dy, false) || !ok(xi.dz0, true) || !ok(xi.dz1, true)) {
    throw ConstructionError("variation blocks must be m x nodes");
  }
}

void require_state_shape(const CauchySystem& sys, const CauchyState& s) {
  const int m = sys.fiber_dim();
  const int n = sys.nodes();
  if (s.Y.rows() != m || s.Y.cols() != n || s.V.rows() != m || s.V.cols() != n) {
    throw ConstructionError("Cauchy state must be m x nodes");
  }
}

std::vector<int> degenerate_nodes(const CauchySystem& sys, const MechState& ms) {
  const CauchyState s = sys.unpack(ms);
  const int m = sys.fiber_dim();
  const int k = sys.constraint_count();
  const double h = sys.grid().spacing();
  std::vector<int> out;
  for (int j = 0; j < sys.nodes(); ++j) {
    const JetPoint jet = sys.node_jet(s, j);
    const DerivativeBundle d = eval_derivatives(sys.node_model(), jet);
    Matrix W(m, m);
    for (int i = 0; i < m; ++i) {
      for (int l = 0; l < m; ++l) W(i, l) = d.d2L_dzdz(2 * i, 2 * l);
    }
    Matrix A(k, m);
    if (k > 0) {
      const Matrix dz = jacobian_z(sys.node_constraints(), jet);
      for (int i = 0; i < m; ++i) A.col(i) = dz.col(2 * i);
    }
    Matrix K = Matrix::Zero(m + k, m + k);
    K.topLeftCorner(m, m) = h * W;
    K.topRightCorner(m, k) = -A.transpose();
    K.bottomLeftCorner(k, m) = A;
    Eigen::JacobiSVD<Matrix> svd(K);
    const Vector sv = svd.singularValues();
    if (sv(sv.size() - 1) <= 1e-12 * std::max(1.0, sv(0))) out.push_back(j);
  }
  return out;
}

}  // namespace

CauchyGrid CauchyGrid::periodic(double length, int nodes) {
  CauchyGrid g;
  g.length = length;
  g.nodes = nodes;
  g.boundary = Boundary::Periodic;
  return g;
}

CauchyGrid CauchyGrid::fixed(double length, int nodes, Vector left, Vector right) {
  CauchyGrid g;
  g.length = length;
  g.nodes = nodes;
  g.boundary = Boundary::Fixed;
  g.left = std::move(left);
  g.right = std::move(right);
  return g;
}

double CauchyGrid::spacing() const {
  return boundary == Boundary::Periodic ? length / nodes : length / (nodes + 1);
}

double CauchyGrid::position(int j) const {
  return boundary == Boundary::Periodic ? j * spacing() : (j + 1) * spacing();
}

void CauchyGrid::validate(int fiber_dim) const {
  if (nodes < 4) throw ConstructionError("Cauchy grid needs at least 4 nodes");
  if (!(length > 0.0) || !std::isfinite(length)) {
    throw ConstructionError("Cauchy surface length must be finite and > 0");
  }
  if (boundary == Boundary::Fixed &&
      (left.size() != fiber_dim || right.size() != fiber_dim)) {
    throw ConstructionError(
        "fixed boundaries need boundary values for every field component");
  }
}

CauchySystem::CauchySystem(LagrangianModel node_model,
                           ConstraintSet node_constraints, CauchyGrid grid)
    : node_model_(std::move(node_model)),
      node_constraints_(std::move(node_constraints)),
      grid_(std::move(grid)) {
  if (node_model_.space.base_dim() != 2) {
    throw ConstructionError("field models need a two-dimensional base (t, b)");
  }
  if (!(node_model_.space == node_constraints_.space)) {
    throw ConstructionError("Lagrangian and constraints live on different spaces");
  }
  const int m = node_model_.space.fiber_dim();
  grid_.validate(m);

  auto layout = std::make_shared<const Layout>(build_layout(grid_, m));
  const FiberedSpace space = stacked_space(node_model_.space, grid_.nodes);

  stacked_model_.space = space;
  stacked_model_.fd_step = node_model_.fd_step;
  stacked_model_.density = [model = node_model_, layout](const JetPoint& p) {
    double L = 0.0;
    const Vector qdot = p.z.col(0);
    for (const Site& site : layout->lagrangian_sites) {
      L += site.weight * model.density(site_jet(site, layout->m, p.x(0), p.y, qdot));
    }
    return L;
  };
  stacked_model_.partials.all = [model = node_model_, layout](const JetPoint& p) {
    return stacked_bundle(model, *layout, p);
  };

  const int k = node_constraints_.count;
  if (k == 0) {
    stacked_constraints_ = ConstraintSet::empty(space);
  } else {
    stacked_constraints_.space = space;
    stacked_constraints_.count = k * grid_.nodes;
    stacked_constraints_.fd_step = node_constraints_.fd_step;
    stacked_constraints_.phi = [cs = node_constraints_, layout](const JetPoint& p) {
      const int k = cs.count;
      Vector out(k * layout->nodes);
      const Vector qdot = p.z.col(0);
      for (const Site& site : layout->constraint_sites) {
        out.segment(site.node * k, k) =
            cs.evaluate(site_jet(site, layout->m, p.x(0), p.y, qdot));
      }
      return out;
    };
    stacked_constraints_.jacobians.all = [cs = node_constraints_,
                                          layout](const JetPoint& p) {
      return stacked_constraints_at(cs, *layout, p);
    };
  }
}

MechState CauchySystem::pack(const CauchyState& s) const {
  require_state_shape(*this, s);
  const Eigen::Index M = s.Y.size();
  return MechState{s.t, Eigen::Map<const Vector>(s.Y.data(), M),
                   Eigen::Map<const Vector>(s.V.data(), M)};
}

CauchyState CauchySystem::unpack(const MechState& s) const {
  const int m = fiber_dim();
  const int n = nodes();
  if (s.q.size() != m * n || s.qdot.size() != m * n) {
    throw ConstructionError("stacked state has the wrong length");
  }
  return CauchyState{s.t, Eigen::Map<const Matrix>(s.q.data(), m, n),
                     Eigen::Map<const Matrix>(s.qdot.data(), m, n)};
}

Matrix CauchySystem::spatial_derivative(const Matrix& Y) const {
  const int n = nodes();
  const double h = grid_.spacing();
  Matrix d(Y.rows(), n);
  for (int j = 0; j < n; ++j) {
    Vector next, prev;
    if (grid_.boundary == Boundary::Periodic) {
      next = Y.col((j + 1) % n);
      prev = Y.col((j + n - 1) % n);
    } else {
      next = j + 1 < n ? Vector(Y.col(j + 1)) : grid_.right;
      prev = j > 0 ? Vector(Y.col(j - 1)) : grid_.left;
    }
    d.col(j) = (next - prev) / (2.0 * h);
  }
  return d;
}

JetPoint CauchySystem::node_jet(const CauchyState& s, int j) const {
  const int m = fiber_dim();
  Vector x(2);
  x << s.t, grid_.position(j);
  Matrix z(m, 2);
  z.col(0) = s.V.col(j);
  const double h = grid_.spacing();
  const int n = nodes();
  Vector next, prev;
  if (grid_.boundary == Boundary::Periodic) {
    next = s.Y.col((j + 1) % n);
    prev = s.Y.col((j + n - 1) % n);
  } else {
    next = j + 1 < n ? Vector(s.Y.col(j + 1)) : grid_.right;
    prev = j > 0 ? Vector(s.Y.col(j - 1)) : grid_.left;
  }
  z.col(1) = (next - prev) / (2.0 * h);
  return JetPoint(std::move(x), s.Y.col(j), std::move(z));
}

double CauchySystem::induced_lagrangian(const CauchyState& s) const {
  return stacked_model_.density(pack(s).jet());
}

Matrix CauchySystem::constraint_values(const CauchyState& s) const {
  const int k = constraint_count();
  Matrix out(k, nodes());
  for (int j = 0; j < nodes(); ++j) {
    out.col(j) = node_constraints_.evaluate(node_jet(s, j));
  }
  return out;
}

Vector CauchySystem::quadrature_weights() const {
  // Pinned end points of fixed grids carry zero variation, so the trapezoid
  // weights of the unknown nodes are all equal to the spacing.
  return Vector::Constant(nodes(), grid_.spacing());
}

CauchySystem semidiscretize(const LagrangianModel& model,
                            const ConstraintSet& cs, const CauchyGrid& grid) {
  return CauchySystem(model, cs, grid);
}

Matrix FieldTrajectory::node_constraint_residuals(std::size_t sample,
                                                  int k) const {
  const Vector& phi = mechanics.diagnostics.at(sample).phi;
  if (k == 0) return Matrix(0, phi.size());
  return Eigen::Map<const Matrix>(phi.data(), k, phi.size() / k);
}

std::size_t FieldTrajectory::sample_at(double t) const {
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (std::abs(times[i] - t) <= 1e-9 * std::max(1.0, std::abs(t))) return i;
  }
  std::ostringstream os;
  os << "no recorded sample at t = " << t;
  throw DiagnosticUnavailableError(os.str());
}

FieldTrajectory evolve_field(const CauchySystem& system, const CauchyState& s0,
                             double h, double t_end,
                             const IntegrateOptions& options) {
  const MechState start =
      project_state(system.stacked_constraints(), system.pack(s0),
                    options.projection);
  FieldTrajectory out;
  try {
    out.mechanics = integrate(system.stacked_model(),
                              system.stacked_constraints(), start, h, t_end,
                              options);
  } catch (const DegenerateSystemError& e) {
    std::ostringstream os;
    os << e.what() << " [degenerate nodes:";
    const auto nodes = degenerate_nodes(system, e.state());
    for (int j : nodes) os << ' ' << j;
    if (nodes.empty()) os << " none locally";
    os << ']';
    throw DegenerateSystemError(os.str(), e.state(), e.min_singular_value(),
                                e.stage());
  }
  out.times = out.mechanics.times;
  for (const MechState& s : out.mechanics.states) {
    out.states.push_back(system.unpack(s));
  }
  return out;
}

double theta_tilde(const CauchySystem& system, const CauchyState& state,
                   const CauchyVariation& xi) {
  require_state_shape(system, state);
  require_variation_shape(system, xi);
  const Vector w = system.quadrature_weights();
  const int m = system.fiber_dim();
  double total = 0.0;
  for (int j = 0; j < system.nodes(); ++j) {
    const JetPoint jet = system.node_jet(state, j);
    const DerivativeBundle d = eval_derivatives(system.node_model(), jet);
    double integrand = 0.0;
    for (int i = 0; i < m; ++i) integrand += d.dL_dz(2 * i) * xi.dy(i, j);
    total += w(j) * integrand;
  }
  return total;
}

double dtheta_tilde_along(const CauchySystem& system, const CauchyState& state,
                          const Matrix& accelerations,
                          const CauchyVariation& xi) {
  require_state_shape(system, state);
  require_variation_shape(system, xi);
  const int m = system.fiber_dim();
  const int n = system.nodes();
  if (accelerations.rows() != m || accelerations.cols() != n) {
    throw ConstructionError("accelerations must be m x nodes");
  }
  const CauchyGrid& g = system.grid();
  const ExtendedProfile e = extend(system, state, accelerations);
  const Matrix dY = extended_derivative(g, e.Y);
  const Matrix dV = extended_derivative(g, e.V);
  const Eigen::Index ext = e.Y.cols();

  std::vector<DerivativeBundle> bundles;
  bundles.reserve(static_cast<std::size_t>(ext));
  Matrix p1(m, ext);
  for (Eigen::Index c = 0; c < ext; ++c) {
    Vector x(2);
    x << state.t, e.b[static_cast<std::size_t>(c)];
    Matrix z(m, 2);
    z.col(0) = e.V.col(c);
    z.col(1) = dY.col(c);
    bundles.push_back(eval_derivatives(system.node_model(),
                                       JetPoint(x, e.Y.col(c), z)));
    for (int i = 0; i < m; ++i) p1(i, c) = bundles.back().dL_dz(2 * i + 1);
  }
  const Matrix dp1 = extended_derivative(g, p1);

  const Matrix dz0 = block_or_zero(xi.dz0, m, n);
  const Matrix dz1 = block_or_zero(xi.dz1, m, n);
  const Vector w = system.quadrature_weights();
  double total = 0.0;
  for (int j = 0; j < n; ++j) {
    const Eigen::Index c = j + e.offset;
    const DerivativeBundle& d = bundles[static_cast<std::size_t>(c)];

    // Differential of the momenta p^mu_i along a tangent vector with time
    // component dt, fiber part dy and jet part dz (flattened, mu fastest).
    auto dp = [&](double dt, const Vector& dy, const Vector& dz) {
      return Vector(d.d2L_dydz.transpose() * dy + d.d2L_dzdz.transpose() * dz +
                    dt * d.d2L_dxdz.row(0).transpose());
    };
    Vector cdot_z(2 * m), xi_z(2 * m), z(2 * m);
    for (int i = 0; i < m; ++i) {
      cdot_z(2 * i) = e.A(i, c);
      cdot_z(2 * i + 1) = dV(i, c);
      xi_z(2 * i) = dz0(i, j);
      xi_z(2 * i + 1) = dz1(i, j);
      z(2 * i) = e.V(i, c);
      z(2 * i + 1) = dY(i, c);
    }
    const Vector xi_y = xi.dy.col(j);
    const Vector dp_cdot = dp(1.0, e.V.col(c), cdot_z);
    const Vector dp_xi = dp(0.0, xi_y, xi_z);

    // dH(xi) with H = L - z^i_mu p^mu_i.
    const double dH = d.dL_dy.dot(xi_y) + d.dL_dz.dot(xi_z) - z.dot(dp_xi) -
                      d.dL_dz.dot(xi_z);
    double integrand = dH;
    for (int i = 0; i < m; ++i) {
      integrand += -dp_cdot(2 * i) * xi_y(i) + e.V(i, c) * dp_xi(2 * i) +
                   dp_xi(2 * i + 1) * dY(i, c) - xi_y(i) * dp1(i, c);
    }
    total += w(j) * integrand;
  }
  return -total;
}

double xi_tilde_along(const CauchySystem& system, const CauchyState& state,
                      const Matrix& form_multipliers,
                      const CauchyVariation& xi) {
  require_state_shape(system, state);
  require_variation_shape(system, xi);
  const int k = system.constraint_count();
  if (k == 0) return 0.0;
  const int m = system.fiber_dim();
  if (form_multipliers.rows() != k || form_multipliers.cols() != system.nodes()) {
    throw ConstructionError("form multipliers must be k x nodes");
  }
  const Vector w = system.quadrature_weights();
  double total = 0.0;
  for (int j = 0; j < system.nodes(); ++j) {
    const Matrix a = jacobian_z(system.node_constraints(), system.node_jet(state, j));
    double integrand = 0.0;
    for (int alpha = 0; alpha < k; ++alpha) {
      for (int i = 0; i < m; ++i) {
        integrand += form_multipliers(alpha, j) * a(alpha, 2 * i) * xi.dy(i, j);
      }
    }
    total += w(j) * integrand;
  }
  return -total;
}

Matrix form_multipliers(const CauchySystem& system, const Vector& stacked_lambda) {
  const int k = system.constraint_count();
  const int n = system.nodes();
  if (stacked_lambda.size() != k * n) {
    throw DiagnosticUnavailableError("multiplier record has the wrong length");
  }
  const Vector w = system.quadrature_weights();
  Matrix out(k, n);
  for (int j = 0; j < n; ++j) {
    for (int a = 0; a < k; ++a) out(a, j) = -stacked_lambda(j * k + a) / w(j);
  }
  return out;
}

std::vector<CauchyVariation> random_variations(const CauchySystem& system,
                                               int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  const int m = system.fiber_dim();
  const int n = system.nodes();
  const double h = system.grid().spacing();
  std::vector<CauchyVariation> out;
  for (int v = 0; v < count; ++v) {
    CauchyVariation xi{Matrix(m, n), Matrix(m, n), Matrix()};
    for (Eigen::Index c = 0; c < xi.dy.size(); ++c) xi.dy(c) = normal(rng);
    for (Eigen::Index c = 0; c < xi.dz0.size(); ++c) xi.dz0(c) = normal(rng);
    xi.dy /= std::sqrt(h * xi.dy.squaredNorm());
    // Pinned boundary values carry no variation.
    xi.dz1 = Matrix(m, n);
    const bool periodic = system.grid().boundary == Boundary::Periodic;
    for (int j = 0; j < n; ++j) {
      const Vector next = j + 1 < n ? Vector(xi.dy.col(j + 1))
                          : periodic ? Vector(xi.dy.col(0))
                                     : Vector(Vector::Zero(m));
      const Vector prev = j > 0     ? Vector(xi.dy.col(j - 1))
                          : periodic ? Vector(xi.dy.col(n - 1))
                                     : Vector(Vector::Zero(m));
      xi.dz1.col(j) = (next - prev) / (2.0 * h);
    }
    out.push_back(std::move(xi));
  }
  return out;
}

double dedonder_residual_20(const CauchySystem& system,
                            const FieldTrajectory& trajectory, double t_probe,
                            const std::vector<CauchyVariation>& variations) {
  const std::size_t sample = trajectory.sample_at(t_probe);
  if (sample >= trajectory.mechanics.diagnostics.size()) {
    throw DiagnosticUnavailableError("trajectory carries no diagnostics");
  }
  const SampleDiagnostics& diag = trajectory.mechanics.diagnostics[sample];
  const int m = system.fiber_dim();
  const int n = system.nodes();
  if (diag.qddot.size() != m * n) {
    throw DiagnosticUnavailableError("no acceleration record at t_probe");
  }
  const Matrix lambda = form_multipliers(system, diag.lambda);
  const Matrix acc = Eigen::Map<const Matrix>(diag.qddot.data(), m, n);
  const CauchyState& state = trajectory.states[sample];
  double worst = 0.0;
  for (const CauchyVariation& xi : variations) {
    const double r = dtheta_tilde_along(system, state, acc, xi) -
                     xi_tilde_along(system, state, lambda, xi);
    worst = std::max(worst, std::abs(r));
  }
  return worst;
}

}  // namespace nhfield
