#include "nhfield/jet.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace nhfield {

namespace {

void require_unique(const std::vector<std::string>& names, const char* what) {
  std::set<std::string> seen(names.begin(), names.end());
  if (seen.size() != names.size()) {
    throw ConstructionError(std::string("duplicate ") + what + " label");
  }
}

std::string describe(const JetPoint& p) {
  std::ostringstream os;
  os.precision(17);
  os << "x=(" << p.x.transpose() << ") y=(" << p.y.transpose() << ") z=("
     << p.z_flat().transpose() << ")";
  return os.str();
}

const char* block_name(detail::Block b) {
  switch (b) {
    case detail::Block::X:
      return "x";
    case detail::Block::Y:
      return "y";
    case detail::Block::Z:
      return "z";
  }
  return "?";
}

double checked_eval(const ScalarField& f, const JetPoint& p,
                    const std::string& probe) {
  const double v = f(p);
  if (!std::isfinite(v)) {
    throw EvaluationDomainError("Lagrangian is not finite at probe '" + probe +
                                "': " + describe(p));
  }
  return v;
}

int block_size(const FiberedSpace& s, detail::Block b) {
  switch (b) {
    case detail::Block::X:
      return s.base_dim();
    case detail::Block::Y:
      return s.fiber_dim();
    case detail::Block::Z:
      return s.jet_dim();
  }
  return 0;
}

// d/dc of L for each coordinate c of `block`, central differences.
Vector gradient_of_scalar(const ScalarField& f, const JetPoint& p,
                          const FiberedSpace& s, detail::Block block,
                          double step) {
  const int size = block_size(s, block);
  Vector g(size);
  JetPoint q = p;
  for (int a = 0; a < size; ++a) {
    double& c = detail::coord(q, block, a, s.base_dim());
    const double c0 = c;
    const double h = detail::fd_scale(step, c0);
    c = c0 + h;
    const double fp = checked_eval(
        f, q, std::string(block_name(block)) + "[" + std::to_string(a) + "]+h");
    c = c0 - h;
    const double fm = checked_eval(
        f, q, std::string(block_name(block)) + "[" + std::to_string(a) + "]-h");
    c = c0;
    g(a) = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Row r of the result is d/dc_r of the vector function, c_r in `row_block`.
Matrix jacobian_of_vector(const VectorField& f, const JetPoint& p,
                          const FiberedSpace& s, detail::Block row_block,
                          double step) {
  const int rows = block_size(s, row_block);
  Matrix out;
  JetPoint q = p;
  for (int a = 0; a < rows; ++a) {
    double& c = detail::coord(q, row_block, a, s.base_dim());
    const double c0 = c;
    const double h = detail::fd_scale(step, c0);
    c = c0 + h;
    const Vector fp = f(q);
    c = c0 - h;
    const Vector fm = f(q);
    c = c0;
    if (!fp.allFinite() || !fm.allFinite()) {
      throw EvaluationDomainError(
          std::string("derivative closure is not finite at probe '") +
          block_name(row_block) + "[" + std::to_string(a) + "]': " +
          describe(p));
    }
    if (a == 0) out.resize(rows, fp.size());
    out.row(a) = (fp - fm).transpose() / (2.0 * h);
  }
  if (rows == 0) out.resize(0, 0);
  return out;
}

// Second partials d2L / (d row_c d z_col) from L alone.
Matrix mixed_second_of_scalar(const ScalarField& f, const JetPoint& p,
                              const FiberedSpace& s, detail::Block row_block,
                              double step) {
  const int rows = block_size(s, row_block);
  const int cols = s.jet_dim();
  const int n = s.base_dim();
  Matrix out(rows, cols);
  const bool same = row_block == detail::Block::Z;
  JetPoint q = p;
  const double f0 = same ? checked_eval(f, p, "center") : 0.0;
  for (int a = 0; a < rows; ++a) {
    for (int b = same ? a : 0; b < cols; ++b) {
      double& ca = detail::coord(q, row_block, a, n);
      const double a0 = ca;
      const double ha = detail::fd_scale(step, a0);
      if (same && a == b) {
        ca = a0 + ha;
        const double fp = checked_eval(f, q, "z[" + std::to_string(a) + "]+h");
        ca = a0 - ha;
        const double fm = checked_eval(f, q, "z[" + std::to_string(a) + "]-h");
        ca = a0;
        out(a, a) = (fp - 2.0 * f0 + fm) / (ha * ha);
        continue;
      }
      double& cb = detail::coord(q, detail::Block::Z, b, n);
      const double b0 = cb;
      const double hb = detail::fd_scale(step, b0);
      double acc = 0.0;
      for (int sa : {1, -1}) {
        for (int sb : {1, -1}) {
          detail::coord(q, row_block, a, n) = a0 + sa * ha;
          detail::coord(q, detail::Block::Z, b, n) = b0 + sb * hb;
          acc += sa * sb * checked_eval(f, q, "mixed probe");
        }
      }
      detail::coord(q, row_block, a, n) = a0;
      detail::coord(q, detail::Block::Z, b, n) = b0;
      out(a, b) = acc / (4.0 * ha * hb);
      if (same) out(b, a) = out(a, b);
    }
  }
  return out;
}

Vector checked_vector(const VectorField& f, const JetPoint& p, Eigen::Index size,
                      const char* name) {
  Vector v = f(p);
  if (v.size() != size) {
    throw ConstructionError(std::string(name) + " closure returned length " +
                            std::to_string(v.size()) + ", expected " +
                            std::to_string(size));
  }
  if (!v.allFinite()) {
    throw EvaluationDomainError(std::string(name) + " is not finite at " +
                                describe(p));
  }
  return v;
}

Matrix checked_matrix(const MatrixField& f, const JetPoint& p,
                      Eigen::Index rows, Eigen::Index cols, const char* name) {
  Matrix v = f(p);
  if (v.rows() != rows || v.cols() != cols) {
    throw ConstructionError(std::string(name) + " closure has wrong shape");
  }
  if (!v.allFinite()) {
    throw EvaluationDomainError(std::string(name) + " is not finite at " +
                                describe(p));
  }
  return v;
}

DerivativeBundle evaluate(const LagrangianModel& model, const JetPoint& p,
                          bool use_closures) {
  p.require_matches(model.space);
  const FiberedSpace& s = model.space;
  const int m = s.fiber_dim();
  const int n = s.base_dim();
  const int N = s.jet_dim();
  const double step1 = model.fd_step;
  const double step2 = std::sqrt(model.fd_step);
  const LagrangianPartials none{};
  const LagrangianPartials& cl = use_closures ? model.partials : none;

  if (cl.all) {
    DerivativeBundle d = cl.all(p);
    if (!std::isfinite(d.L)) {
      throw EvaluationDomainError("Lagrangian is not finite at " + describe(p));
    }
    if (d.dL_dy.size() != m || d.dL_dz.size() != N ||
        d.d2L_dzdz.rows() != N || d.d2L_dzdz.cols() != N ||
        d.d2L_dydz.rows() != m || d.d2L_dydz.cols() != N ||
        d.d2L_dxdz.rows() != n || d.d2L_dxdz.cols() != N) {
      throw ConstructionError("combined derivative closure has wrong shapes");
    }
    return d;
  }

  DerivativeBundle d;
  d.L = checked_eval(model.density, p, "center");

  d.dL_dy = cl.dL_dy ? checked_vector(cl.dL_dy, p, m, "dL_dy")
                     : gradient_of_scalar(model.density, p, s,
                                          detail::Block::Y, step1);
  d.dL_dz = cl.dL_dz ? checked_vector(cl.dL_dz, p, N, "dL_dz")
                     : gradient_of_scalar(model.density, p, s,
                                          detail::Block::Z, step1);

  if (cl.d2L_dzdz) {
    d.d2L_dzdz = checked_matrix(cl.d2L_dzdz, p, N, N, "d2L_dzdz");
  } else if (cl.dL_dz) {
    Matrix h = jacobian_of_vector(cl.dL_dz, p, s, detail::Block::Z, step1);
    d.d2L_dzdz = 0.5 * (h + h.transpose());
  } else {
    d.d2L_dzdz =
        mixed_second_of_scalar(model.density, p, s, detail::Block::Z, step2);
  }

  if (cl.d2L_dydz) {
    d.d2L_dydz = checked_matrix(cl.d2L_dydz, p, m, N, "d2L_dydz");
  } else if (cl.dL_dz) {
    d.d2L_dydz = jacobian_of_vector(cl.dL_dz, p, s, detail::Block::Y, step1);
  } else {
    d.d2L_dydz =
        mixed_second_of_scalar(model.density, p, s, detail::Block::Y, step2);
  }

  if (cl.d2L_dxdz) {
    d.d2L_dxdz = checked_matrix(cl.d2L_dxdz, p, n, N, "d2L_dxdz");
  } else if (cl.dL_dz) {
    d.d2L_dxdz = jacobian_of_vector(cl.dL_dz, p, s, detail::Block::X, step1);
  } else {
    d.d2L_dxdz =
        mixed_second_of_scalar(model.density, p, s, detail::Block::X, step2);
  }
  return d;
}

}  // namespace

FiberedSpace::FiberedSpace(std::vector<std::string> base_names,
                           std::vector<std::string> fiber_names)
    : base_names_(std::move(base_names)), fiber_names_(std::move(fiber_names)) {
  if (base_names_.empty()) throw ConstructionError("base dimension must be >= 1");
  if (fiber_names_.empty()) {
    throw ConstructionError("fiber dimension must be >= 1");
  }
  require_unique(base_names_, "base");
  require_unique(fiber_names_, "fiber");
}

FiberedSpace FiberedSpace::with_dims(int n, int m) {
  if (n < 1 || m < 1) {
    throw ConstructionError("fibered space needs n >= 1 and m >= 1");
  }
  std::vector<std::string> base, fiber;
  for (int mu = 0; mu < n; ++mu) base.push_back("x" + std::to_string(mu));
  for (int i = 0; i < m; ++i) fiber.push_back("y" + std::to_string(i));
  return FiberedSpace(std::move(base), std::move(fiber));
}

JetPoint JetPoint::origin(const FiberedSpace& space) {
  return JetPoint(Vector::Zero(space.base_dim()),
                  Vector::Zero(space.fiber_dim()),
                  Matrix::Zero(space.fiber_dim(), space.base_dim()));
}

bool JetPoint::matches(const FiberedSpace& space) const {
  return x.size() == space.base_dim() && y.size() == space.fiber_dim() &&
         z.rows() == space.fiber_dim() && z.cols() == space.base_dim();
}

void JetPoint::require_matches(const FiberedSpace& space) const {
  if (!matches(space)) {
    std::ostringstream os;
    os << "jet point shape (x " << x.size() << ", y " << y.size() << ", z "
       << z.rows() << "x" << z.cols() << ") does not match space (n "
       << space.base_dim() << ", m " << space.fiber_dim() << ")";
    throw ConstructionError(os.str());
  }
}

Vector JetPoint::z_flat() const {
  Vector flat(z.size());
  const auto n = z.cols();
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index mu = 0; mu < n; ++mu) flat(i * n + mu) = z(i, mu);
  }
  return flat;
}

void JetPoint::set_z_flat(const Vector& flat) {
  const auto n = z.cols();
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index mu = 0; mu < n; ++mu) z(i, mu) = flat(i * n + mu);
  }
}

double& detail::coord(JetPoint& p, Block block, int index, int base_dim) {
  switch (block) {
    case Block::X:
      return p.x(index);
    case Block::Y:
      return p.y(index);
    case Block::Z:
      return p.z(index / base_dim, index % base_dim);
  }
  throw std::logic_error("bad block");
}

DerivativeBundle eval_derivatives(const LagrangianModel& model,
                                  const JetPoint& p) {
  return evaluate(model, p, true);
}

DerivativeBundle eval_derivatives_differenced(const LagrangianModel& model,
                                              const JetPoint& p) {
  return evaluate(model, p, false);
}

namespace {
constexpr double kVanishingHessian = 1e-8;
}  // namespace

HessianRegularity hessian_regularity(const LagrangianModel& model,
                                     const JetPoint& p, double tol) {
  if (!(tol > 0.0)) throw ConstructionError("regularity tolerance must be > 0");
  const DerivativeBundle d = eval_derivatives(model, p);
  Eigen::JacobiSVD<Matrix> svd(d.d2L_dzdz);
  HessianRegularity r;
  r.singular_values = svd.singularValues();
  r.max_singular_value = r.singular_values.size() ? r.singular_values(0) : 0.0;
  r.min_singular_value = r.singular_values.size()
                             ? r.singular_values(r.singular_values.size() - 1)
                             : 0.0;
  // A Hessian whose largest singular value sits at differencing noise level
  // counts as vanishing.
  const double reference =
      r.max_singular_value > kVanishingHessian ? r.max_singular_value : 1.0;
  r.regular = r.min_singular_value > tol * reference;
  return r;
}

std::vector<std::string> DerivativeCheckReport::failures() const {
  std::vector<std::string> out;
  for (const auto& p : partials) {
    if (!p.passed) out.push_back(p.name);
  }
  return out;
}

DerivativeCheckReport check_derivatives(const LagrangianModel& model,
                                        const std::vector<JetPoint>& probes,
                                        double rtol) {
  if (probes.empty()) throw ConstructionError("check_derivatives needs probes");
  const LagrangianPartials& cl = model.partials;
  DerivativeCheckReport report;
  struct Entry {
    const char* name;
    bool present;
  };
  const bool all = bool(cl.all);
  const Entry entries[] = {{"dL_dy", all || bool(cl.dL_dy)},
                           {"dL_dz", all || bool(cl.dL_dz)},
                           {"d2L_dzdz", all || bool(cl.d2L_dzdz)},
                           {"d2L_dydz", all || bool(cl.d2L_dydz)},
                           {"d2L_dxdz", all || bool(cl.d2L_dxdz)}};
  for (const auto& e : entries) {
    PartialDiscrepancy pd;
    pd.name = e.name;
    pd.analytic = e.present;
    report.partials.push_back(pd);
  }

  auto discrepancy = [](const Matrix& analytic, const Matrix& fd) {
    if (analytic.size() == 0) return 0.0;
    const double scale = std::max(1.0, analytic.cwiseAbs().maxCoeff());
    return (analytic - fd).cwiseAbs().maxCoeff() / scale;
  };

  for (std::size_t k = 0; k < probes.size(); ++k) {
    const JetPoint& p = probes[k];
    const DerivativeBundle a = eval_derivatives(model, p);
    const DerivativeBundle f = eval_derivatives_differenced(model, p);
    const double errs[] = {discrepancy(a.dL_dy, f.dL_dy),
                           discrepancy(a.dL_dz, f.dL_dz),
                           discrepancy(a.d2L_dzdz, f.d2L_dzdz),
                           discrepancy(a.d2L_dydz, f.d2L_dydz),
                           discrepancy(a.d2L_dxdz, f.d2L_dxdz)};
    for (std::size_t e = 0; e < report.partials.size(); ++e) {
      auto& pd = report.partials[e];
      if (!pd.analytic) continue;
      if (errs[e] > pd.max_rel_error) {
        pd.max_rel_error = errs[e];
        pd.worst_probe = k;
      }
    }
  }
  for (auto& pd : report.partials) {
    pd.passed = !pd.analytic || pd.max_rel_error <= rtol;
    report.passed = report.passed && pd.passed;
  }
  return report;
}

}  // namespace nhfield
