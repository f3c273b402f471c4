#pragma once

// First-jet coordinates (x^mu, y^i, z^i_mu), Lagrangian densities and their
// partial derivatives.

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace nhfield {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Thrown when a model or constraint evaluates to a non-finite value.
class EvaluationDomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when a model, constraint set or configuration is malformed.
class ConstructionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dimensions and coordinate labels of a fibered space Y -> X.
///
/// `base_dim` (n) counts the independent variables x^mu, `fiber_dim` (m) the
/// field components y^i. Jet coordinates z^i_mu are flattened row-major over
/// (i, mu) with mu fastest, see jet_index().
class FiberedSpace {
 public:
  FiberedSpace() = default;
  FiberedSpace(std::vector<std::string> base_names,
               std::vector<std::string> fiber_names);

  /// Default labels x0.., y0...
  static FiberedSpace with_dims(int n, int m);

  int base_dim() const { return static_cast<int>(base_names_.size()); }
  int fiber_dim() const { return static_cast<int>(fiber_names_.size()); }
  int jet_dim() const { return base_dim() * fiber_dim(); }

  int jet_index(int i, int mu) const { return i * base_dim() + mu; }

  const std::vector<std::string>& base_names() const { return base_names_; }
  const std::vector<std::string>& fiber_names() const { return fiber_names_; }

  bool operator==(const FiberedSpace& other) const = default;

 private:
  std::vector<std::string> base_names_;
  std::vector<std::string> fiber_names_;
};

/// A point of the first jet space. z(i, mu) holds z^i_mu.
struct JetPoint {
  Vector x;
  Vector y;
  Matrix z;

  JetPoint() = default;
  JetPoint(Vector x_, Vector y_, Matrix z_)
      : x(std::move(x_)), y(std::move(y_)), z(std::move(z_)) {}

  /// All-zero point of the given space.
  static JetPoint origin(const FiberedSpace& space);

  bool matches(const FiberedSpace& space) const;
  /// Throws ConstructionError if the shapes do not match `space`.
  void require_matches(const FiberedSpace& space) const;

  /// z flattened in (i, mu) order, mu fastest.
  Vector z_flat() const;
  void set_z_flat(const Vector& flat);
};

using ScalarField = std::function<double(const JetPoint&)>;
using VectorField = std::function<Vector(const JetPoint&)>;
using MatrixField = std::function<Matrix(const JetPoint&)>;

struct DerivativeBundle;

/// Analytic partials a model may provide. Missing entries are differenced.
///
/// Shapes (N = m*n, flattened jet index):
///   dL_dy     m
///   dL_dz     N
///   d2L_dzdz  N x N
///   d2L_dydz  m x N   (row j: y^j, column: (i, mu))
///   d2L_dxdz  n x N   (row mu: x^mu)

struct LagrangianPartials {
  /// Every partial at once; takes precedence over the individual closures.
  std::function<DerivativeBundle(const JetPoint&)> all;
  VectorField dL_dy;
  VectorField dL_dz;
  MatrixField d2L_dzdz;
  MatrixField d2L_dydz;
  MatrixField d2L_dxdz;
};

/// Every partial of L needed by the field equations, evaluated at one point.
struct DerivativeBundle {
  double L = 0.0;
  Vector dL_dy;
  Vector dL_dz;
  Matrix d2L_dzdz;
  Matrix d2L_dydz;
  Matrix d2L_dxdz;
};

/// First-order Lagrangian density L(x, y, z) on a fibered space.
struct LagrangianModel {
  FiberedSpace space;
  ScalarField density;
  LagrangianPartials partials;
  double fd_step = 1e-5;

  double operator()(const JetPoint& p) const { return density(p); }
};

/// Evaluates L and all its partials at p. Analytic closures are used where
/// present; otherwise central differences with step fd_step * max(1, |c|)
/// for first derivatives and sqrt(fd_step) * max(1, |c|) when a second
/// derivative has to be taken from L alone.
DerivativeBundle eval_derivatives(const LagrangianModel& model,
                                  const JetPoint& p);

/// Same, but ignores the analytic closures entirely.
DerivativeBundle eval_derivatives_differenced(const LagrangianModel& model,
                                              const JetPoint& p);

struct HessianRegularity {
  bool regular = false;
  double min_singular_value = 0.0;
  double max_singular_value = 0.0;
  Vector singular_values;  // descending
};

/// Regularity of L at p: the (m*n) x (m*n) jet Hessian is non-singular
/// relative to its largest singular value (or to 1 when that is below 1e-8,
/// the differencing noise floor).
HessianRegularity hessian_regularity(const LagrangianModel& model,
                                     const JetPoint& p, double tol = 1e-10);

struct PartialDiscrepancy {
  std::string name;  // "dL_dy", "dL_dz", "d2L_dzdz", "d2L_dydz", "d2L_dxdz"
  bool analytic = false;
  double max_rel_error = 0.0;
  std::size_t worst_probe = 0;
  bool passed = true;
};

struct DerivativeCheckReport {
  std::vector<PartialDiscrepancy> partials;
  bool passed = true;

  /// Names of the partials that failed.
  std::vector<std::string> failures() const;
};

/// Compares each analytic closure with central differences of L over the
/// probes. Discrepancy is max|analytic - differenced| / max(1, max|analytic|).
DerivativeCheckReport check_derivatives(const LagrangianModel& model,
                                        const std::vector<JetPoint>& probes,
                                        double rtol = 1e-5);

namespace detail {

/// Step for coordinate value c.
inline double fd_scale(double step, double c) {
  return step * std::max(1.0, std::abs(c));
}

enum class Block { X, Y, Z };

/// Coordinate `index` of one block; z is addressed by the flattened index.
double& coord(JetPoint& p, Block block, int index, int base_dim);

}  // namespace detail

}  // namespace nhfield
