#include "cli.hpp"

#include "svg.hpp"

#include "nhfield/cauchy.hpp"
#include "nhfield/constraints.hpp"
#include "nhfield/jet.hpp"
#include "nhfield/mechanics.hpp"
#include "nhfield/models.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

namespace nhfield::cli {

namespace {

// Drift below this is rounding noise and carries no order information.
constexpr double kDriftFloor = 1e-12;

using OutputFiles = std::vector<std::pair<std::string, std::string>>;

bool is_field(const RegisteredModel& m) { return m.kind == ModelKind::Field; }

double t_end_for(const RunConfig& cfg, const RegisteredModel& m) {
  if (cfg.t_end) return *cfg.t_end;
  return is_field(m) ? 1.0 : 10.0;
}

RegisteredModel build_model(const RunConfig& cfg) {
  try {
    return make_model(cfg.model, cfg.params);
  } catch (const ConstructionError& e) {
    throw ConfigError(e.what());
  } catch (const ProjectionError& e) {
    throw ConfigError(std::string("initial state: ") + e.what());
  }
}

CauchyGrid build_grid(const RunConfig& cfg, int m, int nodes) {
  if (cfg.boundary == "fixed") {
    return CauchyGrid::fixed(cfg.Lb, nodes, Vector::Zero(m), Vector::Zero(m));
  }
  return CauchyGrid::periodic(cfg.Lb, nodes);
}

int field_mode(const RegisteredModel& m) {
  const double mode = m.parameters.at("mode");
  if (!(mode >= 1.0) || mode != std::floor(mode) || mode > 1e6) {
    throw ConfigError("parameter 'mode' must be a positive integer");
  }
  return static_cast<int>(mode);
}

// Wavenumber of the initial profile: whole periods on periodic grids, whole
// half periods between pinned ends.
double wavenumber(const RunConfig& cfg, int mode) {
  const double base = std::numbers::pi * mode / cfg.Lb;
  return cfg.boundary == "fixed" ? base : 2.0 * base;
}

CauchyState field_initial_state(const RunConfig& cfg, const RegisteredModel& m,
                                const CauchyGrid& grid) {
  const int nodes = grid.nodes;
  const double amp = m.parameters.at("amplitude");
  const double k = wavenumber(cfg, field_mode(m));
  const bool fixed = cfg.boundary == "fixed";
  CauchyState s;
  if (m.name == "wave") {
    s.Y = Matrix::Zero(1, nodes);
    s.V = Matrix::Zero(1, nodes);
    for (int j = 0; j < nodes; ++j) s.Y(0, j) = amp * std::sin(k * grid.position(j));
    return s;
  }
  s.Y = Matrix::Zero(2, nodes);
  s.V = Matrix::Zero(2, nodes);
  for (int j = 0; j < nodes; ++j) {
    const double b = grid.position(j);
    s.Y(0, j) = amp * std::sin(k * b);
    s.Y(1, j) = 0.5 * amp * (fixed ? std::sin(2.0 * k * b) : std::cos(k * b));
    s.V(1, j) = 0.3 * amp * std::sin((fixed ? 1.0 : 2.0) * k * b);
  }
  return s;  // V(0, .) comes from the projection inside evolve_field
}

double wave_exact(const RunConfig& cfg, const RegisteredModel& m, double t, double b) {
  const double k = wavenumber(cfg, field_mode(m));
  return m.parameters.at("amplitude") * std::sin(k * b) * std::cos(k * t);
}

double wave_linf_error(const RunConfig& cfg, const RegisteredModel& m,
                       const CauchyGrid& grid, const CauchyState& s) {
  double err = 0.0;
  for (int j = 0; j < grid.nodes; ++j) {
    err = std::max(err, std::abs(s.Y(0, j) - wave_exact(cfg, m, s.t, grid.position(j))));
  }
  return err;
}

std::string join_vector(const Vector& v) {
  std::ostringstream os;
  os << '[';
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) os << ", ";
    os << format_number(v(i));
  }
  os << ']';
  return os.str();
}

void report_degenerate(const DegenerateSystemError& e, std::ostream& err) {
  err << "error: solver degeneracy: " << e.what() << "\n"
      << "  state: t=" << format_number(e.state().t) << " q=" << join_vector(e.state().q)
      << " qdot=" << join_vector(e.state().qdot) << "\n"
      << "  smallest singular value: " << format_number(e.min_singular_value()) << "\n";
}

void write_files(const OutputFiles& files) {
  for (const auto& [path, content] : files) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) {
      std::error_code ec;
      std::filesystem::create_directories(p.parent_path(), ec);
      if (ec) throw ConfigError("cannot create directory " + p.parent_path().string());
    }
    std::ofstream f(p, std::ios::binary);
    if (!f) throw ConfigError("cannot open " + path + " for writing");
    f << content;
    if (!f) throw ConfigError("failed writing " + path);
  }
}

std::string output_path(const RunConfig& cfg, const std::string& suffix) {
  const std::string prefix = cfg.prefix.empty() ? cfg.model : cfg.prefix;
  return (std::filesystem::path(resolved_output_dir(cfg)) / (prefix + suffix)).string();
}

class CsvWriter {
 public:
  void header(const std::vector<std::string>& names) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (i) os_ << ',';
      os_ << names[i];
    }
    os_ << '\n';
  }
  CsvWriter& cell(double v) {
    if (!first_) os_ << ',';
    os_ << format_number(v);
    first_ = false;
    return *this;
  }
  void end_row() {
    os_ << '\n';
    first_ = true;
  }
  std::string str() const { return os_.str(); }

 private:
  std::ostringstream os_;
  bool first_ = true;
};

IntegrateOptions integrate_options(const RunConfig& cfg) {
  IntegrateOptions opt;
  opt.project_each_step = cfg.project;
  opt.record_every = cfg.record_every;
  opt.drift_ceiling = cfg.drift_ceiling;
  return opt;
}

// Mechanical simulate --------------------------------------------------------

OutputFiles simulate_mechanical(const RunConfig& cfg, const RegisteredModel& m,
                                std::ostream& out) {
  const double t_end = t_end_for(cfg, m);
  const Trajectory tr = integrate(m.lagrangian, m.constraints, m.initial_state,
                                  cfg.h, t_end, integrate_options(cfg));
  const auto& names = m.lagrangian.space.fiber_names();
  const int k = m.constraints.count;

  std::vector<std::string> header{"t"};
  for (const auto& n : names) header.push_back(n);
  for (const auto& n : names) header.push_back(n + "dot");
  for (int a = 1; a <= k; ++a) header.push_back("Phi" + std::to_string(a));
  if (cfg.multipliers) {
    for (int a = 1; a <= k; ++a) header.push_back("lambda" + std::to_string(a));
  }
  if (cfg.energy) header.push_back("E");

  CsvWriter traj, diag;
  traj.header(header);
  diag.header({"t", "max_abs_Phi", "kkt_residual", "energy_deviation"});
  const double e0 = tr.diagnostics.front().energy;
  for (std::size_t s = 0; s < tr.size(); ++s) {
    const MechState& st = tr.states[s];
    const SampleDiagnostics& d = tr.diagnostics[s];
    traj.cell(tr.times[s]);
    for (Eigen::Index i = 0; i < st.q.size(); ++i) traj.cell(st.q(i));
    for (Eigen::Index i = 0; i < st.qdot.size(); ++i) traj.cell(st.qdot(i));
    for (int a = 0; a < k; ++a) traj.cell(d.phi(a));
    if (cfg.multipliers) {
      for (int a = 0; a < k; ++a) traj.cell(d.lambda(a));
    }
    if (cfg.energy) traj.cell(d.energy);
    traj.end_row();
    diag.cell(tr.times[s])
        .cell(k > 0 ? d.phi.cwiseAbs().maxCoeff() : 0.0)
        .cell(d.kkt_residual)
        .cell(std::abs(d.energy - e0));
    diag.end_row();
  }

  out << "model " << m.name << ": " << tr.size() << " samples, t_end=" << t_end
      << ", h=" << cfg.h << "\n"
      << "max |Phi| = " << format_number(tr.max_constraint_residual()) << "\n"
      << "max |E - E0| = " << format_number(tr.max_energy_deviation()) << "\n";

  OutputFiles files{{trajectory_csv_path(cfg), traj.str()},
                    {diagnostics_csv_path(cfg), diag.str()}};

  if (cfg.plots) {
    Chart coords{"coordinates", "t", "q", {}, false, false};
    for (std::size_t i = 0; i < names.size(); ++i) {
      Series s{names[i], tr.times, {}};
      for (const auto& st : tr.states) s.y.push_back(st.q(static_cast<Eigen::Index>(i)));
      coords.series.push_back(std::move(s));
    }
    files.emplace_back(output_path(cfg, "_coordinates.svg"), render_svg(coords));
    if (k > 0) {
      Chart res{"constraint residuals", "t", "Phi", {}, false, true};
      for (int a = 0; a < k; ++a) {
        Series s{"Phi" + std::to_string(a + 1), tr.times, {}};
        for (const auto& d : tr.diagnostics) s.y.push_back(d.phi(a));
        res.series.push_back(std::move(s));
      }
      files.emplace_back(output_path(cfg, "_residuals.svg"), render_svg(res));
    }
    if (m.name == "tire") {
      TireParams p;
      const auto& q = m.parameters;
      p.a = q.at("a"), p.b = q.at("b"), p.rho = q.at("rho"), p.sigma = q.at("sigma");
      p.N = q.at("N"), p.V = q.at("V"), p.alpha = q.at("alpha"), p.beta = q.at("beta");
      p.gamma = q.at("gamma"), p.m_x = q.at("m_x"), p.I_kappa = q.at("I_kappa");
      p.I_theta = q.at("I_theta");
      Chart spec{"linearized spectrum", "Re", "Im", {}, true, false};
      Series s{"eigenvalues", {}, {}};
      for (const auto& z : tire_linearize(p)) {
        s.x.push_back(z.real());
        s.y.push_back(z.imag());
      }
      spec.series.push_back(std::move(s));
      files.emplace_back(output_path(cfg, "_spectrum.svg"), render_svg(spec));
    }
  }
  return files;
}

// Field simulate -------------------------------------------------------------

OutputFiles simulate_field(const RunConfig& cfg, const RegisteredModel& m, std::ostream& out) {
  const double t_end = t_end_for(cfg, m);
  const CauchyGrid grid = build_grid(cfg, m.lagrangian.space.fiber_dim(), cfg.Nb);
  const CauchyState s0 = field_initial_state(cfg, m, grid);
  const CauchySystem sys = semidiscretize(m.lagrangian, m.constraints, grid);
  const FieldTrajectory ft = evolve_field(sys, s0, cfg.h, t_end, integrate_options(cfg));

  const auto& names = m.lagrangian.space.fiber_names();
  const int M = sys.fiber_dim();
  const int N = sys.nodes();
  const int k = sys.constraint_count();
  const bool wave = m.name == "wave";
  auto node = [](const std::string& s, int j) { return s + "[" + std::to_string(j) + "]"; };

  std::vector<std::string> header{"t"};
  for (int j = 0; j < N; ++j) {
    for (int i = 0; i < M; ++i) header.push_back(node(names[i], j));
  }
  for (int j = 0; j < N; ++j) {
    for (int i = 0; i < M; ++i) header.push_back(node(names[i] + "dot", j));
  }
  for (int j = 0; j < N; ++j) {
    for (int a = 1; a <= k; ++a) header.push_back(node("Phi" + std::to_string(a), j));
  }
  if (cfg.multipliers) {
    for (int j = 0; j < N; ++j) {
      for (int a = 1; a <= k; ++a) header.push_back(node("lambda" + std::to_string(a), j));
    }
  }
  if (cfg.energy) header.push_back("E");
  if (wave) header.push_back("Linf_err");

  std::vector<std::string> diag_header{"t", "max_abs_Phi", "kkt_residual", "energy_deviation"};
  std::vector<CauchyVariation> variations;
  if (cfg.eq20_residual) {
    diag_header.push_back("eq20_residual");
    variations = random_variations(sys, cfg.variations, cfg.seed);
  }

  CsvWriter traj, diag;
  traj.header(header);
  diag.header(diag_header);
  const Trajectory& mech = ft.mechanics;
  const double e0 = mech.diagnostics.front().energy;
  double worst_err = 0.0, worst_eq20 = 0.0;
  std::vector<double> eq20_series;
  for (std::size_t s = 0; s < ft.size(); ++s) {
    const CauchyState& st = ft.states[s];
    const SampleDiagnostics& d = mech.diagnostics[s];
    traj.cell(ft.times[s]);
    for (int j = 0; j < N; ++j) {
      for (int i = 0; i < M; ++i) traj.cell(st.Y(i, j));
    }
    for (int j = 0; j < N; ++j) {
      for (int i = 0; i < M; ++i) traj.cell(st.V(i, j));
    }
    for (Eigen::Index r = 0; r < d.phi.size(); ++r) traj.cell(d.phi(r));
    if (cfg.multipliers && k > 0) {
      const Matrix lam = form_multipliers(sys, d.lambda);
      for (int j = 0; j < N; ++j) {
        for (int a = 0; a < k; ++a) traj.cell(lam(a, j));
      }
    }
    if (cfg.energy) traj.cell(d.energy);
    if (wave) {
      const double err = wave_linf_error(cfg, m, grid, st);
      worst_err = std::max(worst_err, err);
      traj.cell(err);
    }
    traj.end_row();

    diag.cell(ft.times[s])
        .cell(k > 0 ? d.phi.cwiseAbs().maxCoeff() : 0.0)
        .cell(d.kkt_residual)
        .cell(std::abs(d.energy - e0));
    if (cfg.eq20_residual) {
      const double r = dedonder_residual_20(sys, ft, ft.times[s], variations);
      worst_eq20 = std::max(worst_eq20, r);
      eq20_series.push_back(r);
      diag.cell(r);
    }
    diag.end_row();
  }

  out << "model " << m.name << ": " << ft.size() << " samples, Nb=" << N << ", t_end=" << t_end
      << ", h=" << cfg.h << "\n"
      << "max |Phi| = " << format_number(mech.max_constraint_residual()) << "\n"
      << "max |E - E0| = " << format_number(mech.max_energy_deviation()) << "\n";
  if (wave) out << "max Linf error vs exact = " << format_number(worst_err) << "\n";
  if (cfg.eq20_residual) out << "max eq20 residual = " << format_number(worst_eq20) << "\n";

  OutputFiles files{{trajectory_csv_path(cfg), traj.str()},
                    {diagnostics_csv_path(cfg), diag.str()}};
  if (cfg.plots) {
    Chart prof{"final profile", "b", "field", {}, false, false};
    const CauchyState& last = ft.states.back();
    for (int i = 0; i < M; ++i) {
      Series s{names[i], {}, {}};
      for (int j = 0; j < N; ++j) {
        s.x.push_back(grid.position(j));
        s.y.push_back(last.Y(i, j));
      }
      prof.series.push_back(std::move(s));
    }
    if (wave) {
      Series s{"exact", {}, {}};
      for (int j = 0; j < N; ++j) {
        s.x.push_back(grid.position(j));
        s.y.push_back(wave_exact(cfg, m, last.t, grid.position(j)));
      }
      prof.series.push_back(std::move(s));
    }
    files.emplace_back(output_path(cfg, "_profile.svg"), render_svg(prof));
    Chart res{"residuals", "t", "residual", {}, false, true};
    if (k > 0) {
      Series s{"max |Phi|", ft.times, {}};
      for (const auto& d : mech.diagnostics) s.y.push_back(d.phi.cwiseAbs().maxCoeff());
      res.series.push_back(std::move(s));
    }
    if (cfg.eq20_residual) res.series.push_back(Series{"eq20", ft.times, eq20_series});
    if (!res.series.empty()) {
      files.emplace_back(output_path(cfg, "_residuals.svg"), render_svg(res));
    }
  }
  return files;
}

// Check ------------------------------------------------------------------------

struct CheckRow {
  std::string name;
  std::string status;  // PASS, FAIL, WAIVED, SKIP
  std::string detail;
};

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

std::vector<JetPoint> random_probes(const FiberedSpace& space, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<JetPoint> probes;
  for (int p = 0; p < count; ++p) {
    JetPoint jet = JetPoint::origin(space);
    for (Eigen::Index i = 0; i < jet.x.size(); ++i) jet.x(i) = u(rng);
    for (Eigen::Index i = 0; i < jet.y.size(); ++i) jet.y(i) = u(rng);
    for (Eigen::Index i = 0; i < jet.z.size(); ++i) jet.z.data()[i] = u(rng);
    probes.push_back(std::move(jet));
  }
  return probes;
}

double relative_gap(const Matrix& analytic, const Matrix& differenced) {
  if (analytic.size() == 0) return 0.0;
  const double scale = std::max(1.0, analytic.cwiseAbs().maxCoeff());
  return (analytic - differenced).cwiseAbs().maxCoeff() / scale;
}

}  // namespace

std::map<std::string, double> parse_param_overrides(const std::vector<std::string>& items) {
  std::map<std::string, double> out;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("parameter override '" + item + "' is not key=value");
    }
    const std::string key = item.substr(0, eq);
    const std::string text = item.substr(eq + 1);
    char* end = nullptr;
    const double value = std::strtod(text.c_str(), &end);
    if (text.empty() || end != text.c_str() + text.size() || !std::isfinite(value)) {
      throw ConfigError("parameter '" + key + "' has non-numeric value '" + text + "'");
    }
    out[key] = value;
  }
  return out;
}

void validate(const RunConfig& c) {
  const auto names = model_names();
  if (std::find(names.begin(), names.end(), c.model) == names.end()) {
    throw ConfigError("unknown model '" + c.model + "'");
  }
  if (!(c.h > 0.0) || !std::isfinite(c.h)) throw ConfigError("h must be > 0");
  if (c.t_end && (!(*c.t_end > 0.0) || !std::isfinite(*c.t_end))) {
    throw ConfigError("t-end must be > 0");
  }
  if (c.record_every < 1) throw ConfigError("record-every must be >= 1");
  if (!(c.drift_ceiling > 0.0)) throw ConfigError("drift-ceiling must be > 0");
  if (c.Nb < 4) throw ConfigError("Nb must be >= 4");
  if (!(c.Lb > 0.0) || !std::isfinite(c.Lb)) throw ConfigError("Lb must be > 0");
  if (c.boundary != "periodic" && c.boundary != "fixed") {
    throw ConfigError("boundary must be 'periodic' or 'fixed'");
  }
  if (c.variations < 1) throw ConfigError("variations must be >= 1");
  if (c.probes < 1) throw ConfigError("probes must be >= 1");
  for (double r : c.resolutions) {
    if (!(r > 0.0) || !std::isfinite(r)) throw ConfigError("resolutions must be > 0");
  }
}

std::string resolved_output_dir(const RunConfig& c) {
  if (!c.output_dir.empty()) return c.output_dir;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return ".";
}

std::string trajectory_csv_path(const RunConfig& c) { return output_path(c, "_trajectory.csv"); }
std::string diagnostics_csv_path(const RunConfig& c) { return output_path(c, "_diagnostics.csv"); }
std::string convergence_csv_path(const RunConfig& c) { return output_path(c, "_convergence.csv"); }

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int cmd_simulate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    validate(cfg);
    const RegisteredModel m = build_model(cfg);
    if (is_field(m)) field_mode(m);
    const OutputFiles files =
        is_field(m) ? simulate_field(cfg, m, out) : simulate_mechanical(cfg, m, out);
    write_files(files);
    for (const auto& f : files) out << "wrote " << f.first << "\n";
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ConstructionError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DegenerateSystemError& e) {
    report_degenerate(e, err);
    return kExitSolver;
  } catch (const std::runtime_error& e) {
    err << "error: solver failure: " << e.what() << "\n";
    return kExitSolver;
  }
}

int cmd_check(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  RegisteredModel m;
  try {
    validate(cfg);
    m = build_model(cfg);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  std::vector<CheckRow> rows;
  const JetPoint ref = is_field(m) ? JetPoint::origin(m.lagrangian.space) : m.initial_state.jet();
  const int k = m.constraints.count;

  try {
    const HessianRegularity hr = hessian_regularity(m.lagrangian, ref);
    const double floor = std::max(hr.max_singular_value, 1.0) * 1e-10;
    const long vanishing = (hr.singular_values.array() <= floor).count();
    std::string detail = "singular values " + sci(hr.min_singular_value) + " .. " +
                         sci(hr.max_singular_value) + ", " + std::to_string(vanishing) +
                         " vanishing";
    if (hr.regular) {
      rows.push_back({"Hessian regularity", "PASS", "regular; " + detail});
    } else if (m.degenerate_hessian_expected && k > 0) {
      try {
        const MultiplierSolution sol =
            multiplier_solve(m.lagrangian, m.constraints, m.initial_state);
        rows.push_back({"Hessian regularity", "WAIVED",
                        "degenerate (waived: augmented system regular); " + detail});
        rows.push_back({"augmented system", "PASS",
                        "KKT residual " + sci(sol.kkt_residual)});
      } catch (const DegenerateSystemError& e) {
        rows.push_back({"Hessian regularity", "FAIL", "degenerate; " + detail});
        rows.push_back({"augmented system", "FAIL",
                        "singular, smallest singular value " + sci(e.min_singular_value())});
      }
    } else {
      rows.push_back({"Hessian regularity", "FAIL", "degenerate; " + detail});
    }

    if (k == 0) {
      rows.push_back({"constraint independence", "SKIP", "no constraints"});
    } else {
      const ConstraintRegularity cr = constraint_regularity(m.constraints, ref);
      rows.push_back({"constraint independence", cr.independent ? "PASS" : "FAIL",
                      std::string(cr.independent ? "independent" : "dependent") + "; rank " +
                          std::to_string(cr.rank) + " of " + std::to_string(k) +
                          ", min singular value " + sci(cr.min_singular_value)});
    }

    const auto probes = random_probes(m.lagrangian.space, cfg.probes, cfg.seed);
    const DerivativeCheckReport dr = check_derivatives(m.lagrangian, probes);
    for (const auto& p : dr.partials) {
      rows.push_back({"derivative " + p.name, p.passed ? "PASS" : "FAIL",
                      std::string(p.analytic ? "analytic" : "differenced") +
                          ", max rel error " + sci(p.max_rel_error) + " over " +
                          std::to_string(probes.size()) + " probes"});
    }

    if (k > 0) {
      double worst = 0.0;
      for (const auto& p : probes) {
        const ConstraintDerivatives a = eval_constraint_derivatives(m.constraints, p);
        const ConstraintDerivatives d = eval_constraint_derivatives_differenced(m.constraints, p);
        worst = std::max({worst, relative_gap(a.dPhi_dx, d.dPhi_dx),
                          relative_gap(a.dPhi_dy, d.dPhi_dy),
                          relative_gap(a.dPhi_dz, d.dPhi_dz)});
      }
      rows.push_back({"constraint jacobians", worst <= 1e-5 ? "PASS" : "FAIL",
                      "max rel error " + sci(worst) + " over " +
                          std::to_string(probes.size()) + " probes"});
    }
  } catch (const std::exception& e) {
    rows.push_back({"evaluation", "FAIL", e.what()});
  }

  bool ok = true;
  out << "model: " << m.name << " (seed " << cfg.seed << ")\n";
  out << std::left << std::setw(28) << "check" << std::setw(8) << "status" << "detail\n";
  for (const auto& r : rows) {
    out << std::left << std::setw(28) << r.name << std::setw(8) << r.status << r.detail << "\n";
    if (r.status == "FAIL") ok = false;
  }
  out << (ok ? "all checks passed" : "checks FAILED") << "\n";
  if (!ok) err << "error: check failed for model " << m.name << "\n";
  return ok ? kExitOk : kExitCheck;
}

namespace {

struct MechRun {
  double h = 0.0;
  double drift = 0.0;
  Vector final_q;
  Vector final_qdot;
};

struct FieldRun {
  int nodes = 0;
  double error = 0.0;  // wave only
  double drift = 0.0;
  double eq20 = 0.0;
};

double order(double coarse, double fine, double ratio) {
  if (!(coarse > 0.0) || !(fine > 0.0)) return std::nan("");
  return std::log(coarse / fine) / std::log(ratio);
}

std::string order_text(double o) { return std::isfinite(o) ? sci(o) : std::string("-"); }

}  // namespace

int cmd_convergence(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  RegisteredModel probe;
  std::vector<double> res = cfg.resolutions;
  try {
    validate(cfg);
    probe = build_model(cfg);
    if (res.empty()) {
      if (!is_field(probe)) res = {0.04, 0.02, 0.01};
      else if (probe.name == "wave") res = {32, 64, 128};
      else res = {16, 32, 64};
    }
    if (res.size() < 3) throw ConfigError("need ≥ 3 resolutions");
    if (is_field(probe)) {
      field_mode(probe);
      for (double r : res) {
        if (r != std::floor(r) || r < 4) throw ConfigError("field resolutions must be integers >= 4");
      }
      std::sort(res.begin(), res.end());
    } else {
      std::sort(res.begin(), res.end(), std::greater<>());
    }
    if (std::adjacent_find(res.begin(), res.end()) != res.end()) {
      throw ConfigError("resolutions must be distinct");
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  const double t_end = t_end_for(cfg, probe);
  CsvWriter csv;
  std::ostringstream report;
  report << std::setprecision(6);

  try {
    if (!is_field(probe)) {
      std::vector<std::future<MechRun>> jobs;
      for (double h : res) {
        jobs.push_back(std::async(std::launch::async, [&cfg, h, t_end] {
          const RegisteredModel m = build_model(cfg);
          IntegrateOptions opt = integrate_options(cfg);
          opt.project_each_step = false;
          opt.record_every = std::max(1, static_cast<int>(std::lround(t_end / h)));
          const Trajectory tr =
              integrate(m.lagrangian, m.constraints, m.initial_state, h, t_end, opt);
          return MechRun{h, tr.max_constraint_residual(), tr.states.back().q,
                         tr.states.back().qdot};
        }));
      }
      std::vector<MechRun> runs;
      for (auto& j : jobs) runs.push_back(j.get());

      // Successive final-state differences; their ratio gives the order of
      // the scheme without an exact solution.
      std::vector<double> diffs;
      for (std::size_t i = 0; i + 1 < runs.size(); ++i) {
        const double dq = (runs[i].final_q - runs[i + 1].final_q).cwiseAbs().maxCoeff();
        const double dv = (runs[i].final_qdot - runs[i + 1].final_qdot).cwiseAbs().maxCoeff();
        diffs.push_back(std::max(dq, dv));
      }

      csv.header({"h", "max_abs_Phi", "drift_order", "state_difference", "trajectory_order"});
      report << probe.name << " step study (t_end=" << t_end << ", no projection)\n";
      report << std::left << std::setw(12) << "h" << std::setw(14) << "max|Phi|"
             << std::setw(14) << "drift order" << std::setw(16) << "|s_h - s_h/2|"
             << "trajectory order\n";
      double min_drift_order = INFINITY, min_traj_order = INFINITY;
      bool drift_floor = false;
      for (std::size_t i = 0; i < runs.size(); ++i) {
        double d_order = NAN, t_order = NAN;
        if (i > 0) {
          if (runs[i].drift <= kDriftFloor || runs[i - 1].drift <= kDriftFloor) {
            drift_floor = true;
          } else {
            d_order = order(runs[i - 1].drift, runs[i].drift, runs[i - 1].h / runs[i].h);
            min_drift_order = std::min(min_drift_order, d_order);
          }
        }
        const double diff = i < diffs.size() ? diffs[i] : NAN;
        if (i > 0 && i < diffs.size()) {
          t_order = order(diffs[i - 1], diffs[i], runs[i - 1].h / runs[i].h);
          min_traj_order = std::min(min_traj_order, t_order);
        }
        csv.cell(runs[i].h).cell(runs[i].drift).cell(d_order).cell(diff).cell(t_order);
        csv.end_row();
        report << std::left << std::setw(12) << runs[i].h << std::setw(14) << sci(runs[i].drift)
               << std::setw(14) << order_text(d_order) << std::setw(16)
               << (std::isfinite(diff) ? sci(diff) : std::string("-")) << order_text(t_order)
               << "\n";
      }
      if (std::isfinite(min_drift_order)) {
        report << "observed drift order: " << min_drift_order << "\n";
      }
      if (drift_floor) {
        report << "drift at the rounding floor (max|Phi| <= " << sci(kDriftFloor)
               << "); the constraint is preserved to rounding and its order is not resolvable\n";
      }
      if (std::isfinite(min_traj_order)) {
        report << "observed trajectory order: " << min_traj_order << "\n";
      }
    } else {
      std::vector<std::future<FieldRun>> jobs;
      for (double r : res) {
        const int nodes = static_cast<int>(r);
        jobs.push_back(std::async(std::launch::async, [&cfg, nodes, t_end] {
          const RegisteredModel m = build_model(cfg);
          const CauchyGrid grid = build_grid(cfg, m.lagrangian.space.fiber_dim(), nodes);
          const CauchySystem sys = semidiscretize(m.lagrangian, m.constraints, grid);
          IntegrateOptions opt = integrate_options(cfg);
          opt.record_every = 1;
          const FieldTrajectory ft =
              evolve_field(sys, field_initial_state(cfg, m, grid), cfg.h, t_end, opt);
          FieldRun run;
          run.nodes = nodes;
          run.drift = ft.mechanics.max_constraint_residual();
          if (m.name == "wave") {
            for (const auto& s : ft.states) {
              run.error = std::max(run.error, wave_linf_error(cfg, m, grid, s));
            }
          }
          run.eq20 = dedonder_residual_20(sys, ft, ft.times.back(),
                                          random_variations(sys, cfg.variations, cfg.seed));
          return run;
        }));
      }
      std::vector<FieldRun> runs;
      for (auto& j : jobs) runs.push_back(j.get());

      const bool wave = probe.name == "wave";
      csv.header({"Nb", "Linf_err", "spatial_order", "max_abs_Phi", "eq20_residual",
                  "eq20_order"});
      report << probe.name << " Nb study (h=" << cfg.h << ", t_end=" << t_end << ", "
             << cfg.boundary << ")\n";
      report << std::left << std::setw(8) << "Nb" << std::setw(14) << "Linf err"
             << std::setw(14) << "order" << std::setw(14) << "max|Phi|" << std::setw(14)
             << "eq20" << "eq20 order\n";
      double min_order = INFINITY, min_eq20_order = INFINITY;
      for (std::size_t i = 0; i < runs.size(); ++i) {
        double e_order = NAN, r_order = NAN;
        if (i > 0) {
          const double ratio = static_cast<double>(runs[i].nodes) / runs[i - 1].nodes;
          if (wave) {
            e_order = order(runs[i - 1].error, runs[i].error, ratio);
            min_order = std::min(min_order, e_order);
          }
          r_order = order(runs[i - 1].eq20, runs[i].eq20, ratio);
          min_eq20_order = std::min(min_eq20_order, r_order);
        }
        csv.cell(runs[i].nodes)
            .cell(wave ? runs[i].error : NAN)
            .cell(e_order)
            .cell(runs[i].drift)
            .cell(runs[i].eq20)
            .cell(r_order);
        csv.end_row();
        report << std::left << std::setw(8) << runs[i].nodes << std::setw(14)
               << (wave ? sci(runs[i].error) : std::string("-")) << std::setw(14)
               << order_text(e_order) << std::setw(14) << sci(runs[i].drift) << std::setw(14)
               << sci(runs[i].eq20) << order_text(r_order) << "\n";
      }
      if (wave) report << "observed spatial order: " << min_order << "\n";
      report << "observed eq20 residual order: " << min_eq20_order << "\n";
    }
    write_files({{convergence_csv_path(cfg), csv.str()}});
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DegenerateSystemError& e) {
    report_degenerate(e, err);
    return kExitSolver;
  } catch (const std::runtime_error& e) {
    err << "error: solver failure: " << e.what() << "\n";
    return kExitSolver;
  }
  out << report.str() << "wrote " << convergence_csv_path(cfg) << "\n";
  return kExitOk;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  std::vector<std::string> params;
  double t_end = 0.0;

  CLI::App app{"Solver for nonholonomic Lagrangian mechanics and 1+1 field theories"};
  app.name("nhfield");
  app.set_help_flag("--help", "Print help and exit");
  app.set_config("--config", "", "Flat key=value file; command-line flags win");
  app.allow_config_extras(false);
  app.require_subcommand(1, 1);
  app.fallthrough();

  app.add_option("--model", cfg.model, "tire, particle, oscillator, wave, scalar-constrained");
  app.add_option("--param", params, "Model parameter override key=value (repeatable)");
  app.add_option("--h", cfg.h, "Time step");
  CLI::Option* t_end_opt = app.add_option("--t-end", t_end, "Final time (10 mechanical, 1 field)");
  app.add_flag("--project,!--no-project", cfg.project, "Project velocities after every step");
  app.add_option("--record-every", cfg.record_every, "Record every n-th step");
  app.add_option("--drift-ceiling", cfg.drift_ceiling, "Abort when max|Phi| exceeds this");
  app.add_option("--Nb", cfg.Nb, "Grid nodes for field models");
  app.add_option("--Lb", cfg.Lb, "Length of the Cauchy surface");
  app.add_option("--boundary", cfg.boundary, "periodic or fixed");
  app.add_option("--output-dir", cfg.output_dir,
                 std::string("Output directory (default $") + kOutputDirEnv + " or .)");
  app.add_option("--prefix", cfg.prefix, "Output file prefix (default model name)");
  app.add_flag("--plots,!--no-plots", cfg.plots, "Write SVG charts next to the CSVs");
  app.add_flag("--eq20-residual,!--no-eq20-residual", cfg.eq20_residual,
               "Field models: constrained evolution residual per sample");
  app.add_flag("--energy,!--no-energy", cfg.energy, "Energy column");
  app.add_flag("--multipliers,!--no-multipliers", cfg.multipliers, "Multiplier columns");
  app.add_option("--seed", cfg.seed, "Seed for random probes and test variations");
  app.add_option("--variations", cfg.variations, "Test variations for the residual");
  app.add_option("--probes", cfg.probes, "Random jets for derivative checks");
  app.add_option("--resolutions", cfg.resolutions,
                 "Convergence study: step sizes (mechanical) or node counts (field)")
      ->delimiter(',');

  CLI::App* simulate = app.add_subcommand("simulate", "Integrate a model and write CSVs");
  CLI::App* check = app.add_subcommand("check", "Regularity and derivative checks");
  CLI::App* convergence = app.add_subcommand("convergence", "Step or grid halving study");
  for (CLI::App* sub : {simulate, check, convergence}) sub->set_help_flag("--help", "Print help");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  try {
    cfg.params = parse_param_overrides(params);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  if (t_end_opt->count() > 0) cfg.t_end = t_end;

  if (simulate->parsed()) return cmd_simulate(cfg, out, err);
  if (check->parsed()) return cmd_check(cfg, out, err);
  return cmd_convergence(cfg, out, err);
}

}  // namespace nhfield::cli
