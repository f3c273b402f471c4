#pragma once

// Command-line front end: simulate, check and convergence.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace nhfield::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitSolver = 3;
inline constexpr int kExitCheck = 4;

/// Environment variable naming the default output directory.
inline constexpr const char* kOutputDirEnv = "NHFIELD_OUTPUT_DIR";

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string model = "tire";
  std::map<std::string, double> params;

  double h = 1e-3;
  /// Unset means 10 for mechanical models and 1 for field models.
  std::optional<double> t_end;
  bool project = false;
  int record_every = 1;
  double drift_ceiling = 1e-3;

  int Nb = 64;
  double Lb = 1.0;
  std::string boundary = "periodic";

  /// Empty means $NHFIELD_OUTPUT_DIR, or the working directory.
  std::string output_dir;
  /// File name prefix; empty means the model name.
  std::string prefix;
  bool plots = false;

  bool eq20_residual = false;
  bool energy = true;
  bool multipliers = true;

  std::uint64_t seed = 2024;
  int variations = 32;
  int probes = 20;

  /// Step sizes (mechanical) or node counts (field) for `convergence`.
  std::vector<double> resolutions;
};

/// Parses "key=value" parameter overrides.
std::map<std::string, double> parse_param_overrides(const std::vector<std::string>& items);

/// Checks ranges and the model name; throws ConfigError.
void validate(const RunConfig& config);

std::string resolved_output_dir(const RunConfig& config);
std::string trajectory_csv_path(const RunConfig& config);
std::string diagnostics_csv_path(const RunConfig& config);
std::string convergence_csv_path(const RunConfig& config);

/// %.17g.
std::string format_number(double v);

/// Each returns an exit status and reports on `out` (results) and `err`
/// (failures). Nothing is written to disk unless the run succeeds.
int cmd_simulate(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_check(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_convergence(const RunConfig& config, std::ostream& out, std::ostream& err);

/// Full argument parsing plus dispatch.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace nhfield::cli
