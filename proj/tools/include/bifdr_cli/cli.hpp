#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace bifdr::cli {

/// Process exit codes.
enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kDataError = 2,    ///< bad input, bad flags, unreadable or malformed files
  kSolverError = 3,  ///< a nuisance fit did not converge or overflowed
};

struct EstimateOptions {
  std::string data;
  std::string functional;
  std::string link_a = "identity";
  std::string link_b = "identity";
  int folds = 0;  ///< 0 = 2 for lin, 3 otherwise
  std::string lambda = "cv";
  int cv_folds = 10;
  double tol = 1e-7;
  int max_iter = 10000;
  double ci_level = 0.95;
  std::optional<double> delta;         ///< mnar_mean
  int arm = 1;                         ///< ate_arm
  std::string contrast;                ///< continuous_treatment: "centered"
  std::optional<double> policy_shift;  ///< policy_effect: t(d) = d + shift
  bool intercept = false;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out;
};

struct SimulateOptions {
  int experiment = 1;
  double alpha_a = 5.0;
  double alpha_b = 5.0;
  std::size_t n = 0;     ///< 0 = profile default
  std::size_t p = 0;
  std::size_t reps = 0;
  bool paper_scale = false;
  std::vector<std::string> estimators;  ///< empty = the experiment's defaults
  std::string lambda = "cv";
  int cv_folds = 10;
  double tol = 1e-7;
  int max_iter = 10000;
  bool allow_large = false;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out;
};

/// Fills the profile defaults (n, p, reps) and checks the size bound.
void resolve(SimulateOptions& options);

int cmd_estimate(const EstimateOptions& options, const std::vector<std::string>& argv,
                 std::ostream& log);
int cmd_simulate(SimulateOptions options, const std::vector<std::string>& argv,
                 std::ostream& log);
/// Re-runs the command recorded in a manifest, writing to `out` (or the recorded
/// output when empty).
int cmd_replay(const std::string& manifest, const std::string& out, std::ostream& log);

/// Full command line entry point: `bifdr <estimate|simulate|replay> ...`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bifdr::cli
