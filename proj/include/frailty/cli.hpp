#pragma once

#include "frailty/estimator.hpp"
#include "frailty/frailty_family.hpp"
#include "frailty/simulation.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace frailty {

/// Everything one invocation of the command-line tool needs. Keys of the flat
/// JSON config file match the field names.
struct RunConfig {
  std::string command;  // fit | compare | simulate | bootstrap

  std::string data;  // input CSV
  std::string out;   // JSON output; empty writes to stdout
  std::string hazard_out;

  std::string frailty = "gamma";  // gamma | lognormal | invgauss | custom
  std::string custom_density;     // CSV of w,f,df for `custom`
  double custom_theta0 = 1.0;

  double theta_init = 0.01;
  double tol_gamma = 1e-6;
  double tol_score = 1e-8;
  int max_iter = 100;
  std::string jacobian = "analytic";  // analytic | fd

  // simulate
  std::size_t families = 300;
  std::size_t family_size = 2;
  std::vector<double> beta = {0.69314718055994529};
  double theta = 2.0;
  double censor_mean = 130.0;
  double censor_sd = 15.0;
  int replicates = 500;

  // bootstrap
  int B = 200;
  std::string estimator = "pseudo_full";  // pseudo_full | em

  std::optional<std::uint64_t> seed;
  int threads = 0;  // 0 defers to FRAILTY_THREADS, then 1
};

/// Overlays the keys present in `j` onto `base`. Unknown keys are an error.
RunConfig apply_config(const nlohmann::json& j, RunConfig base);

FrailtyFamily make_family(const RunConfig& config);
FitConfig make_fit_config(const RunConfig& config);
/// Simulation design from the config; the seed defaults to the design's own.
SimDesign make_design(const RunConfig& config);

/// Runs one command. Results go to `out` (or the configured files), errors
/// and warnings to `err`. Returns 0 on success, 2 when an estimator did not
/// converge, 1 on bad input.
int run(const RunConfig& config, std::ostream& out, std::ostream& err);

}  // namespace frailty
