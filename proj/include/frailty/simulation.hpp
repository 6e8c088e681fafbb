#pragma once

#include "frailty/cox_em.hpp"
#include "frailty/estimator.hpp"
#include "frailty/frailty_family.hpp"
#include "frailty/model.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace frailty {

/// Gamma shared frailty with Weibull baseline Λ0(t) = (0.01 t)^4.6, standard
/// normal covariates and Normal(censor_mean, censor_sd²) censoring clamped at 0.
struct SimDesign {
  std::size_t families = 300;
  std::size_t family_size = 2;
  Eigen::VectorXd beta = Eigen::VectorXd::Constant(1, std::log(2.0));
  double theta = 2.0;  // 0 means W ≡ 1
  double censor_mean = 130.0;
  double censor_sd = 15.0;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Replicate `replicate` of the design. Each replicate draws from its own
/// stream keyed by (seed, replicate), so results do not depend on the order
/// replicates are generated in.
ClusteredDataset generate(const SimDesign& design, std::uint64_t replicate = 0);

enum class StudyEstimator { pseudo_full, em };

std::string to_string(StudyEstimator e);

struct StudyOptions {
  std::vector<StudyEstimator> estimators = {StudyEstimator::pseudo_full, StudyEstimator::em};
  std::string frailty = "gamma";
  FitConfig fit;
  EmConfig em;
  int threads = 1;
};

struct ParameterSummary {
  std::string name;
  double mean = NAN;
  double sd = NAN;       // empirical SD across replicates
  double mean_se = NAN;  // mean reported SE; NaN when the estimator has none
  double coverage = NAN; // share of Wald 95% intervals covering the truth
};

struct EstimatorReport {
  StudyEstimator estimator = StudyEstimator::pseudo_full;
  std::vector<ParameterSummary> parameters;  // β_1..β_p, θ
  Eigen::MatrixXd estimates;                 // used replicates x (p+1)
  Eigen::MatrixXd standard_errors;           // same shape, NaN without SEs
  int failures = 0;
  double seconds = 0.0;
};

struct StudyReport {
  SimDesign design;
  int requested = 0;
  int used = 0;  // replicates where every estimator converged
  std::vector<EstimatorReport> estimators;
  // Across-replicate correlation of the first two estimators, per parameter.
  std::vector<double> correlation;
  double censoring_fraction = NAN;
  std::vector<std::string> warnings;
};

StudyReport run_study(const SimDesign& design, int replicates, const StudyOptions& options = {});

/// Plain-text table laid out like a simulation results table: one block per
/// parameter with estimator columns.
std::string format_report(const StudyReport& report);

struct BootstrapResult {
  Eigen::VectorXd se;         // SD of γ̂ across successful resamples
  Eigen::MatrixXd estimates;  // successful resamples x (p+1)
  int failures = 0;
  std::vector<std::string> warnings;
};

/// Resamples families with replacement B times and refits each resample.
BootstrapResult cluster_bootstrap(const ClusteredDataset& ds, const FrailtyFamily& fam, int B, std::uint64_t seed,
                                  StudyEstimator estimator = StudyEstimator::pseudo_full, FitConfig fit_config = {},
                                  EmConfig em_config = {}, int threads = 1);

/// Thread count from an explicit request, falling back to FRAILTY_THREADS and
/// then to 1.
int resolve_threads(int requested);

}  // namespace frailty
