#pragma once

#include "frailty/model.hpp"

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

namespace frailty {

struct CoxFit {
  Eigen::VectorXd beta;
  StepCumulativeHazard baseline;  // classic Breslow, offsets included in the risk sums
  double loglik = 0.0;            // Breslow-ties partial log-likelihood
  int iterations = 0;
  bool converged = false;
  Eigen::MatrixXd information;  // observed information at beta
};

struct CoxConfig {
  double tol_gradient = 1e-8;
  int max_iter = 100;
};

/// Cox partial likelihood with Breslow ties, maximized by Newton–Raphson.
/// `offsets` is per subject in input order (families() then subjects); empty
/// means all zero. Non-convergence (e.g. monotone likelihood) is reported
/// through `converged`, not thrown.
CoxFit cox_fit(const ClusteredDataset& ds, const std::vector<double>& offsets = {}, CoxConfig config = {},
               std::optional<Eigen::VectorXd> start = std::nullopt);

struct EmConfig {
  double theta_init = 1.0;
  double tol = 1e-6;
  int max_sweeps = 500;
  double theta_min = 1e-6;
  double theta_max = 1e3;
  std::optional<double> fixed_theta;
};

struct EmFit {
  Eigen::VectorXd beta;
  double theta = 0.0;
  StepCumulativeHazard baseline;
  std::vector<double> w_hat;  // E-step frailty per family, input order
  int iterations = 0;
  bool converged = false;
  bool theta_at_boundary = false;
  std::vector<double> loglik_trace;  // observed-data log-likelihood after each sweep
  std::vector<std::string> warnings;
};

/// Gamma-frailty EM: E-step Ŵ_i = (N_i·(τ)+θ⁻¹)/(H_i·(τ)+θ⁻¹), M-step Cox with
/// offsets log Ŵ_i plus Breslow baseline, then θ maximizing the observed-data
/// log-likelihood at the current (β, Λ).
EmFit em_fit(const ClusteredDataset& ds, EmConfig config = {});

/// Observed-data log-likelihood of the gamma shared frailty model with a
/// discrete baseline on the dataset's event grid.
double observed_loglik(const ClusteredDataset& ds, const Eigen::VectorXd& beta, double theta,
                       const StepCumulativeHazard& baseline);

}  // namespace frailty
