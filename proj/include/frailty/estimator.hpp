#pragma once

#include "frailty/frailty_family.hpp"
#include "frailty/model.hpp"
#include "frailty/variance.hpp"

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

namespace frailty {

enum class JacobianMode { analytic, finite_difference };

struct ScoreJacobian {
  Eigen::MatrixXd D;
  double condition = 0.0;  // 2-norm condition number
  bool invertible = false;
};

struct FitConfig {
  double theta_init = 0.01;
  double tol_gamma = 1e-6;
  double tol_score = 1e-8;
  int max_iter = 100;
  int max_halvings = 10;
  double max_log_theta_step = 2.0;  // Newton steps are shortened so |Δ log θ| stays below this
  double theta_min = 1e-6;
  JacobianMode jacobian = JacobianMode::analytic;
  std::optional<double> fixed_theta;
  std::optional<ParameterVector> start;  // skips the Cox initializer
  bool compute_variance = true;
};

struct FitResult {
  ParameterVector gamma_hat;
  StepCumulativeHazard hazard;
  Eigen::MatrixXd covariance;  // (p+1)², NaN when not computed
  Eigen::VectorXd se;
  int iterations = 0;
  bool converged = false;
  double score_norm = 0.0;  // ‖U‖∞ at the last iterate
  bool theta_at_boundary = false;
  std::optional<SandwichParts> sandwich;
  std::vector<std::string> warnings;
};

/// U(γ, Λ): U_r = n⁻¹ΣΣδZ_r − n⁻¹Σ_i ψ_i(τ) Σ_j H_ij Z_ijr, U_{p+1} = n⁻¹Σ_i φ^(θ)_1/φ_1.
Eigen::VectorXd score(const ClusteredDataset& ds, const ParameterVector& gamma, const StepCumulativeHazard& hazard,
                      const FrailtyFamily& fam);

/// D(γ) = dU(γ, Λ̂(·,γ))/dγ, with Λ̂ rebuilt from γ.
ScoreJacobian score_jacobian(const ClusteredDataset& ds, const ParameterVector& gamma, const FrailtyFamily& fam,
                             JacobianMode mode = JacobianMode::analytic);

/// Newton iteration on U(γ, Λ̂(γ)) = 0 over (β, log θ), then the sandwich covariance.
FitResult fit(const ClusteredDataset& ds, const FrailtyFamily& fam, FitConfig config = {});

}  // namespace frailty
