#pragma once

#include "frailty/frailty_family.hpp"
#include "frailty/model.hpp"

#include <Eigen/Core>

#include <string>
#include <vector>

namespace frailty {

/// Sandwich covariance D⁻¹(V+G+C)D⁻ᵀ/n and its ingredients.
struct SandwichParts {
  Eigen::MatrixXd D, V, G, C;
  Eigen::MatrixXd covariance;
  std::vector<std::string> warnings;
};

/// Martingale-representation quantities on the event grid τ_1..τ_K, plus p̂ at
/// every distinct observed time (events and censorings).
struct MartingaleWorkspace {
  std::vector<double> risk_mass;     // 𝒴(τ_k) = n⁻¹ Σ_i ψ_i(τ_k−) R_i·(τ_k)
  std::vector<double> upsilon;       // Υ(τ_k)
  std::vector<double> phat_before;   // p̂(τ_k−)
  Eigen::MatrixXd pi;                // K x (p+1), π_r(τ_k)
  std::vector<double> observed_times;
  std::vector<double> phat;          // p̂ at each observed time
  // Ω_ij(s,t) = n⁻² exp(βᵀZ_ij) (A_i(t) − A_i(s)); A is K x n over canonical
  // families, A_i(t) taken at the last grid point ≤ t.
  Eigen::MatrixXd omega_prefix;
};

/// ξ*_i (n x (p+1)), rows in input family order.
Eigen::MatrixXd xi_vectors(const ClusteredDataset& ds, const ParameterVector& gamma,
                           const StepCumulativeHazard& hazard, const FrailtyFamily& fam);

/// Q_ijr and Q_ij(p+1) (N x (p+1)), rows in input subject order.
Eigen::MatrixXd q_weights(const ClusteredDataset& ds, const ParameterVector& gamma,
                          const StepCumulativeHazard& hazard, const FrailtyFamily& fam);

MartingaleWorkspace phat_and_pi(const ClusteredDataset& ds, const ParameterVector& gamma,
                                const StepCumulativeHazard& hazard, const FrailtyFamily& fam);

/// M̂_ij(τ) per subject in input order.
std::vector<double> martingale_residuals(const ClusteredDataset& ds, const ParameterVector& gamma,
                                         const StepCumulativeHazard& hazard, const FrailtyFamily& fam);

/// `hazard` must be the Breslow-type estimate at `gamma` on the dataset's grid.
SandwichParts sandwich(const ClusteredDataset& ds, const ParameterVector& gamma,
                       const StepCumulativeHazard& hazard, const FrailtyFamily& fam);

}  // namespace frailty
