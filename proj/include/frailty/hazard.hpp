#pragma once

#include "frailty/frailty_family.hpp"
#include "frailty/model.hpp"

#include <Eigen/Core>

namespace frailty {

/// Λ̂₀ together with ∂ΔΛ̂₀(τ_k)/∂β_s (K x p) and ∂ΔΛ̂₀(τ_k)/∂θ (K).
struct HazardWithDerivatives {
  StepCumulativeHazard hazard;
  Eigen::MatrixXd dbeta;
  Eigen::VectorXd dtheta;
};

/// Breslow-type estimator with frailty weights: one left-to-right pass,
///   ΔΛ̂₀(τ_k) = d_k / Σ_i ψ_i(τ_{k−1}) Σ_j Y_ij(τ_k) exp(βᵀZ_ij),
/// where ψ_i(τ_0) is the prior mean. γ.theta takes precedence over fam.theta().
StepCumulativeHazard breslow_step(const ClusteredDataset& ds, const ParameterVector& gamma,
                                  const FrailtyFamily& fam);

/// Forward recursion for the jump derivatives, replaying the jumps of `hazard`
/// (which must live on the dataset's event grid).
HazardWithDerivatives hazard_derivatives(const ClusteredDataset& ds, const ParameterVector& gamma,
                                         const FrailtyFamily& fam, const StepCumulativeHazard& hazard);

}  // namespace frailty
