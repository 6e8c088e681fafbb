#pragma once

// Internal: one left-to-right pass over the event grid that builds the
// Breslow-type jumps (or replays given ones), optionally carrying the
// derivatives of every family's cumulative intensity with respect to γ.

#include "frailty/frailty_family.hpp"
#include "frailty/model.hpp"

#include <Eigen/Core>

#include <span>
#include <vector>

namespace frailty::detail {

struct SweepOptions {
  bool derivatives = false;
  // Keep ψ_i(τ_{k−1}) and η1_i(τ_{k−1}) for every (k, i); needed by the variance.
  bool record_history = false;
  // Replay these jumps instead of solving for them.
  std::span<const double> fixed_jumps = {};
};

struct Sweep {
  std::size_t n = 0, p = 0, K = 0;

  std::vector<double> jumps;       // ΔΛ(τ_k)
  std::vector<double> cumulative;  // Λ(τ_k)
  std::vector<double> risk_mass;   // S_k = Σ_i ψ_i(τ_{k−1}) R_i·(τ_k)

  // Columns 0..p-1: ∂/∂β_s, column p: ∂/∂θ. Empty unless derivatives.
  Eigen::MatrixXd djump;       // K x (p+1)
  Eigen::MatrixXd dcumulative; // K x (p+1)

  // Canonical subjects.
  Eigen::VectorXd risk;       // exp(βᵀZ)
  Eigen::VectorXd h_subject;  // H_ij(T_ij)
  Eigen::MatrixXd dh_subject; // N x (p+1)

  // Canonical families at τ.
  std::vector<int> n_tau;
  Eigen::VectorXd h_tau;
  std::vector<MomentRatios> m_tau;
  Eigen::MatrixXd dh_tau;  // n x (p+1)

  // History, K x n, zero where the family has left the risk set.
  Eigen::MatrixXd psi_prev;
  Eigen::MatrixXd eta_prev;
  Eigen::MatrixXd family_risk;  // R_i·(τ_k)
};

// γ.theta overrides fam.theta(). Throws zero_risk_set / no_events.
Sweep run_sweep(const ClusteredDataset& ds, const ParameterVector& gamma, const FrailtyFamily& fam,
                const SweepOptions& options);

// Score vector from a finished sweep (moments at τ must be populated).
Eigen::VectorXd score_from_sweep(const ClusteredDataset& ds, const Sweep& sw);

// Analytic Jacobian from a sweep run with derivatives.
Eigen::MatrixXd jacobian_from_sweep(const ClusteredDataset& ds, const Sweep& sw);

}  // namespace frailty::detail
