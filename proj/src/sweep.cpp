#include "sweep.hpp"

#include "frailty/error.hpp"

#include <cmath>
#include <sstream>

namespace frailty::detail {

Sweep run_sweep(const ClusteredDataset& ds, const ParameterVector& gamma, const FrailtyFamily& fam_in,
                const SweepOptions& options) {
  gamma.validate(ds.dim());
  if (ds.total_events() == 0) throw FrailtyError(ErrorCode::no_events, "dataset has no events");
  const FrailtyFamily fam = fam_in.theta() == gamma.theta ? fam_in : fam_in.with_theta(gamma.theta);

  Sweep sw;
  sw.n = ds.num_families();
  sw.p = ds.dim();
  const auto times = ds.event_times();
  const auto counts = ds.event_counts();
  sw.K = times.size();
  const std::size_t n = sw.n, p = sw.p, K = sw.K, q = p + 1;
  const auto start = ds.family_start();
  const auto& T = ds.time();
  const auto& status = ds.status();
  const auto& Z = ds.covariates();
  const std::size_t N = ds.num_subjects();
  const bool deriv = options.derivatives;
  if (!options.fixed_jumps.empty() && options.fixed_jumps.size() != K) {
    throw FrailtyError(ErrorCode::invalid_input, "hazard grid does not match the dataset's event times");
  }

  sw.risk = (Z * gamma.beta).array().exp().matrix();
  if (p == 0) sw.risk.setOnes();

  // Suffix sums of R_ij and R_ij Z_ij within each family (subjects are time-sorted).
  Eigen::VectorXd suffix_r(N + n);
  Eigen::MatrixXd suffix_rz(N + n, p);
  for (std::size_t f = 0; f < n; ++f) {
    const std::size_t a = start[f], b = start[f + 1];
    const std::size_t base = a + f;  // each family owns b - a + 1 rows
    suffix_r(static_cast<Eigen::Index>(base + (b - a))) = 0.0;
    suffix_rz.row(static_cast<Eigen::Index>(base + (b - a))).setZero();
    for (std::size_t s = b; s-- > a;) {
      const auto row = static_cast<Eigen::Index>(base + (s - a));
      suffix_r(row) = suffix_r(row + 1) + sw.risk(static_cast<Eigen::Index>(s));
      if (p > 0) suffix_rz.row(row) = suffix_rz.row(row + 1) + sw.risk(static_cast<Eigen::Index>(s)) * Z.row(static_cast<Eigen::Index>(s));
    }
  }

  std::vector<std::size_t> alive(n), passed(n);  // first subject with T >= τ_k / T > τ_{k-1}
  std::vector<int> events_so_far(n, 0);
  Eigen::VectorXd H = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  Eigen::MatrixXd dH;
  if (deriv) dH = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(q));
  std::vector<std::size_t> active;
  for (std::size_t f = 0; f < n; ++f) {
    alive[f] = passed[f] = start[f];
    active.push_back(f);
  }

  sw.jumps.assign(K, 0.0);
  sw.cumulative.assign(K, 0.0);
  sw.risk_mass.assign(K, 0.0);
  if (deriv) {
    sw.djump = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(q));
    sw.dcumulative = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(q));
  }
  if (options.record_history) {
    sw.psi_prev = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(n));
    sw.eta_prev = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(n));
    sw.family_risk = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(n));
  }

  std::vector<double> psi(n, 0.0), dpsi_dh(n, 0.0), dpsi_dth(n, 0.0), fam_r(n, 0.0);
  Eigen::MatrixXd fam_rz(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  Eigen::VectorXd dS(static_cast<Eigen::Index>(q));
  double cum = 0.0;
  Eigen::VectorXd dcum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(q));

  for (std::size_t k = 0; k < K; ++k) {
    const double tk = times[k];
    double S = 0.0;
    dS.setZero();
    std::size_t keep = 0;
    for (std::size_t idx = 0; idx < active.size(); ++idx) {
      const std::size_t f = active[idx];
      const std::size_t b = start[f + 1];
      while (alive[f] < b && T(static_cast<Eigen::Index>(alive[f])) < tk) ++alive[f];
      if (alive[f] == b) continue;  // left the risk set for good
      active[keep++] = f;
      const auto row = static_cast<Eigen::Index>(alive[f] + f);
      const double R = suffix_r(row);
      const MomentRatios m = fam.moments(events_so_far[f], H(static_cast<Eigen::Index>(f)), deriv);
      psi[f] = m.psi();
      fam_r[f] = R;
      S += psi[f] * R;
      if (deriv) {
        dpsi_dh[f] = m.dpsi_dh();
        dpsi_dth[f] = m.dpsi_dtheta();
        if (p > 0) {
          fam_rz.row(static_cast<Eigen::Index>(f)) = suffix_rz.row(row);
          dS.head(static_cast<Eigen::Index>(p)) +=
              (dpsi_dh[f] * R) * dH.row(static_cast<Eigen::Index>(f)).head(static_cast<Eigen::Index>(p)).transpose() +
              psi[f] * suffix_rz.row(row).transpose();
        }
        dS(static_cast<Eigen::Index>(p)) += R * (dpsi_dth[f] + dpsi_dh[f] * dH(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(p)));
      }
      if (options.record_history) {
        sw.psi_prev(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(f)) = psi[f];
        sw.eta_prev(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(f)) = m.eta1();
        sw.family_risk(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(f)) = R;
      }
    }
    active.resize(keep);

    if (!(S > 0.0) || !std::isfinite(S)) {
      std::ostringstream os;
      os.precision(17);
      os << "risk-set denominator is " << S << " at event time " << tk;
      throw FrailtyError(ErrorCode::zero_risk_set, os.str());
    }
    const double jump = options.fixed_jumps.empty() ? counts[k] / S : options.fixed_jumps[k];
    sw.jumps[k] = jump;
    sw.risk_mass[k] = S;
    cum += jump;
    sw.cumulative[k] = cum;

    Eigen::VectorXd djump;
    if (deriv) {
      djump = (-counts[k] / (S * S)) * dS;
      sw.djump.row(static_cast<Eigen::Index>(k)) = djump.transpose();
      dcum += djump;
      sw.dcumulative.row(static_cast<Eigen::Index>(k)) = dcum.transpose();
    }

    // Advance every at-risk family to τ_k.
    for (std::size_t f : active) {
      const auto fi = static_cast<Eigen::Index>(f);
      H(fi) += jump * fam_r[f];
      if (deriv) {
        dH.row(fi) += fam_r[f] * djump.transpose();
        if (p > 0) dH.row(fi).head(static_cast<Eigen::Index>(p)) += jump * fam_rz.row(fi);
      }
      const std::size_t b = start[f + 1];
      while (passed[f] < b && T(static_cast<Eigen::Index>(passed[f])) <= tk) {
        events_so_far[f] += status(static_cast<Eigen::Index>(passed[f]));
        ++passed[f];
      }
    }
  }

  // Family summaries at τ.
  const auto fam_events = ds.family_event_count();
  sw.n_tau.assign(fam_events.begin(), fam_events.end());
  sw.h_tau = H;
  sw.m_tau.resize(n);
  for (std::size_t f = 0; f < n; ++f) sw.m_tau[f] = fam.moments(sw.n_tau[f], H(static_cast<Eigen::Index>(f)), true);
  if (deriv) sw.dh_tau = dH;

  // Subject-level H_ij(T_ij) and its derivatives.
  const auto grid_pos = ds.grid_position();
  sw.h_subject = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(N));
  if (deriv) sw.dh_subject = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(q));
  for (std::size_t s = 0; s < N; ++s) {
    const int g = grid_pos[s];
    if (g == 0) continue;
    const auto si = static_cast<Eigen::Index>(s);
    const double lam = sw.cumulative[static_cast<std::size_t>(g - 1)];
    sw.h_subject(si) = lam * sw.risk(si);
    if (deriv) {
      sw.dh_subject.row(si) = sw.risk(si) * sw.dcumulative.row(g - 1);
      if (p > 0) sw.dh_subject.row(si).head(static_cast<Eigen::Index>(p)) += (lam * sw.risk(si)) * Z.row(si);
    }
  }
  return sw;
}

Eigen::VectorXd score_from_sweep(const ClusteredDataset& ds, const Sweep& sw) {
  const std::size_t n = sw.n, p = sw.p;
  const auto start = ds.family_start();
  const auto& Z = ds.covariates();
  const auto& status = ds.status();
  Eigen::VectorXd U = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p + 1));
  for (std::size_t f = 0; f < n; ++f) {
    const MomentRatios& m = sw.m_tau[f];
    for (std::size_t s = start[f]; s < start[f + 1]; ++s) {
      const auto si = static_cast<Eigen::Index>(s);
      if (p > 0) {
        U.head(static_cast<Eigen::Index>(p)) +=
            (status(si) - m.psi() * sw.h_subject(si)) * Z.row(si).transpose();
      }
    }
    U(static_cast<Eigen::Index>(p)) += m.d1;
  }
  return U / static_cast<double>(n);
}

Eigen::MatrixXd jacobian_from_sweep(const ClusteredDataset& ds, const Sweep& sw) {
  const std::size_t n = sw.n, p = sw.p, q = p + 1;
  const auto start = ds.family_start();
  const auto& Z = ds.covariates();
  const auto P = static_cast<Eigen::Index>(p);
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(q));
  Eigen::VectorXd hz(P);
  Eigen::MatrixXd zdh(P, static_cast<Eigen::Index>(q));
  for (std::size_t f = 0; f < n; ++f) {
    const auto fi = static_cast<Eigen::Index>(f);
    const MomentRatios& m = sw.m_tau[f];
    const Eigen::RowVectorXd dHf = sw.dh_tau.row(fi);
    if (p > 0) {
      hz.setZero();
      zdh.setZero();
      for (std::size_t s = start[f]; s < start[f + 1]; ++s) {
        const auto si = static_cast<Eigen::Index>(s);
        hz += sw.h_subject(si) * Z.row(si).transpose();
        zdh += Z.row(si).transpose() * sw.dh_subject.row(si);
      }
      // rows 0..p-1: −[ψ Σ Z_l ∂H_ij + (∂ψ/∂h ∂H_i· + ∂ψ/∂θ e_θ) Σ H_ij Z_l]
      Eigen::RowVectorXd dpsi = m.dpsi_dh() * dHf;
      dpsi(P) += m.dpsi_dtheta();
      D.topRows(P) -= m.psi() * zdh + hz * dpsi;
    }
    // row p: d(φ1^(θ)/φ1) = (d1 m2 − d2) dH + (dd1 − d1²) e_θ
    D.row(P) += (m.d1 * m.m2 - m.d2) * dHf;
    D(P, P) += m.dd1 - m.d1 * m.d1;
  }
  return D / static_cast<double>(n);
}

}  // namespace frailty::detail
