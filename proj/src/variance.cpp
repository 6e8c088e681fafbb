#include "frailty/variance.hpp"

#include "frailty/error.hpp"
#include "sweep.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace frailty {

namespace {

struct Pieces {
  detail::Sweep sw;
  Eigen::MatrixXd xi;  // n x q, canonical families
  Eigen::MatrixXd Q;   // N x q, canonical subjects
  MartingaleWorkspace ws;
  Eigen::MatrixXd family_events;  // K x n, Σ_j dN_ij(τ_k)
};

detail::Sweep replay(const ClusteredDataset& ds, const ParameterVector& gamma, const StepCumulativeHazard& hazard,
                     const FrailtyFamily& fam, bool derivatives) {
  const auto grid = hazard.grid();
  const auto times = ds.event_times();
  if (!std::equal(grid.begin(), grid.end(), times.begin(), times.end())) {
    throw FrailtyError(ErrorCode::invalid_input, "hazard grid does not match the dataset's event times");
  }
  detail::SweepOptions opt;
  opt.derivatives = derivatives;
  opt.record_history = true;
  opt.fixed_jumps = hazard.jumps();
  return detail::run_sweep(ds, gamma, fam, opt);
}

void fill_xi_q(const ClusteredDataset& ds, Pieces& pc) {
  const auto& sw = pc.sw;
  const std::size_t n = sw.n, p = sw.p, N = ds.num_subjects();
  const auto P = static_cast<Eigen::Index>(p);
  const auto start = ds.family_start();
  const auto& Z = ds.covariates();
  const auto& status = ds.status();
  pc.xi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), P + 1);
  pc.Q = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(N), P + 1);
  Eigen::VectorXd hz(P);
  for (std::size_t f = 0; f < n; ++f) {
    const auto fi = static_cast<Eigen::Index>(f);
    const MomentRatios& m = sw.m_tau[f];
    hz.setZero();
    for (std::size_t s = start[f]; s < start[f + 1]; ++s) {
      const auto si = static_cast<Eigen::Index>(s);
      if (p > 0) {
        hz += sw.h_subject(si) * Z.row(si).transpose();
        pc.xi.row(fi).head(P) += status(si) * Z.row(si);
      }
    }
    if (p > 0) pc.xi.row(fi).head(P) -= m.psi() * hz.transpose();
    pc.xi(fi, P) = m.d1;
    for (std::size_t s = start[f]; s < start[f + 1]; ++s) {
      const auto si = static_cast<Eigen::Index>(s);
      const double r = sw.risk(si);
      if (p > 0) pc.Q.row(si).head(P) = -(m.psi() * r) * Z.row(si) + (m.eta1() * r) * hz.transpose();
      pc.Q(si, P) = r * (m.m2 * m.d1 - m.d2);
    }
  }
}

void fill_workspace(const ClusteredDataset& ds, Pieces& pc) {
  const auto& sw = pc.sw;
  const std::size_t n = sw.n, K = sw.K, N = ds.num_subjects(), q = sw.p + 1;
  const double nd = static_cast<double>(n);
  const auto start = ds.family_start();
  const auto& T = ds.time();
  const auto& status = ds.status();
  const auto grid = ds.grid_position();
  const auto counts = ds.event_counts();
  const auto times = ds.event_times();
  MartingaleWorkspace& ws = pc.ws;

  std::vector<std::size_t> family_of(N);
  for (std::size_t f = 0; f < n; ++f) {
    for (std::size_t s = start[f]; s < start[f + 1]; ++s) family_of[s] = f;
  }

  ws.risk_mass.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    ws.risk_mass[k] = sw.risk_mass[k] / nd;
    if (!(ws.risk_mass[k] > 0.0)) {
      std::ostringstream os;
      os.precision(17);
      os << "risk mass vanishes at event time " << times[k];
      throw FrailtyError(ErrorCode::zero_risk_set, os.str());
    }
  }

  // Risk of subjects strictly beyond τ_k, per family, and the family event counts.
  Eigen::MatrixXd strict = sw.family_risk;
  pc.family_events = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(n));
  for (std::size_t s = 0; s < N; ++s) {
    const int g = grid[s];
    if (g == 0) continue;
    const auto k = static_cast<Eigen::Index>(g - 1);
    const auto f = static_cast<Eigen::Index>(family_of[s]);
    if (T(static_cast<Eigen::Index>(s)) == times[static_cast<std::size_t>(k)]) {
      strict(k, f) -= sw.risk(static_cast<Eigen::Index>(s));
      pc.family_events(k, f) += status(static_cast<Eigen::Index>(s));
    }
  }

  ws.upsilon.assign(K, 0.0);
  ws.omega_prefix = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < K; ++k) {
    const auto ki = static_cast<Eigen::Index>(k);
    const double inv_y2 = 1.0 / (ws.risk_mass[k] * ws.risk_mass[k]);
    double acc = 0.0;
    for (std::size_t f = 0; f < n; ++f) {
      const auto fi = static_cast<Eigen::Index>(f);
      const double re = sw.family_risk(ki, fi) * sw.eta_prev(ki, fi);
      acc += re * std::max(0.0, strict(ki, fi));
      ws.omega_prefix(ki, fi) = (k > 0 ? ws.omega_prefix(ki - 1, fi) : 0.0) + inv_y2 * re * counts[k];
    }
    ws.upsilon[k] = acc * inv_y2 / (nd * nd);
  }

  // Distinct observed times and who is observed at each.
  std::vector<std::size_t> order(N);
  for (std::size_t s = 0; s < N; ++s) order[s] = s;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return T(static_cast<Eigen::Index>(a)) < T(static_cast<Eigen::Index>(b));
  });
  std::vector<std::size_t> group_start;
  ws.observed_times.clear();
  for (std::size_t idx = 0; idx < N; ++idx) {
    const double t = T(static_cast<Eigen::Index>(order[idx]));
    if (ws.observed_times.empty() || ws.observed_times.back() != t) {
      ws.observed_times.push_back(t);
      group_start.push_back(idx);
    }
  }
  group_start.push_back(N);
  const std::size_t M = ws.observed_times.size();

  auto A = [&](std::size_t f, int g) {  // A_f at the last grid point with index < g
    return g == 0 ? 0.0 : ws.omega_prefix(g - 1, static_cast<Eigen::Index>(f));
  };

  // p̂(t) for every observed t: a fresh product over s ≤ t, since Ω_ij(s,t)
  // depends on the upper limit.
  ws.phat.assign(M, 1.0);
  const double inv_n2 = 1.0 / (nd * nd);
  for (std::size_t mt = 0; mt < M; ++mt) {
    const int g_t = grid[order[group_start[mt]]];
    double log_prod = 0.0;
    for (std::size_t ms = 0; ms <= mt; ++ms) {
      double term = 0.0;
      for (std::size_t idx = group_start[ms]; idx < group_start[ms + 1]; ++idx) {
        const std::size_t s = order[idx];
        const int g_s = grid[s];
        if (status(static_cast<Eigen::Index>(s)) == 1) term += ws.upsilon[static_cast<std::size_t>(g_s - 1)];
        const std::size_t f = family_of[s];
        term += inv_n2 * sw.risk(static_cast<Eigen::Index>(s)) * (A(f, g_t) - A(f, g_s));
      }
      log_prod += std::log1p(term);
    }
    ws.phat[mt] = std::exp(log_prod);
  }

  // π_r(τ_k) = n⁻¹ Σ_{observed t > τ_k} Σ_{T_ij = t} Q_ijr / p̂(t), and p̂(τ_k−).
  Eigen::MatrixXd suffix = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(M + 1), static_cast<Eigen::Index>(q));
  for (std::size_t mt = M; mt-- > 0;) {
    Eigen::RowVectorXd w = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(q));
    for (std::size_t idx = group_start[mt]; idx < group_start[mt + 1]; ++idx) {
      w += pc.Q.row(static_cast<Eigen::Index>(order[idx]));
    }
    suffix.row(static_cast<Eigen::Index>(mt)) = suffix.row(static_cast<Eigen::Index>(mt + 1)) + w / ws.phat[mt];
  }
  ws.pi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(q));
  ws.phat_before.assign(K, 1.0);
  for (std::size_t k = 0; k < K; ++k) {
    const auto it = std::upper_bound(ws.observed_times.begin(), ws.observed_times.end(), times[k]);
    const auto m_after = static_cast<std::size_t>(it - ws.observed_times.begin());
    ws.pi.row(static_cast<Eigen::Index>(k)) = suffix.row(static_cast<Eigen::Index>(m_after)) / nd;
    // τ_k is itself observed, so the previous observed time sits two back from m_after.
    if (m_after >= 2) ws.phat_before[k] = ws.phat[m_after - 2];
  }
}

Pieces build(const ClusteredDataset& ds, const ParameterVector& gamma, const StepCumulativeHazard& hazard,
             const FrailtyFamily& fam, bool derivatives, bool workspace) {
  Pieces pc;
  pc.sw = replay(ds, gamma, hazard, fam, derivatives);
  fill_xi_q(ds, pc);
  if (workspace) fill_workspace(ds, pc);
  return pc;
}

}  // namespace

Eigen::MatrixXd xi_vectors(const ClusteredDataset& ds, const ParameterVector& gamma,
                           const StepCumulativeHazard& hazard, const FrailtyFamily& fam) {
  const Pieces pc = build(ds, gamma, hazard, fam, false, false);
  Eigen::MatrixXd out(pc.xi.rows(), pc.xi.cols());
  const auto map = ds.family_input_index();
  for (std::size_t f = 0; f < map.size(); ++f) {
    out.row(static_cast<Eigen::Index>(map[f])) = pc.xi.row(static_cast<Eigen::Index>(f));
  }
  return out;
}

Eigen::MatrixXd q_weights(const ClusteredDataset& ds, const ParameterVector& gamma,
                          const StepCumulativeHazard& hazard, const FrailtyFamily& fam) {
  const Pieces pc = build(ds, gamma, hazard, fam, false, false);
  Eigen::MatrixXd out(pc.Q.rows(), pc.Q.cols());
  const auto map = ds.subject_input_index();
  for (std::size_t s = 0; s < map.size(); ++s) {
    out.row(static_cast<Eigen::Index>(map[s])) = pc.Q.row(static_cast<Eigen::Index>(s));
  }
  return out;
}

MartingaleWorkspace phat_and_pi(const ClusteredDataset& ds, const ParameterVector& gamma,
                                const StepCumulativeHazard& hazard, const FrailtyFamily& fam) {
  return build(ds, gamma, hazard, fam, false, true).ws;
}

std::vector<double> martingale_residuals(const ClusteredDataset& ds, const ParameterVector& gamma,
                                         const StepCumulativeHazard& hazard, const FrailtyFamily& fam) {
  const detail::Sweep sw = replay(ds, gamma, hazard, fam, false);
  const auto start = ds.family_start();
  const auto grid = ds.grid_position();
  const auto map = ds.subject_input_index();
  std::vector<double> out(ds.num_subjects(), 0.0);
  for (std::size_t f = 0; f < sw.n; ++f) {
    for (std::size_t s = start[f]; s < start[f + 1]; ++s) {
      double comp = 0.0;
      for (int k = 0; k < grid[s]; ++k) comp += sw.psi_prev(k, static_cast<Eigen::Index>(f)) * sw.jumps[static_cast<std::size_t>(k)];
      out[map[s]] = ds.status()(static_cast<Eigen::Index>(s)) - sw.risk(static_cast<Eigen::Index>(s)) * comp;
    }
  }
  return out;
}

SandwichParts sandwich(const ClusteredDataset& ds, const ParameterVector& gamma, const StepCumulativeHazard& hazard,
                       const FrailtyFamily& fam) {
  const Pieces pc = build(ds, gamma, hazard, fam, true, true);
  const auto& sw = pc.sw;
  const auto& ws = pc.ws;
  const std::size_t n = sw.n, K = sw.K;
  const double nd = static_cast<double>(n);
  const auto q = static_cast<Eigen::Index>(sw.p + 1);
  const auto counts = ds.event_counts();

  SandwichParts out;
  out.D = detail::jacobian_from_sweep(ds, sw);
  out.V = pc.xi.transpose() * pc.xi / nd;

  out.G = Eigen::MatrixXd::Zero(q, q);
  Eigen::MatrixXd mu = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), q);
  for (std::size_t k = 0; k < K; ++k) {
    const auto ki = static_cast<Eigen::Index>(k);
    const double y = ws.risk_mass[k];
    const Eigen::RowVectorXd pik = ws.pi.row(ki);
    const double pb = ws.phat_before[k];
    out.G += (pb * pb * counts[k] / (y * y)) * pik.transpose() * pik;
    const Eigen::RowVectorXd weight = pik * (pb / y);
    for (std::size_t f = 0; f < n; ++f) {
      const auto fi = static_cast<Eigen::Index>(f);
      const double R = sw.family_risk(ki, fi);
      const double dN = pc.family_events(ki, fi);
      if (R == 0.0 && dN == 0.0) continue;
      const double dM = dN - sw.psi_prev(ki, fi) * R * sw.jumps[k];
      mu.row(fi) += dM * weight;
    }
  }
  out.G /= nd;
  out.C = (pc.xi.transpose() * mu + mu.transpose() * pc.xi) / nd;

  Eigen::FullPivLU<Eigen::MatrixXd> lu(out.D);
  if (!lu.isInvertible()) {
    throw FrailtyError(ErrorCode::singular_jacobian,
                       "score Jacobian is singular at the estimate; check the data and model");
  }
  const Eigen::MatrixXd Dinv = lu.inverse();
  Eigen::MatrixXd cov = Dinv * (out.V + out.G + out.C) * Dinv.transpose() / nd;
  cov = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.eigenvalues().minCoeff() < 0.0) {
    std::ostringstream os;
    os << "covariance had a negative eigenvalue (" << eig.eigenvalues().minCoeff() << "); clipped at zero";
    out.warnings.push_back(os.str());
    const Eigen::VectorXd clipped = eig.eigenvalues().cwiseMax(0.0);
    cov = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
    cov = 0.5 * (cov + cov.transpose());
  }
  out.covariance = cov;
  return out;
}

}  // namespace frailty
