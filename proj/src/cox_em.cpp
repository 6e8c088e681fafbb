#include "frailty/cox_em.hpp"

#include "frailty/error.hpp"
#include "frailty/frailty_family.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace frailty {

namespace {

// Subjects sorted by decreasing time, plus the per-grid-point event sums.
struct CoxLayout {
  std::vector<std::size_t> by_time_desc;
  Eigen::MatrixXd event_z;    // K x p, Σ Z over events at τ_k
  Eigen::VectorXd event_off;  // K, Σ offset over events at τ_k
};

CoxLayout make_layout(const ClusteredDataset& ds, const Eigen::VectorXd& offsets) {
  const std::size_t N = ds.num_subjects(), K = ds.event_times().size();
  CoxLayout lay;
  lay.by_time_desc.resize(N);
  std::iota(lay.by_time_desc.begin(), lay.by_time_desc.end(), 0);
  const auto& T = ds.time();
  std::stable_sort(lay.by_time_desc.begin(), lay.by_time_desc.end(), [&](std::size_t a, std::size_t b) {
    return T(static_cast<Eigen::Index>(a)) > T(static_cast<Eigen::Index>(b));
  });
  lay.event_z = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(ds.dim()));
  lay.event_off = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(K));
  const auto grid = ds.grid_position();
  for (std::size_t s = 0; s < N; ++s) {
    const auto si = static_cast<Eigen::Index>(s);
    if (ds.status()(si) != 1) continue;
    const auto k = static_cast<Eigen::Index>(grid[s] - 1);
    if (ds.dim() > 0) lay.event_z.row(k) += ds.covariates().row(si);
    lay.event_off(k) += offsets(si);
  }
  return lay;
}

struct CoxEval {
  double loglik = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;  // negative information
  std::vector<double> s0;
};

CoxEval evaluate(const ClusteredDataset& ds, const CoxLayout& lay, const Eigen::VectorXd& offsets,
                 const Eigen::VectorXd& beta, bool second_order) {
  const auto P = static_cast<Eigen::Index>(ds.dim());
  const auto& Z = ds.covariates();
  const auto& T = ds.time();
  const auto times = ds.event_times();
  const auto counts = ds.event_counts();
  const std::size_t K = times.size();
  CoxEval out;
  out.grad = Eigen::VectorXd::Zero(P);
  out.hess = Eigen::MatrixXd::Zero(P, P);
  out.s0.assign(K, 0.0);
  Eigen::VectorXd eta = offsets;
  if (P > 0) eta += Z * beta;
  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(P);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(P, P);
  std::size_t ptr = 0;
  for (std::size_t kk = K; kk-- > 0;) {
    const double tk = times[kk];
    while (ptr < lay.by_time_desc.size() && T(static_cast<Eigen::Index>(lay.by_time_desc[ptr])) >= tk) {
      const auto s = static_cast<Eigen::Index>(lay.by_time_desc[ptr]);
      const double r = std::exp(eta(s));
      s0 += r;
      if (P > 0) {
        s1 += r * Z.row(s).transpose();
        if (second_order) s2.noalias() += r * Z.row(s).transpose() * Z.row(s);
      }
      ++ptr;
    }
    const auto k = static_cast<Eigen::Index>(kk);
    const double d = counts[kk];
    out.s0[kk] = s0;
    out.loglik += lay.event_off(k) - d * std::log(s0);
    if (P > 0) {
      out.loglik += lay.event_z.row(k).dot(beta);
      out.grad += lay.event_z.row(k).transpose() - (d / s0) * s1;
      if (second_order) out.hess -= d * (s2 / s0 - (s1 / s0) * (s1 / s0).transpose());
    }
  }
  return out;
}

Eigen::VectorXd canonical_offsets(const ClusteredDataset& ds, const std::vector<double>& offsets) {
  const std::size_t N = ds.num_subjects();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(N));
  if (offsets.empty()) return out;
  if (offsets.size() != N) {
    throw FrailtyError(ErrorCode::invalid_input, "offsets must have one entry per subject");
  }
  const auto map = ds.subject_input_index();
  for (std::size_t s = 0; s < N; ++s) {
    const double o = offsets[map[s]];
    if (!std::isfinite(o)) throw FrailtyError(ErrorCode::invalid_input, "offsets must be finite");
    out(static_cast<Eigen::Index>(s)) = o;
  }
  return out;
}

StepCumulativeHazard breslow_baseline(const ClusteredDataset& ds, const std::vector<double>& s0) {
  const auto t = ds.event_times();
  const auto d = ds.event_counts();
  std::vector<double> jumps(t.size());
  for (std::size_t k = 0; k < t.size(); ++k) jumps[k] = d[k] / s0[k];
  return StepCumulativeHazard({t.begin(), t.end()}, std::move(jumps), {d.begin(), d.end()});
}

CoxFit cox_fit_canonical(const ClusteredDataset& ds, const Eigen::VectorXd& offsets, const CoxConfig& config,
                         Eigen::VectorXd beta) {
  if (ds.total_events() == 0) throw FrailtyError(ErrorCode::no_events, "dataset has no events");
  const auto P = static_cast<Eigen::Index>(ds.dim());
  const CoxLayout lay = make_layout(ds, offsets);
  CoxFit fit;
  CoxEval ev = evaluate(ds, lay, offsets, beta, true);
  int it = 0;
  bool ok = P == 0 || ev.grad.cwiseAbs().maxCoeff() <= config.tol_gradient;
  while (!ok && it < config.max_iter) {
    ++it;
    const Eigen::MatrixXd info = -ev.hess;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) break;
    Eigen::VectorXd step = ldlt.solve(ev.grad);
    if (!step.allFinite()) break;
    bool improved = false;
    for (int halve = 0; halve < 30; ++halve) {
      const Eigen::VectorXd trial = beta + step;
      CoxEval tv = evaluate(ds, lay, offsets, trial, true);
      if (std::isfinite(tv.loglik) && tv.loglik >= ev.loglik - 1e-12 * std::abs(ev.loglik)) {
        beta = trial;
        ev = std::move(tv);
        improved = true;
        break;
      }
      step *= 0.5;
    }
    if (!improved) break;
    if (beta.cwiseAbs().maxCoeff() > 50.0) break;  // drifting off: monotone likelihood
    ok = ev.grad.cwiseAbs().maxCoeff() <= config.tol_gradient;
  }
  if (ok && P > 0) {
    // A vanishing gradient with vanishing information is a coefficient running
    // off to infinity (monotone likelihood), not an optimum.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(-ev.hess, Eigen::EigenvaluesOnly);
    if (!(eig.eigenvalues().minCoeff() > 1e-6 * static_cast<double>(ds.total_events()))) ok = false;
  }
  fit.beta = beta;
  fit.loglik = ev.loglik;
  fit.iterations = it;
  fit.converged = ok;
  fit.information = -ev.hess;
  fit.baseline = breslow_baseline(ds, ev.s0);
  return fit;
}

// Σ_i log φ1 for the gamma law, and its first two θ-derivatives.
struct ThetaProfile {
  std::vector<int> n;
  std::vector<double> h;

  double value(double theta) const {
    const auto fam = FrailtyFamily::gamma(theta);
    double acc = 0.0;
    for (std::size_t i = 0; i < n.size(); ++i) acc += fam.moments(n[i], h[i], false).log_phi1;
    return acc;
  }
  std::pair<double, double> derivatives(double theta) const {
    const auto fam = FrailtyFamily::gamma(theta);
    double g = 0.0, c = 0.0;
    for (std::size_t i = 0; i < n.size(); ++i) {
      const MomentRatios m = fam.moments(n[i], h[i], true);
      g += m.d1;
      c += m.dd1 - m.d1 * m.d1;
    }
    return {g, c};
  }
};

double maximize_theta(const ThetaProfile& prof, double theta0, double lo, double hi) {
  const double llo = std::log(lo), lhi = std::log(hi);
  const double width = std::log(3.0);
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  auto f = [&](double u) { return prof.value(std::exp(u)); };
  double center = std::clamp(std::log(theta0), llo, lhi);
  double best = center;
  for (int shift = 0; shift < 40; ++shift) {
    const double lo_edge = std::max(llo, center - width), hi_edge = std::min(lhi, center + width);
    double a = lo_edge, b = hi_edge;
    double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
    double f1 = f(x1), f2 = f(x2);
    while (b - a > 1e-5) {
      if (f1 < f2) {
        a = x1;
        x1 = x2;
        f1 = f2;
        x2 = a + gr * (b - a);
        f2 = f(x2);
      } else {
        b = x2;
        x2 = x1;
        f2 = f1;
        x1 = b - gr * (b - a);
        f1 = f(x1);
      }
    }
    best = 0.5 * (a + b);
    // Recenter while the optimum sits on a bracket edge that is not a bound.
    const bool low = best - lo_edge < 1e-3 && lo_edge > llo;
    const bool high = hi_edge - best < 1e-3 && hi_edge < lhi;
    if (!low && !high) break;
    center = best;
  }
  // Newton polish on θ.
  double theta = std::exp(best);
  double fv = prof.value(theta);
  for (int it = 0; it < 20; ++it) {
    const auto [g, c] = prof.derivatives(theta);
    if (!(c < 0.0)) break;
    double step = -g / c;
    bool moved = false;
    for (int h = 0; h < 20; ++h) {
      const double trial = theta + step;
      if (trial > lo && trial < hi) {
        const double tv = prof.value(trial);
        if (tv >= fv) {
          moved = std::abs(trial - theta) > 0.0;
          theta = trial;
          fv = tv;
          break;
        }
      }
      step *= 0.5;
    }
    if (!moved || std::abs(step) < 1e-12 * std::max(1.0, theta)) break;
  }
  return theta;
}

}  // namespace

CoxFit cox_fit(const ClusteredDataset& ds, const std::vector<double>& offsets, CoxConfig config,
               std::optional<Eigen::VectorXd> start) {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ds.dim()));
  if (start) {
    if (start->size() != beta.size()) throw FrailtyError(ErrorCode::invalid_input, "start has wrong length");
    beta = *start;
  }
  return cox_fit_canonical(ds, canonical_offsets(ds, offsets), config, beta);
}

double observed_loglik(const ClusteredDataset& ds, const Eigen::VectorXd& beta, double theta,
                       const StepCumulativeHazard& baseline) {
  if (static_cast<std::size_t>(beta.size()) != ds.dim()) {
    throw FrailtyError(ErrorCode::invalid_input, "beta length does not match covariate dimension");
  }
  const auto fam = FrailtyFamily::gamma(theta);
  const auto start = ds.family_start();
  const auto& Z = ds.covariates();
  const auto& T = ds.time();
  const auto& status = ds.status();
  double ll = 0.0;
  const auto grid = baseline.grid();
  const auto jumps = baseline.jumps();
  for (std::size_t f = 0; f < ds.num_families(); ++f) {
    double H = 0.0;
    int n = 0;
    for (std::size_t s = start[f]; s < start[f + 1]; ++s) {
      const auto si = static_cast<Eigen::Index>(s);
      const double lp = ds.dim() > 0 ? Z.row(si).dot(beta) : 0.0;
      H += baseline(T(si)) * std::exp(lp);
      if (status(si) == 1) {
        auto it = std::lower_bound(grid.begin(), grid.end(), T(si));
        if (it == grid.end() || *it != T(si)) return -INFINITY;
        ll += std::log(jumps[static_cast<std::size_t>(it - grid.begin())]) + lp;
        ++n;
      }
    }
    ll += fam.moments(n, H, false).log_phi1;
  }
  return ll;
}

EmFit em_fit(const ClusteredDataset& ds, EmConfig config) {
  if (ds.total_events() == 0) throw FrailtyError(ErrorCode::no_events, "dataset has no events");
  if (!(config.theta_min > 0.0) || !(config.theta_max > config.theta_min)) {
    throw FrailtyError(ErrorCode::invalid_input, "EM theta bounds are invalid");
  }
  const std::size_t n = ds.num_families(), N = ds.num_subjects();
  const auto start = ds.family_start();
  const auto fam_events = ds.family_event_count();
  const auto& Z = ds.covariates();
  const auto& T = ds.time();

  EmFit out;
  CoxFit cox = cox_fit_canonical(ds, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(N)), {},
                                 Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ds.dim())));
  Eigen::VectorXd beta = cox.beta;
  StepCumulativeHazard lambda = cox.baseline;
  double theta = config.fixed_theta ? *config.fixed_theta : config.theta_init;
  if (!(theta > 0.0)) throw FrailtyError(ErrorCode::invalid_input, "EM theta must be > 0");

  ThetaProfile prof;
  prof.n.assign(fam_events.begin(), fam_events.end());
  prof.h.assign(n, 0.0);
  auto family_h = [&](const Eigen::VectorXd& b, const StepCumulativeHazard& lam) {
    const auto cum = lam.cumulative();
    const auto grid = ds.grid_position();
    std::vector<double> h(n, 0.0);
    for (std::size_t f = 0; f < n; ++f) {
      for (std::size_t s = start[f]; s < start[f + 1]; ++s) {
        const auto si = static_cast<Eigen::Index>(s);
        if (grid[s] == 0) continue;
        const double lp = ds.dim() > 0 ? Z.row(si).dot(b) : 0.0;
        h[f] += cum[static_cast<std::size_t>(grid[s] - 1)] * std::exp(lp);
      }
    }
    return h;
  };
  (void)T;

  std::vector<double> w(n, 1.0);
  Eigen::VectorXd offsets(static_cast<Eigen::Index>(N));
  double prev_ll = -INFINITY;
  for (int sweep = 1; sweep <= config.max_sweeps; ++sweep) {
    // E-step
    const std::vector<double> h = family_h(beta, lambda);
    const double inv = 1.0 / theta;
    for (std::size_t f = 0; f < n; ++f) {
      w[f] = (fam_events[f] + inv) / (h[f] + inv);
      for (std::size_t s = start[f]; s < start[f + 1]; ++s) offsets(static_cast<Eigen::Index>(s)) = std::log(w[f]);
    }
    // M-step
    CoxFit m = cox_fit_canonical(ds, offsets, {}, beta);
    if (!m.converged) out.warnings.push_back("M-step Cox fit did not converge at sweep " + std::to_string(sweep));
    // θ-step
    double new_theta = theta;
    if (!config.fixed_theta) {
      prof.h = family_h(m.beta, m.baseline);
      new_theta = maximize_theta(prof, theta, config.theta_min, config.theta_max);
    }

    double dlam = 0.0;
    const auto c_old = lambda.cumulative();
    const auto c_new = m.baseline.cumulative();
    for (std::size_t k = 0; k < c_new.size(); ++k) dlam = std::max(dlam, std::abs(c_new[k] - c_old[k]));
    const double dbeta = ds.dim() > 0 ? (m.beta - beta).cwiseAbs().maxCoeff() : 0.0;
    const double dtheta = std::abs(new_theta - theta);
    beta = m.beta;
    lambda = m.baseline;
    theta = new_theta;
    out.iterations = sweep;

    const double ll = observed_loglik(ds, beta, theta, lambda);
    out.loglik_trace.push_back(ll);
    if (ll < prev_ll - 1e-8 * std::max(1.0, std::abs(prev_ll))) {
      out.warnings.push_back("observed log-likelihood decreased at sweep " + std::to_string(sweep));
    }
    prev_ll = ll;
    if (dbeta < config.tol && dtheta < config.tol && dlam < config.tol) {
      out.converged = true;
      break;
    }
  }

  const std::vector<double> h = family_h(beta, lambda);
  out.w_hat.assign(n, 1.0);
  const auto input_index = ds.family_input_index();
  for (std::size_t f = 0; f < n; ++f) {
    out.w_hat[input_index[f]] = (fam_events[f] + 1.0 / theta) / (h[f] + 1.0 / theta);
  }
  out.beta = beta;
  out.theta = theta;
  out.baseline = lambda;
  if (!config.fixed_theta && theta <= config.theta_min * 1.0001) {
    out.theta_at_boundary = true;
    out.warnings.push_back("theta reached its lower bound; the fit reduces to a plain Cox model");
  }
  if (!out.converged) out.warnings.push_back("EM did not converge within the sweep limit");
  return out;
}

}  // namespace frailty
