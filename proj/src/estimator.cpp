#include "frailty/estimator.hpp"

#include "frailty/cox_em.hpp"
#include "frailty/error.hpp"
#include "sweep.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>

#include <cmath>
#include <limits>

namespace frailty {

Eigen::VectorXd score(const ClusteredDataset& ds, const ParameterVector& gamma, const StepCumulativeHazard& hazard,
                      const FrailtyFamily& fam_in) {
  gamma.validate(ds.dim());
  const FrailtyFamily fam = fam_in.with_theta(gamma.theta);
  const std::size_t n = ds.num_families(), p = ds.dim();
  const auto start = ds.family_start();
  const auto& Z = ds.covariates();
  const auto& T = ds.time();
  const auto& status = ds.status();
  const auto fam_events = ds.family_event_count();
  const auto P = static_cast<Eigen::Index>(p);
  Eigen::VectorXd U = Eigen::VectorXd::Zero(P + 1);
  for (std::size_t f = 0; f < n; ++f) {
    double H = 0.0;
    Eigen::VectorXd hz = Eigen::VectorXd::Zero(P), dz = Eigen::VectorXd::Zero(P);
    for (std::size_t s = start[f]; s < start[f + 1]; ++s) {
      const auto si = static_cast<Eigen::Index>(s);
      const double h = hazard(T(si)) * std::exp(p > 0 ? Z.row(si).dot(gamma.beta) : 0.0);
      H += h;
      if (p > 0) {
        hz += h * Z.row(si).transpose();
        dz += status(si) * Z.row(si).transpose();
      }
    }
    const MomentRatios m = fam.moments(fam_events[f], H, true);
    if (p > 0) U.head(P) += dz - m.psi() * hz;
    U(P) += m.d1;
  }
  return U / static_cast<double>(n);
}

namespace {

Eigen::VectorXd breslow_score(const ClusteredDataset& ds, const ParameterVector& g, const FrailtyFamily& fam) {
  return detail::score_from_sweep(ds, detail::run_sweep(ds, g, fam, {}));
}

ScoreJacobian finish_jacobian(Eigen::MatrixXd D) {
  ScoreJacobian out;
  out.D = std::move(D);
  if (!out.D.allFinite()) {
    out.condition = std::numeric_limits<double>::infinity();
    return out;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(out.D);
  const auto& sv = svd.singularValues();
  const double smax = sv.size() ? sv(0) : 0.0;
  const double smin = sv.size() ? sv(sv.size() - 1) : 0.0;
  out.condition = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
  out.invertible = smin > 0.0 && out.condition < 1e12;
  return out;
}

Eigen::MatrixXd fd_jacobian(const ClusteredDataset& ds, const ParameterVector& g, const FrailtyFamily& fam) {
  const auto q = static_cast<Eigen::Index>(ds.dim() + 1);
  Eigen::MatrixXd D(q, q);
  for (Eigen::Index s = 0; s < q; ++s) {
    ParameterVector up = g, dn = g;
    double step;
    if (s + 1 < q) {
      step = 1e-6 * std::max(1.0, std::abs(g.beta(s)));
      up.beta(s) += step;
      dn.beta(s) -= step;
    } else {
      step = 1e-6 * std::max(1.0, g.theta);
      if (g.theta - step <= 0.0) step = 1e-3 * g.theta;
      up.theta += step;
      dn.theta -= step;
    }
    D.col(s) = (breslow_score(ds, up, fam) - breslow_score(ds, dn, fam)) / (2.0 * step);
  }
  return D;
}

}  // namespace

ScoreJacobian score_jacobian(const ClusteredDataset& ds, const ParameterVector& gamma, const FrailtyFamily& fam,
                             JacobianMode mode) {
  gamma.validate(ds.dim());
  const auto q = static_cast<Eigen::Index>(ds.dim() + 1);
  if (ds.total_events() == 0) return finish_jacobian(Eigen::MatrixXd::Constant(q, q, std::nan("")));
  if (mode == JacobianMode::finite_difference) return finish_jacobian(fd_jacobian(ds, gamma, fam));
  detail::SweepOptions opt;
  opt.derivatives = true;
  return finish_jacobian(detail::jacobian_from_sweep(ds, detail::run_sweep(ds, gamma, fam, opt)));
}

FitResult fit(const ClusteredDataset& ds, const FrailtyFamily& fam, FitConfig config) {
  if (ds.total_events() == 0) throw FrailtyError(ErrorCode::no_events, "dataset has no events");
  if (!(config.theta_init > 0.0) || !(config.theta_min > 0.0) || config.max_iter < 1) {
    throw FrailtyError(ErrorCode::invalid_input, "fit configuration is invalid");
  }
  const std::size_t p = ds.dim();
  const auto P = static_cast<Eigen::Index>(p);
  FitResult res;

  ParameterVector g;
  if (config.start) {
    g = *config.start;
    g.validate(p);
  } else {
    const CoxFit cox = cox_fit(ds);
    if (!cox.converged) res.warnings.push_back("Cox initializer did not converge");
    g.beta = cox.beta;
    g.theta = config.theta_init;
  }
  bool theta_fixed = config.fixed_theta.has_value();
  if (theta_fixed) {
    if (!(*config.fixed_theta > 0.0)) throw FrailtyError(ErrorCode::invalid_input, "fixed theta must be > 0");
    g.theta = *config.fixed_theta;
  }
  g.theta = std::max(g.theta, config.theta_min);

  // Active coordinates: β, plus log θ unless θ is held fixed.
  auto residual = [&](const Eigen::VectorXd& U) {
    return theta_fixed ? (P > 0 ? U.head(P).cwiseAbs().maxCoeff() : 0.0) : U.cwiseAbs().maxCoeff();
  };
  auto evaluate = [&](const ParameterVector& at, bool with_jacobian, detail::Sweep* out) {
    detail::SweepOptions opt;
    opt.derivatives = with_jacobian && config.jacobian == JacobianMode::analytic;
    *out = detail::run_sweep(ds, at, fam, opt);
    return detail::score_from_sweep(ds, *out);
  };

  detail::Sweep sw;
  Eigen::VectorXd U = evaluate(g, true, &sw);
  int low_streak = 0;
  bool warned_halving = false;
  for (int it = 1; it <= config.max_iter; ++it) {
    res.iterations = it;
    Eigen::MatrixXd D = config.jacobian == JacobianMode::analytic ? detail::jacobian_from_sweep(ds, sw)
                                                                   : fd_jacobian(ds, g, fam);
    const Eigen::Index q = theta_fixed ? P : P + 1;
    if (q == 0) {
      res.converged = true;
      break;
    }
    Eigen::MatrixXd J = D.topLeftCorner(q, q);
    if (!theta_fixed) J.col(P) *= g.theta;  // d/d log θ
    const ScoreJacobian sj = finish_jacobian(J);
    if (!sj.invertible) {
      throw FrailtyError(ErrorCode::singular_jacobian,
                         "score Jacobian is singular (condition " + std::to_string(sj.condition) +
                             "); check the data for separation, constant covariates or too few events");
    }
    Eigen::VectorXd step = J.partialPivLu().solve(-U.head(q));
    // Near θ = 0 the θ-score is almost flat in log θ and a raw Newton step can
    // jump many decades into the region where U_θ vanishes spuriously.
    if (!theta_fixed && std::abs(step(P)) > config.max_log_theta_step) {
      step *= config.max_log_theta_step / std::abs(step(P));
    }

    const double r0 = U.head(q).norm();
    double scale = 1.0;
    ParameterVector trial;
    Eigen::VectorXd U_trial;
    detail::Sweep sw_trial;
    bool accepted = false;
    for (int h = 0; h <= config.max_halvings; ++h) {
      trial = g;
      if (P > 0) trial.beta += scale * step.head(P);
      if (!theta_fixed) trial.theta = std::max(config.theta_min, g.theta * std::exp(scale * step(P)));
      U_trial.resize(0);
      try {
        U_trial = evaluate(trial, true, &sw_trial);
        if (U_trial.allFinite() && (U_trial.head(q).norm() < r0 || residual(U_trial) < config.tol_score)) {
          accepted = true;
          break;
        }
      } catch (const FrailtyError& e) {
        if (e.code() != ErrorCode::non_finite && e.code() != ErrorCode::zero_risk_set) throw;
      }
      scale *= 0.5;
    }
    if (!accepted) {
      if (!U_trial.size() || !U_trial.allFinite()) {
        res.warnings.push_back("Newton step failed to produce a finite score");
        break;
      }
      if (!warned_halving) {
        res.warnings.push_back("step halving did not reduce the score norm; took the shortest step");
        warned_halving = true;
      }
    }
    double dgamma = P > 0 ? (trial.beta - g.beta).cwiseAbs().maxCoeff() : 0.0;
    dgamma = std::max(dgamma, std::abs(trial.theta - g.theta));
    g = trial;
    U = U_trial;
    sw = std::move(sw_trial);

    if (!theta_fixed) {
      low_streak = g.theta <= config.theta_min * (1.0 + 1e-12) ? low_streak + 1 : 0;
      if (low_streak >= 3) {
        theta_fixed = true;
        res.theta_at_boundary = true;
        res.warnings.push_back("theta was driven to its lower bound; holding it there. Consider a plain Cox fit");
      }
    }
    if (dgamma < config.tol_gamma && residual(U) < config.tol_score) {
      res.converged = true;
      break;
    }
  }

  res.gamma_hat = g;
  res.score_norm = residual(U);
  const auto t = ds.event_times();
  const auto d = ds.event_counts();
  res.hazard = StepCumulativeHazard({t.begin(), t.end()}, sw.jumps, {d.begin(), d.end()});
  if (!res.converged) res.warnings.push_back("Newton iteration did not converge");

  const auto q = static_cast<Eigen::Index>(p + 1);
  res.covariance = Eigen::MatrixXd::Constant(q, q, std::nan(""));
  res.se = Eigen::VectorXd::Constant(q, std::nan(""));
  if (config.compute_variance) {
    try {
      SandwichParts parts = sandwich(ds, g, res.hazard, fam);
      res.covariance = parts.covariance;
      res.se = parts.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
      for (const auto& w : parts.warnings) res.warnings.push_back(w);
      res.sandwich = std::move(parts);
    } catch (const FrailtyError& e) {
      res.warnings.push_back(std::string("sandwich variance unavailable: ") + e.what());
    }
  }
  return res;
}

}  // namespace frailty
