#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "frailty/cox_em.hpp"
#include "frailty/error.hpp"
#include "frailty/estimator.hpp"
#include "frailty/hazard.hpp"
#include "support/random_data.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace frailty;

namespace {

ParameterVector gam(std::vector<double> beta, double theta) {
  ParameterVector g;
  g.beta = Eigen::Map<Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
  g.theta = theta;
  return g;
}

// Score with the hazard profiled out, built only from the public pieces.
Eigen::VectorXd profiled(const ClusteredDataset& ds, const ParameterVector& g, const FrailtyFamily& fam) {
  return score(ds, g, breslow_step(ds, g, fam), fam);
}

Eigen::MatrixXd fd_oracle(const ClusteredDataset& ds, const ParameterVector& g, const FrailtyFamily& fam) {
  const auto q = static_cast<Eigen::Index>(ds.dim() + 1);
  Eigen::MatrixXd D(q, q);
  for (Eigen::Index s = 0; s < q; ++s) {
    ParameterVector up = g, dn = g;
    const double h = 1e-5;
    if (s + 1 < q) {
      up.beta(s) += h;
      dn.beta(s) -= h;
    } else {
      up.theta += h * g.theta;
      dn.theta -= h * g.theta;
    }
    const double width = s + 1 < q ? 2.0 * h : 2.0 * h * g.theta;
    D.col(s) = (profiled(ds, up, fam) - profiled(ds, dn, fam)) / width;
  }
  return D;
}

double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / b.cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("score: single family, no covariates, gamma frailty") {
  // One family, one event at t=1, hazard jump 1: H = 1, N = 1.
  ClusteredDataset ds({Family{"a", {{1.0, 1, {}}}}});
  const double theta = 0.5;
  StepCumulativeHazard h({1.0}, {1.0}, {1});
  const Eigen::VectorXd U = score(ds, gam({}, theta), h, FrailtyFamily::gamma(theta));
  REQUIRE(U.size() == 1);
  // log φ1 = a log a + lgamma(1+a) − lgamma(a) − (1+a) log(1+a) with a = 1/θ.
  auto lp = [](double th) {
    const double a = 1.0 / th;
    return a * std::log(a) + std::lgamma(1.0 + a) - std::lgamma(a) - (1.0 + a) * std::log(1.0 + a);
  };
  const double want = (lp(theta + 1e-6) - lp(theta - 1e-6)) / 2e-6;
  CHECK(U(0) == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("score: beta component with zero hazard counts only events") {
  ClusteredDataset ds({Family{"a", {{1.0, 1, {2.0}}, {2.0, 0, {3.0}}}}, Family{"b", {{1.5, 1, {-1.0}}}}});
  StepCumulativeHazard zero({1.0, 1.5}, {0.0, 0.0}, {1, 1});
  const Eigen::VectorXd U = score(ds, gam({0.3}, 1.0), zero, FrailtyFamily::gamma(1.0));
  CHECK(U(0) == doctest::Approx((2.0 - 1.0) / 2.0));
}

TEST_CASE("analytic Jacobian agrees with finite differences") {
  for (const char* name : {"gamma", "lognormal", "invgauss"}) {
    CAPTURE(name);
    for (double theta : {0.3, 1.5}) {
      CAPTURE(theta);
      const auto ds = testdata::make({.families = 50, .p = 2, .beta = 0.6, .theta = theta}, 31);
      const FrailtyFamily fam = FrailtyFamily::from_name(name, theta);
      const ParameterVector g = gam({0.5, -0.2}, theta);
      const ScoreJacobian sj = score_jacobian(ds, g, fam);
      CHECK(sj.invertible);
      CHECK(rel_err(sj.D, fd_oracle(ds, g, fam)) < 1e-3);
      const ScoreJacobian fd = score_jacobian(ds, g, fam, JacobianMode::finite_difference);
      CHECK(rel_err(fd.D, sj.D) < 1e-3);
    }
  }
}

TEST_CASE("analytic Jacobian without covariates") {
  const auto ds = testdata::make({.families = 50, .p = 0, .theta = 1.0}, 32);
  const FrailtyFamily fam = FrailtyFamily::gamma(1.0);
  const ParameterVector g = gam({}, 0.9);
  const ScoreJacobian sj = score_jacobian(ds, g, fam);
  REQUIRE(sj.D.rows() == 1);
  CHECK(rel_err(sj.D, fd_oracle(ds, g, fam)) < 1e-3);
}

TEST_CASE("Jacobian is reported non-invertible without events") {
  ClusteredDataset ds({Family{"a", {{1.0, 0, {1.0}}}}, Family{"b", {{2.0, 0, {0.0}}}}});
  const ScoreJacobian sj = score_jacobian(ds, gam({0.0}, 1.0), FrailtyFamily::gamma(1.0));
  CHECK_FALSE(sj.invertible);
}

TEST_CASE("fit solves the score equations and is a fixed point") {
  const auto ds = testdata::make({.families = 120, .p = 1, .beta = 0.69, .theta = 2.0}, 41);
  const FrailtyFamily fam = FrailtyFamily::gamma(1.0);
  const FitResult res = fit(ds, fam);
  REQUIRE(res.converged);
  CHECK_FALSE(res.theta_at_boundary);
  CHECK(profiled(ds, res.gamma_hat, fam).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK(res.se.allFinite());
  CHECK((res.se.array() > 0.0).all());

  FitConfig again;
  again.start = res.gamma_hat;
  const FitResult re = fit(ds, fam, again);
  CHECK(re.converged);
  CHECK(re.iterations <= 2);
  CHECK(std::abs(re.gamma_hat.theta - res.gamma_hat.theta) < 1e-6);
}

TEST_CASE("covariate location shift moves the beta score by the total count residual") {
  // The hazard uses ψ(τ_{k−1}) but the β-score uses ψ(τ), so a shift Z + c adds
  // c · n⁻¹ Σ_i (N_i − ψ_i(τ) H_i(τ)). That term is a mean-zero score, not an
  // identity, so the roots move by O(n^{-1/2}) rather than staying put.
  const auto ds = testdata::make({.families = 80, .p = 2, .beta = 0.5, .theta = 1.0}, 43);
  const std::vector<double> c = {1.5, -0.7};
  const auto moved = ds.shifted(c);
  const double theta = 0.9;
  const FrailtyFamily fam = FrailtyFamily::gamma(theta);
  const ParameterVector g = gam({0.4, -0.25}, theta);
  const StepCumulativeHazard h = breslow_step(ds, g, fam);
  const StepCumulativeHazard hm = breslow_step(moved, g, fam);
  const double factor = std::exp(-(0.4 * c[0] - 0.25 * c[1]));
  for (std::size_t k = 0; k < h.size(); ++k) {
    CHECK(hm.cumulative()[k] == doctest::Approx(h.cumulative()[k] * factor).epsilon(1e-12));
  }

  const double a = 1.0 / theta;
  double resid = 0.0;
  for (const Family& f : ds.families()) {
    double H = 0.0;
    int N = 0;
    for (const Subject& s : f.subjects) {
      H += h(s.time) * std::exp(0.4 * s.covariates[0] - 0.25 * s.covariates[1]);
      N += s.status;
    }
    resid += N - (N + a) / (H + a) * H;
  }
  resid /= static_cast<double>(ds.num_families());
  const Eigen::VectorXd U = score(ds, g, h, fam);
  const Eigen::VectorXd Um = score(moved, g, hm, fam);
  CHECK(Um(0) == doctest::Approx(U(0) + c[0] * resid).epsilon(1e-9));
  CHECK(Um(1) == doctest::Approx(U(1) + c[1] * resid).epsilon(1e-9));
  CHECK(Um(2) == doctest::Approx(U(2)).epsilon(1e-9));

  const FitResult fa = fit(ds, fam);
  const FitResult fb = fit(moved, fam);
  REQUIRE(fa.converged);
  REQUIRE(fb.converged);
  CHECK((fa.gamma_hat.beta - fb.gamma_hat.beta).cwiseAbs().maxCoeff() < 0.25 * fa.se.head(2).minCoeff());
  CHECK(std::abs(fa.gamma_hat.theta - fb.gamma_hat.theta) < 0.25 * fa.se(2));
}

TEST_CASE("fit does not depend on the order of families or subjects") {
  const auto ds = testdata::make({.families = 60, .family_size = 3, .p = 1, .theta = 1.0}, 47);
  std::vector<Family> fams = ds.families();
  std::mt19937 rng(5);
  std::shuffle(fams.begin(), fams.end(), rng);
  for (Family& f : fams) std::reverse(f.subjects.begin(), f.subjects.end());
  const FrailtyFamily fam = FrailtyFamily::gamma(1.0);
  const FitResult a = fit(ds, fam);
  const FitResult b = fit(ClusteredDataset(fams), fam);
  CHECK(a.gamma_hat.beta(0) == b.gamma_hat.beta(0));
  CHECK(a.gamma_hat.theta == b.gamma_hat.theta);
  CHECK(a.se(0) == b.se(0));
  CHECK(a.se(1) == b.se(1));
}

TEST_CASE("theta pinned near zero reduces to Cox") {
  const auto ds = testdata::make({.families = 80, .p = 2, .theta = 0.0}, 53);
  FitConfig cfg;
  cfg.fixed_theta = 1e-8;
  const FitResult res = fit(ds, FrailtyFamily::gamma(1.0), cfg);
  const CoxFit cox = cox_fit(ds);
  REQUIRE(res.converged);
  CHECK((res.gamma_hat.beta - cox.beta).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("score at the truth is small for moderate n") {
  const double theta = 2.0;
  const auto ds = testdata::make({.families = 300, .p = 1, .beta = 0.69, .theta = theta}, 59);
  const FrailtyFamily fam = FrailtyFamily::gamma(theta);
  CHECK(profiled(ds, gam({0.69}, theta), fam).norm() < 0.1);
}

TEST_CASE("fit errors") {
  ClusteredDataset none({Family{"a", {{1.0, 0, {0.0}}}}});
  CHECK_THROWS_AS(fit(none, FrailtyFamily::gamma(1.0)), FrailtyError);
  FitConfig bad;
  bad.theta_init = -1.0;
  const auto ds = testdata::make({.families = 10}, 1);
  CHECK_THROWS_AS(fit(ds, FrailtyFamily::gamma(1.0), bad), FrailtyError);
}
