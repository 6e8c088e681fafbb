#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "frailty/error.hpp"
#include "frailty/estimator.hpp"
#include "frailty/hazard.hpp"
#include "frailty/variance.hpp"
#include "support/random_data.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

using namespace frailty;

namespace {

ParameterVector gam(std::vector<double> beta, double theta) {
  ParameterVector g;
  g.beta = Eigen::Map<Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
  g.theta = theta;
  return g;
}

double asym(const Eigen::MatrixXd& m) { return (m - m.transpose()).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("xi vectors sum to n times the score") {
  const auto ds = testdata::make({.families = 40, .p = 2, .theta = 1.0}, 61);
  const FrailtyFamily fam = FrailtyFamily::gamma(1.0);
  const ParameterVector g = gam({0.3, -0.1}, 0.7);
  const StepCumulativeHazard h = breslow_step(ds, g, fam);
  const Eigen::MatrixXd xi = xi_vectors(ds, g, h, fam);
  const Eigen::VectorXd U = score(ds, g, h, fam);
  const Eigen::VectorXd sum = xi.colwise().sum().transpose();
  for (Eigen::Index r = 0; r < U.size(); ++r) CHECK(sum(r) == doctest::Approx(40.0 * U(r)).epsilon(1e-12));
}

TEST_CASE("sandwich pieces are symmetric and V is PSD") {
  for (const char* name : {"gamma", "lognormal"}) {
    CAPTURE(name);
    const auto ds = testdata::make({.families = 100, .p = 2, .beta = 0.69, .theta = 1.0}, 67);
    const FrailtyFamily fam = FrailtyFamily::from_name(name, 1.0);
    const FitResult res = fit(ds, fam);
    REQUIRE(res.converged);
    REQUIRE(res.sandwich.has_value());
    const SandwichParts& sp = *res.sandwich;
    CHECK(asym(sp.V) < 1e-12);
    CHECK(asym(sp.G) < 1e-12);
    CHECK(asym(sp.C) < 1e-12);
    CHECK(asym(sp.covariance) < 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sp.V);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-12 * eig.eigenvalues().maxCoeff());
    // G is a sum of outer products with nonnegative weights.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eg(sp.G);
    CHECK(eg.eigenvalues().minCoeff() >= -1e-12 * std::max(1.0, eg.eigenvalues().maxCoeff()));
    const Eigen::MatrixXd Dinv = sp.D.inverse();
    const Eigen::MatrixXd want = Dinv * (sp.V + sp.G + sp.C) * Dinv.transpose() / 100.0;
    CHECK((sp.covariance - 0.5 * (want + want.transpose())).cwiseAbs().maxCoeff() <
          1e-10 * want.cwiseAbs().maxCoeff());
    for (Eigen::Index r = 0; r < 3; ++r) CHECK(res.se(r) == doctest::Approx(std::sqrt(sp.covariance(r, r))));
  }
}

TEST_CASE("martingale residuals sum to zero at the Breslow-type hazard") {
  const auto ds = testdata::make({.families = 70, .family_size = 3, .p = 1, .theta = 2.0}, 71);
  const FrailtyFamily fam = FrailtyFamily::gamma(2.0);
  const ParameterVector g = gam({0.5}, 1.3);
  const auto m = martingale_residuals(ds, g, breslow_step(ds, g, fam), fam);
  REQUIRE(m.size() == ds.num_subjects());
  double total = 0.0, scale = 0.0;
  for (double v : m) {
    total += v;
    scale += std::abs(v);
  }
  CHECK(std::abs(total) < 1e-12 * scale);
  // Residuals are in input order: a censored subject has δ − (nonnegative) ≤ 0.
  std::size_t s = 0;
  for (const Family& f : ds.families()) {
    for (const Subject& sub : f.subjects) {
      if (sub.status == 0) CHECK(m[s] <= 0.0);
      ++s;
    }
  }
}

TEST_CASE("workspace boundary values") {
  // Last observed time is an event, so nothing is observed after τ_K.
  std::vector<Family> fams = {Family{"a", {{1.0, 1, {0.5}}, {4.0, 0, {-0.2}}}},
                              Family{"b", {{2.0, 1, {1.0}}, {2.5, 0, {0.0}}}},
                              Family{"c", {{3.0, 1, {-1.0}}, {5.0, 1, {0.3}}}}};
  ClusteredDataset ds(fams);
  const FrailtyFamily fam = FrailtyFamily::gamma(1.0);
  const ParameterVector g = gam({0.2}, 0.8);
  const MartingaleWorkspace ws = phat_and_pi(ds, g, breslow_step(ds, g, fam), fam);
  const auto K = static_cast<Eigen::Index>(ds.event_times().size());
  CHECK(ws.pi.row(K - 1).cwiseAbs().maxCoeff() == 0.0);
  CHECK(ws.phat_before[0] == 1.0);
  for (double v : ws.phat) CHECK(v >= 1.0);
  for (double v : ws.risk_mass) CHECK(v > 0.0);
  for (double v : ws.upsilon) CHECK(v >= 0.0);
  CHECK(ws.observed_times.size() == 6);
}

TEST_CASE("Q vanishes in the beta rows without covariate variation") {
  const auto ds = testdata::make({.families = 30, .p = 2, .zero_covariates = true}, 73);
  const FrailtyFamily fam = FrailtyFamily::gamma(1.0);
  const ParameterVector g = gam({0.4, 0.1}, 1.0);
  const Eigen::MatrixXd Q = q_weights(ds, g, breslow_step(ds, g, fam), fam);
  CHECK(Q.leftCols(2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(Q.col(2).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("Q matches a point-mass perturbation of the hazard") {
  for (std::string name : {"gamma", "invgauss"}) {
    CAPTURE(name);
    const auto ds = testdata::make({.families = 25, .p = 2, .theta = 1.0}, 79);
    const FrailtyFamily fam = FrailtyFamily::from_name(name, 0.9);
    const ParameterVector g = gam({0.35, -0.3}, 0.9);
    const StepCumulativeHazard h = breslow_step(ds, g, fam);
    const Eigen::MatrixXd Q = q_weights(ds, g, h, fam);
    std::vector<double> times;
    for (const Family& f : ds.families()) {
      for (const Subject& s : f.subjects) times.push_back(s.time);
    }
    const auto grid = ds.event_times();
    for (std::size_t k : {std::size_t{0}, grid.size() / 2, grid.size() - 1}) {
      const double t = grid[k];
      CAPTURE(k);
      // One-sided second-order difference; the step is not tiny because the
      // quadrature θ-score is itself a difference quotient.
      const double eps = 1e-3;
      const Eigen::VectorXd fd = (-3.0 * score(ds, g, h, fam) + 4.0 * score(ds, g, h.with_extra_jump(t, eps), fam) -
                                  score(ds, g, h.with_extra_jump(t, 2.0 * eps), fam)) /
                                 (2.0 * eps);
      Eigen::VectorXd want = Eigen::VectorXd::Zero(3);
      for (std::size_t s = 0; s < times.size(); ++s) {
        if (times[s] >= t) want += Q.row(static_cast<Eigen::Index>(s)).transpose();
      }
      want /= static_cast<double>(ds.num_families());
      for (Eigen::Index r = 0; r < 3; ++r) {
        CHECK(fd(r) == doctest::Approx(want(r)).epsilon(1e-5).scale(want.cwiseAbs().maxCoeff()));
      }
    }
  }
}

TEST_CASE("Upsilon and Omega are of order 1/n") {
  auto mean_sizes = [](std::size_t n) {
    double ups = 0.0, om = 0.0;
    const int reps = 4;
    for (int rep = 0; rep < reps; ++rep) {
      const auto ds = testdata::make({.families = n, .p = 1, .beta = 0.69, .theta = 1.0}, 100 + static_cast<unsigned>(rep));
      const FrailtyFamily fam = FrailtyFamily::gamma(1.0);
      const ParameterVector g = gam({0.69}, 1.0);
      const MartingaleWorkspace ws = phat_and_pi(ds, g, breslow_step(ds, g, fam), fam);
      ups += std::accumulate(ws.upsilon.begin(), ws.upsilon.end(), 0.0) / static_cast<double>(ws.upsilon.size());
      const double nd = static_cast<double>(n);
      om += ws.omega_prefix.bottomRows(1).mean() / (nd * nd);
    }
    return std::pair{ups / reps, om / reps};
  };
  const auto [u1, o1] = mean_sizes(200);
  const auto [u2, o2] = mean_sizes(400);
  CHECK(u2 / u1 > 0.4);
  CHECK(u2 / u1 < 0.6);
  CHECK(o2 / o1 > 0.4);
  CHECK(o2 / o1 < 0.6);
}

TEST_CASE("covariance is invariant under family reordering") {
  const auto ds = testdata::make({.families = 60, .family_size = 2, .p = 2, .theta = 1.0}, 83);
  const FrailtyFamily fam = FrailtyFamily::gamma(1.0);
  const ParameterVector g = gam({0.5, -0.2}, 1.1);
  std::vector<Family> fams = ds.families();
  std::mt19937 rng(9);
  std::shuffle(fams.begin(), fams.end(), rng);
  ClusteredDataset other(fams);
  const SandwichParts a = sandwich(ds, g, breslow_step(ds, g, fam), fam);
  const SandwichParts b = sandwich(other, g, breslow_step(other, g, fam), fam);
  CHECK((a.covariance - b.covariance).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sandwich rejects a hazard on the wrong grid") {
  const auto ds = testdata::make({.families = 10}, 3);
  const FrailtyFamily fam = FrailtyFamily::gamma(1.0);
  StepCumulativeHazard h({1.0}, {0.1}, {1});
  CHECK_THROWS_AS(sandwich(ds, gam({0.0}, 1.0), h, fam), FrailtyError);
}
