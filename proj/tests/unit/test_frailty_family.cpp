#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "frailty/error.hpp"
#include "frailty/frailty_family.hpp"

#include <cmath>
#include <random>

using namespace frailty;

namespace {

// Independent oracle: the Γ-ratio closed form of the gamma moment integral,
//   φ_k = a^a Γ(n+k−1+a) / [Γ(a) (h+a)^{n+k−1+a}],  a = 1/θ.
double gamma_phi_oracle(int k, int n, double h, double theta) {
  const double a = 1.0 / theta;
  const double r = n + k - 1;
  return std::exp(a * std::log(a) + std::lgamma(r + a) - std::lgamma(a) - (r + a) * std::log(h + a));
}

double rel_err(double got, double want) { return std::abs(got - want) / std::max(std::abs(want), 1e-300); }

}  // namespace

TEST_CASE("gamma phi spot values") {
  CHECK(FrailtyFamily::gamma(1.0).phi(1, 0, 0.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(FrailtyFamily::gamma(1.0).phi(1, 1, 1.0) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(FrailtyFamily::gamma(2.0).psi(1, 0.5) == doctest::Approx(1.5).epsilon(1e-14));
  CHECK(FrailtyFamily::gamma(2.0).eta1(0, 0.0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(FrailtyFamily::gamma(2.0).eta1(1, 0.5) == doctest::Approx(1.5).epsilon(1e-14));
  for (double theta : {0.3, 1.0, 2.0, 5.0}) {
    CHECK(FrailtyFamily::gamma(theta).psi(0, 0.0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(FrailtyFamily::gamma(theta).phi_theta(1, 0, 0.0) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(std::abs(FrailtyFamily::gamma(theta).phi_theta2(0, 0.0)) < 1e-14);
  }
}

TEST_CASE("gamma closed form matches the Gamma-ratio oracle") {
  for (double theta : {0.01, 0.5, 1.0, 2.0, 7.5}) {
    const auto fam = FrailtyFamily::gamma(theta);
    for (int k = 1; k <= 4; ++k) {
      for (int n = 0; n <= 6; ++n) {
        for (double h : {0.0, 0.1, 1.0, 10.0, 37.0}) {
          CHECK(rel_err(fam.phi(k, n, h), gamma_phi_oracle(k, n, h, theta)) < 1e-11);
        }
      }
    }
  }
}

TEST_CASE("gamma quadrature matches closed form to 1e-8") {
  for (double theta : {0.5, 1.0, 2.0}) {
    const auto quad = FrailtyFamily::from_name("gamma-quadrature", theta);
    for (int k = 1; k <= 4; ++k) {
      for (int n = 0; n <= 4; ++n) {
        for (double h : {0.0, 0.1, 1.0, 10.0}) {
          CHECK(rel_err(quad.phi(k, n, h), gamma_phi_oracle(k, n, h, theta)) < 1e-8);
        }
      }
    }
  }
}

TEST_CASE("theta derivatives against finite differences of the oracle") {
  const double theta = 2.0;
  const double step = 1e-6;
  const auto fam = FrailtyFamily::gamma(theta);
  const double fd1 =
      (gamma_phi_oracle(1, 1, 0.5, theta + step) - gamma_phi_oracle(1, 1, 0.5, theta - step)) / (2 * step);
  CHECK(rel_err(fam.phi_theta(1, 1, 0.5), fd1) < 1e-5);

  const double s2 = 1e-4;
  const double fd2 = (gamma_phi_oracle(1, 1, 0.5, theta + s2) - 2 * gamma_phi_oracle(1, 1, 0.5, theta) +
                      gamma_phi_oracle(1, 1, 0.5, theta - s2)) /
                     (s2 * s2);
  CHECK(rel_err(fam.phi_theta2(1, 0.5), fd2) < 1e-4);

  // φ^(θθ) is the θ-derivative of φ^(θ)
  const double fd_of_first = (FrailtyFamily::gamma(theta + step).phi_theta(1, 1, 0.5) -
                              FrailtyFamily::gamma(theta - step).phi_theta(1, 1, 0.5)) /
                             (2 * step);
  CHECK(rel_err(fam.phi_theta2(1, 0.5), fd_of_first) < 1e-4);

  // k = 2 on a grid
  for (double th : {0.1, 0.7, 3.0}) {
    for (int n = 0; n <= 3; ++n) {
      for (double h : {0.2, 2.0}) {
        const double fd = (gamma_phi_oracle(2, n, h, th + step * th) - gamma_phi_oracle(2, n, h, th - step * th)) /
                          (2 * step * th);
        CHECK(rel_err(FrailtyFamily::gamma(th).phi_theta(2, n, h), fd) < 1e-5);
      }
    }
  }
}

TEST_CASE("quadrature with numerically differentiated density matches gamma analytic") {
  for (double theta : {0.5, 1.0, 2.0}) {
    const auto quad = FrailtyFamily::from_name("gamma-quadrature", theta);
    const auto exact = FrailtyFamily::gamma(theta);
    for (int n = 0; n <= 3; ++n) {
      for (double h : {0.1, 1.0, 4.0}) {
        CHECK(rel_err(quad.phi_theta(1, n, h), exact.phi_theta(1, n, h)) < 1e-5);
        CHECK(rel_err(quad.phi_theta(2, n, h), exact.phi_theta(2, n, h)) < 1e-5);
        CHECK(rel_err(quad.phi_theta2(n, h), exact.phi_theta2(n, h)) < 1e-3);
      }
    }
  }
}

TEST_CASE("posterior variance is nonnegative and psi decreases in h") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uh(0.0, 20.0), ut(0.01, 10.0);
  for (int rep = 0; rep < 2000; ++rep) {
    const auto fam = FrailtyFamily::gamma(ut(rng));
    const int n = static_cast<int>(rng() % 8);
    const auto m = fam.moments(n, uh(rng));
    CHECK(m.eta1() >= 0.0);
    CHECK(m.m3 * 1.0 >= m.m2 * m.m2 * (1 - 1e-14));
  }
  const auto fam = FrailtyFamily::gamma(2.0);
  double prev_psi = INFINITY, prev_phi = INFINITY;
  for (double h = 0.0; h <= 10.0; h += 0.05) {
    const double psi = fam.psi(2, h);
    const double phi = fam.phi(1, 2, h);
    CHECK(psi < prev_psi);
    CHECK(phi < prev_phi);
    prev_psi = psi;
    prev_phi = phi;
  }
}

TEST_CASE("gamma limit at theta -> 0") {
  const auto tiny = FrailtyFamily::gamma(1e-12);
  CHECK(tiny.psi(3, 2.0) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(tiny.phi(1, 2, 1.5) == doctest::Approx(std::exp(-1.5)).epsilon(1e-10));
  // derivatives converge to their θ = 0 limits
  const auto small = FrailtyFamily::gamma(1e-7).moments(2, 1.5);
  const auto zero = tiny.moments(2, 1.5);
  CHECK(small.d1 == doctest::Approx(zero.d1).epsilon(1e-5));
  CHECK(zero.d1 == doctest::Approx(1.0 + 1.5 * 1.5 / 2 - 2 * 1.5).epsilon(1e-12));
}

TEST_CASE("non-gamma densities are normalized with unit mean and variance theta") {
  for (const char* name : {"lognormal", "invgauss"}) {
    for (double theta : {0.3, 1.0, 2.0}) {
      const auto fam = FrailtyFamily::from_name(name, theta);
      CHECK(fam.phi(1, 0, 0.0) == doctest::Approx(1.0).epsilon(1e-6));
      CHECK(fam.psi(0, 0.0) == doctest::Approx(1.0).epsilon(1e-6));
      CHECK(fam.eta1(0, 0.0) == doctest::Approx(theta).epsilon(1e-5));
      CHECK(std::abs(fam.phi_theta(1, 0, 0.0)) < 1e-6);
      CHECK(fam.eta1(2, 1.3) >= 0.0);
    }
  }
}

TEST_CASE("tabulated density reproduces the gamma family near theta0") {
  const double theta0 = 1.0;
  GammaDensity g;
  std::vector<double> w, f, df;
  for (int i = 0; i <= 20000; ++i) {
    const double x = i * 0.002;
    w.push_back(x);
    f.push_back(std::exp(g.log_density(x, theta0)));
    const double fp = std::exp(g.log_density(x, theta0 + 1e-6));
    const double fm = std::exp(g.log_density(x, theta0 - 1e-6));
    df.push_back(x == 0.0 ? 0.0 : (fp - fm) / 2e-6);
  }
  auto tab = std::make_shared<TabulatedDensity>(w, f, df, theta0);
  const auto fam = FrailtyFamily::quadrature(tab, theta0);
  const auto exact = FrailtyFamily::gamma(theta0);
  CHECK(rel_err(fam.phi(2, 1, 0.7), exact.phi(2, 1, 0.7)) < 1e-4);
  CHECK(rel_err(fam.phi_theta(1, 1, 0.7), exact.phi_theta(1, 1, 0.7)) < 1e-3);
}

TEST_CASE("errors") {
  CHECK_THROWS_AS(FrailtyFamily::gamma(0.0), FrailtyError);
  CHECK_THROWS_AS(FrailtyFamily::gamma(1.0).phi(5, 0, 0.0), FrailtyError);
  CHECK_THROWS_AS(FrailtyFamily::gamma(1.0).psi(-1, 0.0), FrailtyError);
  CHECK_THROWS_AS(FrailtyFamily::from_name("stable", 1.0), FrailtyError);
  try {
    FrailtyFamily::gamma(1.0).psi(0, NAN);
    FAIL("expected throw");
  } catch (const FrailtyError& e) {
    CHECK(e.code() == ErrorCode::invalid_input);
  }
  // A density that does not integrate to one is rejected.
  auto bad = std::make_shared<TabulatedDensity>(std::vector<double>{0.0, 1.0}, std::vector<double>{1.0, 1.0},
                                                std::vector<double>{0.0, 0.0}, 1.0);
  CHECK_NOTHROW(FrailtyFamily::quadrature(bad, 1.0));
  auto bad2 = std::make_shared<TabulatedDensity>(std::vector<double>{0.0, 2.0}, std::vector<double>{1.0, 1.0},
                                                 std::vector<double>{0.0, 0.0}, 1.0);
  CHECK_THROWS_AS(FrailtyFamily::quadrature(bad2, 1.0), FrailtyError);
}
