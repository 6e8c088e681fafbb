#pragma once

#include <memory>
#include <string>
#include <vector>

namespace frailty {

/// Everything the estimators need from the frailty law at one history point
/// (N_i·(t) = n, H_i·(t) = h), expressed relative to
///   φ_k = ∫ w^{n+k-1} e^{-hw} f(w;θ) dw.
struct MomentRatios {
  double log_phi1 = 0.0;
  double m2 = 1.0;   // φ2/φ1, the posterior mean ψ
  double m3 = 1.0;   // φ3/φ1
  double m4 = 1.0;   // φ4/φ1
  double d1 = 0.0;   // φ1^(θ)/φ1
  double d2 = 0.0;   // φ2^(θ)/φ1
  double dd1 = 0.0;  // φ1^(θθ)/φ1

  double psi() const { return m2; }
  double eta1() const { return m3 - m2 * m2; }
  // ∂ψ/∂h
  double dpsi_dh() const { return m2 * m2 - m3; }
  // ∂ψ/∂θ at fixed h
  double dpsi_dtheta() const { return d2 - m2 * d1; }
};

enum class QuadratureTransform {
  laguerre,     // generalized Gauss–Laguerre after v = w (h + c)
  log_hermite,  // Gauss–Hermite in u = log w
};

/// A frailty density f(w;θ) on (0, ∞) with unit mean, used by the quadrature
/// kind of FrailtyFamily.
class FrailtyDensity {
 public:
  virtual ~FrailtyDensity() = default;

  virtual std::string name() const = 0;
  virtual double log_density(double w, double theta) const = 0;

  // ∂θ log f and ∂²θ log f. Only consulted when has_analytic_theta_derivatives()
  // is true; otherwise the moment integrals are differenced in θ directly.
  virtual double dlog_dtheta(double w, double theta) const;
  virtual double d2log_dtheta2(double w, double theta) const;
  virtual bool has_analytic_theta_derivatives() const { return false; }

  // Quadrature hints: f(w) ~ w^{b-1} near zero, f(w) ~ e^{-cw} in the tail,
  // and a location/scale of log W for the Hermite transform.
  virtual double small_w_exponent(double /*theta*/) const { return 0.0; }
  virtual double tail_rate(double /*theta*/) const { return 1.0; }
  virtual double log_location(double /*theta*/) const { return 0.0; }
  virtual double log_scale(double /*theta*/) const { return 1.0; }
  virtual QuadratureTransform preferred_transform() const { return QuadratureTransform::laguerre; }

  // Tabulated densities integrate piecewise instead of by Gauss rules.
  virtual bool is_tabulated() const { return false; }

 protected:
  double fd_step(double theta) const;
};

/// Gamma with mean 1 and variance θ (shape = rate = 1/θ).
class GammaDensity final : public FrailtyDensity {
 public:
  std::string name() const override { return "gamma"; }
  double log_density(double w, double theta) const override;
  double small_w_exponent(double theta) const override { return 1.0 / theta - 1.0; }
  double tail_rate(double theta) const override { return 1.0 / theta; }
};

/// Log-normal with mean 1 and variance θ.
class LogNormalDensity final : public FrailtyDensity {
 public:
  std::string name() const override { return "lognormal"; }
  double log_density(double w, double theta) const override;
  double log_location(double theta) const override;
  double log_scale(double theta) const override;
  QuadratureTransform preferred_transform() const override { return QuadratureTransform::log_hermite; }
};

/// Inverse Gaussian with mean 1 and variance θ (shape λ = 1/θ).
class InverseGaussianDensity final : public FrailtyDensity {
 public:
  std::string name() const override { return "invgauss"; }
  double log_density(double w, double theta) const override;
  double log_location(double theta) const override;
  double log_scale(double theta) const override;
  QuadratureTransform preferred_transform() const override { return QuadratureTransform::log_hermite; }
};

/// Density read from a table of (w, f, df/dθ) rows taken at θ = θ₀ and
/// linearly interpolated in w; away from θ₀ it is the first-order expansion
/// f(w;θ) = f(w) + (θ − θ₀) f′(w).
class TabulatedDensity final : public FrailtyDensity {
 public:
  TabulatedDensity(std::vector<double> w, std::vector<double> f, std::vector<double> df, double theta0);

  std::string name() const override { return "custom"; }
  double log_density(double w, double theta) const override;
  double dlog_dtheta(double w, double theta) const override;
  double d2log_dtheta2(double w, double theta) const override;
  bool is_tabulated() const override { return true; }

  double density(double w, double theta) const;
  double density_theta(double w) const;
  const std::vector<double>& nodes() const { return w_; }

 private:
  std::size_t segment(double w) const;

  std::vector<double> w_, f_, df_;
  double theta0_;
};

struct QuadratureConfig {
  int nodes = 64;
  // Unset: use the density's preferred transform.
  bool override_transform = false;
  QuadratureTransform transform = QuadratureTransform::laguerre;
};

namespace detail {
struct NodeCache;
}

/// The frailty law at a given θ: closed-form gamma, or any FrailtyDensity
/// integrated numerically. Immutable; all queries are thread-safe.
class FrailtyFamily {
 public:
  enum class Kind { gamma_closed_form, quadrature };

  static FrailtyFamily gamma(double theta);
  static FrailtyFamily quadrature(std::shared_ptr<const FrailtyDensity> density, double theta,
                                  QuadratureConfig config = {});
  // "gamma" | "gamma-quadrature" | "lognormal" | "invgauss"
  static FrailtyFamily from_name(const std::string& name, double theta, QuadratureConfig config = {});

  FrailtyFamily with_theta(double theta) const;

  Kind kind() const { return kind_; }
  double theta() const { return theta_; }
  std::string name() const;
  const QuadratureConfig& quadrature_config() const { return config_; }

  // With derivatives = false only log_phi1 and m2..m4 are filled in.
  MomentRatios moments(int n_events, double h, bool derivatives = true) const;

  double phi(int k, int n_events, double h) const;
  double phi_theta(int k, int n_events, double h) const;
  double phi_theta2(int n_events, double h) const;
  double psi(int n_events, double h) const;
  double eta1(int n_events, double h) const;

 private:
  FrailtyFamily() = default;

  MomentRatios gamma_moments(int n_events, double h) const;
  MomentRatios quadrature_moments(int n_events, double h, bool derivatives) const;
  MomentRatios quadrature_at(int n_events, double h, double theta, bool integrand_derivatives) const;
  MomentRatios tabulated_moments(int n_events, double h) const;
  void check_normalization() const;
  [[noreturn]] void fail(int k, int n_events, double h, const std::string& what) const;

  Kind kind_ = Kind::gamma_closed_form;
  double theta_ = 1.0;
  std::shared_ptr<const FrailtyDensity> density_;
  QuadratureConfig config_;
  std::shared_ptr<detail::NodeCache> cache_;
};

// Nodes and log-weights of the n-point generalized Gauss–Laguerre rule for
// the weight v^alpha e^{-v} on (0, ∞).
void gauss_laguerre(int n, double alpha, std::vector<double>& nodes, std::vector<double>& log_weights);
// Nodes and weights of the n-point Gauss–Hermite rule for e^{-x²}.
void gauss_hermite(int n, std::vector<double>& nodes, std::vector<double>& weights);

}  // namespace frailty
