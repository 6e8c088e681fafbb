#include "frailty/frailty_family.hpp"

#include "frailty/error.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <tuple>

namespace frailty {

// ---------------------------------------------------------------------------
// Gauss rules (Golub–Welsch)

void gauss_laguerre(int n, double alpha, std::vector<double>& nodes, std::vector<double>& log_weights) {
  if (n < 1 || !(alpha > -1.0)) throw FrailtyError(ErrorCode::invalid_input, "bad Gauss-Laguerre request");
  Eigen::VectorXd diag(n), sub(std::max(n - 1, 1));
  for (int i = 0; i < n; ++i) diag(i) = 2.0 * i + alpha + 1.0;
  for (int i = 1; i < n; ++i) sub(i - 1) = std::sqrt(i * (i + alpha));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, sub.head(n - 1), Eigen::ComputeEigenvectors);
  const double log_mu0 = std::lgamma(alpha + 1.0);
  nodes.resize(n);
  log_weights.resize(n);
  for (int i = 0; i < n; ++i) {
    nodes[i] = solver.eigenvalues()(i);
    const double v0 = solver.eigenvectors()(0, i);
    log_weights[i] = log_mu0 + 2.0 * std::log(std::abs(v0));
  }
}

void gauss_hermite(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  if (n < 1) throw FrailtyError(ErrorCode::invalid_input, "bad Gauss-Hermite request");
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n), sub(std::max(n - 1, 1));
  for (int i = 1; i < n; ++i) sub(i - 1) = std::sqrt(0.5 * i);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, sub.head(n - 1), Eigen::ComputeEigenvectors);
  const double mu0 = std::sqrt(std::numbers::pi);
  nodes.resize(n);
  weights.resize(n);
  for (int i = 0; i < n; ++i) {
    nodes[i] = solver.eigenvalues()(i);
    const double v0 = solver.eigenvectors()(0, i);
    weights[i] = mu0 * v0 * v0;
  }
}

namespace detail {

struct NodeSet {
  std::vector<double> nodes;
  std::vector<double> log_weights;
};

struct NodeCache {
  std::mutex mutex;
  std::map<std::tuple<int, int, double>, std::shared_ptr<const NodeSet>> sets;

  std::shared_ptr<const NodeSet> get(QuadratureTransform transform, int n, double alpha) {
    const auto key = std::make_tuple(static_cast<int>(transform), n, alpha);
    {
      std::lock_guard lock(mutex);
      auto it = sets.find(key);
      if (it != sets.end()) return it->second;
    }
    auto set = std::make_shared<NodeSet>();
    if (transform == QuadratureTransform::laguerre) {
      gauss_laguerre(n, alpha, set->nodes, set->log_weights);
    } else {
      std::vector<double> w;
      gauss_hermite(n, set->nodes, w);
      set->log_weights.resize(w.size());
      for (std::size_t i = 0; i < w.size(); ++i) set->log_weights[i] = std::log(w[i]);
    }
    std::lock_guard lock(mutex);
    if (sets.size() > 4096) sets.clear();
    sets.emplace(key, set);
    return set;
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Densities

double FrailtyDensity::fd_step(double theta) const {
  double step = 1e-6 * std::max(1.0, std::abs(theta));
  if (theta - 2.0 * step <= 0.0) step = 1e-3 * theta;
  return step;
}

double FrailtyDensity::dlog_dtheta(double w, double theta) const {
  const double step = fd_step(theta);
  return (log_density(w, theta + step) - log_density(w, theta - step)) / (2.0 * step);
}

double FrailtyDensity::d2log_dtheta2(double w, double theta) const {
  // A 1e-6 step leaves ~1e-3 roundoff in a second difference; use a wider one.
  double step = 1e-4 * std::max(1.0, std::abs(theta));
  if (theta - 2.0 * step <= 0.0) step = 1e-2 * theta;
  return (log_density(w, theta + step) - 2.0 * log_density(w, theta) + log_density(w, theta - step)) /
         (step * step);
}

double GammaDensity::log_density(double w, double theta) const {
  const double a = 1.0 / theta;
  if (w < 0.0) return -INFINITY;
  if (w == 0.0) return a == 1.0 ? 0.0 : (a > 1.0 ? -INFINITY : INFINITY);
  return (a - 1.0) * std::log(w) - a * w + a * std::log(a) - std::lgamma(a);
}

double LogNormalDensity::log_location(double theta) const { return -0.5 * std::log1p(theta); }
double LogNormalDensity::log_scale(double theta) const { return std::sqrt(std::log1p(theta)); }

double LogNormalDensity::log_density(double w, double theta) const {
  if (w <= 0.0) return -INFINITY;
  const double s2 = std::log1p(theta);
  const double mu = -0.5 * s2;
  const double lw = std::log(w);
  return -lw - 0.5 * std::log(2.0 * std::numbers::pi * s2) - (lw - mu) * (lw - mu) / (2.0 * s2);
}

// log W for the inverse Gaussian is close to normal with these moments.
double InverseGaussianDensity::log_location(double theta) const { return -0.5 * std::log1p(theta); }
double InverseGaussianDensity::log_scale(double theta) const { return std::sqrt(std::log1p(theta)); }

double InverseGaussianDensity::log_density(double w, double theta) const {
  if (w <= 0.0) return -INFINITY;
  const double lambda = 1.0 / theta;
  return 0.5 * std::log(lambda / (2.0 * std::numbers::pi)) - 1.5 * std::log(w) -
         lambda * (w - 1.0) * (w - 1.0) / (2.0 * w);
}

TabulatedDensity::TabulatedDensity(std::vector<double> w, std::vector<double> f, std::vector<double> df,
                                   double theta0)
    : w_(std::move(w)), f_(std::move(f)), df_(std::move(df)), theta0_(theta0) {
  if (w_.size() < 2 || f_.size() != w_.size() || df_.size() != w_.size()) {
    throw FrailtyError(ErrorCode::invalid_input, "tabulated density needs >= 2 rows of (w, f, df)");
  }
  for (std::size_t i = 0; i < w_.size(); ++i) {
    if (!(w_[i] >= 0.0) || (i > 0 && !(w_[i] > w_[i - 1]))) {
      throw FrailtyError(ErrorCode::invalid_input, "tabulated density: w must be increasing and >= 0");
    }
    if (!(f_[i] >= 0.0) || !std::isfinite(f_[i]) || !std::isfinite(df_[i])) {
      throw FrailtyError(ErrorCode::invalid_input, "tabulated density: f must be finite and >= 0");
    }
  }
  if (!(theta0_ > 0.0)) throw FrailtyError(ErrorCode::invalid_input, "tabulated density: theta0 must be > 0");
}

std::size_t TabulatedDensity::segment(double w) const {
  auto it = std::upper_bound(w_.begin(), w_.end(), w);
  std::size_t idx = static_cast<std::size_t>(it - w_.begin());
  return std::clamp<std::size_t>(idx == 0 ? 0 : idx - 1, 0, w_.size() - 2);
}

double TabulatedDensity::density(double w, double theta) const {
  if (w < w_.front() || w > w_.back()) return 0.0;
  const std::size_t s = segment(w);
  const double t = (w - w_[s]) / (w_[s + 1] - w_[s]);
  const double f = (1.0 - t) * f_[s] + t * f_[s + 1];
  const double df = (1.0 - t) * df_[s] + t * df_[s + 1];
  return f + (theta - theta0_) * df;
}

double TabulatedDensity::density_theta(double w) const {
  if (w < w_.front() || w > w_.back()) return 0.0;
  const std::size_t s = segment(w);
  const double t = (w - w_[s]) / (w_[s + 1] - w_[s]);
  return (1.0 - t) * df_[s] + t * df_[s + 1];
}

double TabulatedDensity::log_density(double w, double theta) const {
  const double f = density(w, theta);
  return f > 0.0 ? std::log(f) : -INFINITY;
}

double TabulatedDensity::dlog_dtheta(double w, double theta) const {
  const double f = density(w, theta);
  return f > 0.0 ? density_theta(w) / f : 0.0;
}

double TabulatedDensity::d2log_dtheta2(double w, double theta) const {
  const double f = density(w, theta);
  if (!(f > 0.0)) return 0.0;
  const double r = density_theta(w) / f;
  return -r * r;
}

// ---------------------------------------------------------------------------
// Closed-form gamma helpers.
//
// With a = 1/θ and integer r, lgamma(a + r) − lgamma(a) = Σ_{i<r} log(a + i),
// so log φ = Σ_{i<r} log1p(iθ) − (1/θ + r) log1p(hθ) exactly, and its θ
// derivatives need no polygamma functions. Everything stays finite at θ = 0.

namespace {

constexpr double kThetaFloor = 1e-8;

// log1p(x)/x
double log1p_over_x(double x) {
  if (std::abs(x) < 1e-5) return 1.0 - x / 2.0 + x * x / 3.0;
  return std::log1p(x) / x;
}

// q(x) = (log1p(x) − x/(1+x)) / x²
double q_fn(double x) {
  if (x < 0.05) {
    double sum = 0.0, pw = 1.0;
    for (int k = 2; k < 32; ++k) {
      sum += ((k % 2 == 0) ? 1.0 : -1.0) * (k - 1.0) / k * pw;
      pw *= x;
    }
    return sum;
  }
  return (std::log1p(x) - x / (1.0 + x)) / (x * x);
}

// q'(x)
double dq_fn(double x) {
  if (x < 0.05) {
    double sum = 0.0, pw = 1.0;
    for (int k = 3; k < 34; ++k) {
      sum += ((k % 2 == 0) ? 1.0 : -1.0) * (k - 1.0) * (k - 2.0) / k * pw;
      pw *= x;
    }
    return sum;
  }
  const double g = std::log1p(x) - x / (1.0 + x);
  return (x * x / ((1.0 + x) * (1.0 + x)) - 2.0 * g) / (x * x * x);
}

struct GammaLog {
  double value, d1, d2;  // log φ and its first two θ-derivatives
};

GammaLog gamma_log_phi(int r, double h, double theta) {
  const double x = h * theta;
  GammaLog out{0.0, 0.0, 0.0};
  for (int i = 1; i < r; ++i) {
    const double it = i * theta;
    out.value += std::log1p(it);
    out.d1 += i / (1.0 + it);
    out.d2 -= (i / (1.0 + it)) * (i / (1.0 + it));
  }
  const double lp = std::log1p(x);
  out.value += -h * log1p_over_x(x) - r * lp;
  out.d1 += h * h * q_fn(x) - r * h / (1.0 + x);
  out.d2 += h * h * h * dq_fn(x) + r * h * h / ((1.0 + x) * (1.0 + x));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// FrailtyFamily

FrailtyFamily FrailtyFamily::gamma(double theta) {
  if (!(theta > 0.0) || !std::isfinite(theta)) {
    throw FrailtyError(ErrorCode::invalid_input, "gamma frailty needs theta > 0");
  }
  FrailtyFamily fam;
  fam.kind_ = Kind::gamma_closed_form;
  fam.theta_ = theta;
  return fam;
}

FrailtyFamily FrailtyFamily::quadrature(std::shared_ptr<const FrailtyDensity> density, double theta,
                                        QuadratureConfig config) {
  if (!density) throw FrailtyError(ErrorCode::invalid_input, "quadrature family needs a density");
  if (!(theta > 0.0) || !std::isfinite(theta)) {
    throw FrailtyError(ErrorCode::invalid_input, "frailty theta must be > 0");
  }
  if (config.nodes < 2) throw FrailtyError(ErrorCode::invalid_input, "quadrature needs >= 2 nodes");
  FrailtyFamily fam;
  fam.kind_ = Kind::quadrature;
  fam.theta_ = theta;
  fam.density_ = std::move(density);
  fam.config_ = config;
  fam.cache_ = std::make_shared<detail::NodeCache>();
  fam.check_normalization();
  return fam;
}

FrailtyFamily FrailtyFamily::from_name(const std::string& name, double theta, QuadratureConfig config) {
  if (name == "gamma") return gamma(theta);
  if (name == "gamma-quadrature") return quadrature(std::make_shared<GammaDensity>(), theta, config);
  if (name == "lognormal") return quadrature(std::make_shared<LogNormalDensity>(), theta, config);
  if (name == "invgauss") return quadrature(std::make_shared<InverseGaussianDensity>(), theta, config);
  throw FrailtyError(ErrorCode::invalid_input, "unknown frailty family '" + name + "'");
}

FrailtyFamily FrailtyFamily::with_theta(double theta) const {
  if (!(theta > 0.0) || !std::isfinite(theta)) {
    throw FrailtyError(ErrorCode::invalid_input, "frailty theta must be > 0");
  }
  FrailtyFamily fam = *this;
  fam.theta_ = theta;
  return fam;
}

std::string FrailtyFamily::name() const {
  if (kind_ == Kind::gamma_closed_form) return "gamma";
  return density_->name() == "gamma" ? "gamma-quadrature" : density_->name();
}

void FrailtyFamily::check_normalization() const {
  const MomentRatios m = moments(0, 0.0, false);
  const double mass = std::exp(m.log_phi1);
  if (!(std::abs(mass - 1.0) <= 1e-6)) {
    std::ostringstream os;
    os << "frailty density '" << density_->name() << "' integrates to " << mass << " at theta=" << theta_
       << " (expected 1 to within 1e-6)";
    throw FrailtyError(ErrorCode::invalid_input, os.str());
  }
}

void FrailtyFamily::fail(int k, int n_events, double h, const std::string& what) const {
  std::ostringstream os;
  os.precision(17);
  os << "frailty integral " << what << " is not finite (k=" << k << ", n=" << n_events << ", h=" << h
     << ", theta=" << theta_ << ")";
  throw FrailtyError(ErrorCode::non_finite, os.str());
}

MomentRatios FrailtyFamily::moments(int n_events, double h, bool derivatives) const {
  if (n_events < 0 || !(h >= 0.0) || !std::isfinite(h)) {
    std::ostringstream os;
    os << "frailty moments need n >= 0 and finite h >= 0 (n=" << n_events << ", h=" << h << ")";
    throw FrailtyError(ErrorCode::invalid_input, os.str());
  }
  MomentRatios m;
  if (kind_ == Kind::gamma_closed_form) {
    m = gamma_moments(n_events, h);
  } else if (density_->is_tabulated()) {
    m = tabulated_moments(n_events, h);
  } else {
    m = quadrature_moments(n_events, h, derivatives);
  }
  if (!std::isfinite(m.log_phi1) || !std::isfinite(m.m2) || !std::isfinite(m.m3) || !std::isfinite(m.m4) ||
      !(m.m2 > 0.0)) {
    fail(1, n_events, h, "phi");
  }
  if (!std::isfinite(m.d1) || !std::isfinite(m.d2) || !std::isfinite(m.dd1)) fail(1, n_events, h, "phi_theta");
  return m;
}

MomentRatios FrailtyFamily::gamma_moments(int n_events, double h) const {
  const double theta = theta_ < kThetaFloor ? 0.0 : theta_;
  const double denom = 1.0 + h * theta;
  MomentRatios m;
  const GammaLog l0 = gamma_log_phi(n_events, h, theta);
  const GammaLog l1 = gamma_log_phi(n_events + 1, h, theta);
  m.log_phi1 = l0.value;
  m.m2 = (1.0 + n_events * theta) / denom;
  m.m3 = m.m2 * (1.0 + (n_events + 1) * theta) / denom;
  m.m4 = m.m3 * (1.0 + (n_events + 2) * theta) / denom;
  m.d1 = l0.d1;
  m.d2 = m.m2 * l1.d1;
  m.dd1 = l0.d1 * l0.d1 + l0.d2;
  return m;
}

MomentRatios FrailtyFamily::quadrature_moments(int n_events, double h, bool derivatives) const {
  if (!derivatives || density_->has_analytic_theta_derivatives()) {
    return quadrature_at(n_events, h, theta_, derivatives);
  }
  // Difference the integrals rather than the integrand: the Gauss rule is
  // rebuilt at each θ, so the log w terms in ∂θ log f never get integrated.
  MomentRatios m = quadrature_at(n_events, h, theta_, false);
  double s1 = 1e-6 * std::max(1.0, theta_);
  if (theta_ - s1 <= 0.0) s1 = 1e-3 * theta_;
  double s2 = 1e-4 * std::max(1.0, theta_);
  if (theta_ - s2 <= 0.0) s2 = 1e-2 * theta_;
  const MomentRatios p1 = quadrature_at(n_events, h, theta_ + s1, false);
  const MomentRatios m1 = quadrature_at(n_events, h, theta_ - s1, false);
  const MomentRatios p2 = quadrature_at(n_events, h, theta_ + s2, false);
  const MomentRatios m2 = quadrature_at(n_events, h, theta_ - s2, false);
  const double rp1 = std::exp(p1.log_phi1 - m.log_phi1), rm1 = std::exp(m1.log_phi1 - m.log_phi1);
  const double rp2 = std::exp(p2.log_phi1 - m.log_phi1), rm2 = std::exp(m2.log_phi1 - m.log_phi1);
  m.d1 = (rp1 - rm1) / (2.0 * s1);
  m.d2 = (rp1 * p1.m2 - rm1 * m1.m2) / (2.0 * s1);
  m.dd1 = (rp2 - 2.0 + rm2) / (s2 * s2);
  return m;
}

MomentRatios FrailtyFamily::quadrature_at(int n_events, double h, double theta, bool integrand_derivatives) const {
  const FrailtyDensity& dens = *density_;
  const QuadratureTransform transform =
      config_.override_transform ? config_.transform : dens.preferred_transform();
  const int n_nodes = config_.nodes;

  std::vector<double> w(n_nodes), lv(n_nodes);
  double log_prefactor = 0.0;
  if (transform == QuadratureTransform::laguerre) {
    const double shift = dens.small_w_exponent(theta);
    const double c = dens.tail_rate(theta);
    const double alpha = n_events + shift;
    if (!(alpha > -1.0) || !(c > 0.0)) fail(1, n_events, h, "quadrature setup");
    const auto set = cache_->get(transform, n_nodes, alpha);
    const double scale = h + c;
    log_prefactor = -(n_events + shift + 1.0) * std::log(scale);
    for (int q = 0; q < n_nodes; ++q) {
      w[q] = set->nodes[q] / scale;
      const double log_g = dens.log_density(w[q], theta) - shift * std::log(w[q]) + c * w[q];
      lv[q] = set->log_weights[q] + log_g;
    }
  } else {
    const double mu = dens.log_location(theta);
    const double sigma = dens.log_scale(theta);
    const auto set = cache_->get(transform, n_nodes, 0.0);
    log_prefactor = std::log(std::numbers::sqrt2 * sigma);
    for (int q = 0; q < n_nodes; ++q) {
      const double x = set->nodes[q];
      const double u = mu + std::numbers::sqrt2 * sigma * x;
      w[q] = std::exp(u);
      const double log_f = (n_events + 1.0) * u - h * w[q] + dens.log_density(w[q], theta);
      lv[q] = set->log_weights[q] + x * x + log_f;
    }
  }

  double lmax = -INFINITY;
  for (double v : lv) {
    if (std::isfinite(v)) lmax = std::max(lmax, v);
  }
  if (!std::isfinite(lmax)) fail(1, n_events, h, "phi");

  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0, sd1 = 0.0, sd2 = 0.0, sdd = 0.0;
  for (int q = 0; q < n_nodes; ++q) {
    if (!std::isfinite(lv[q])) continue;
    const double p = std::exp(lv[q] - lmax);
    if (p == 0.0) continue;
    s0 += p;
    s1 += p * w[q];
    s2 += p * w[q] * w[q];
    s3 += p * w[q] * w[q] * w[q];
    if (integrand_derivatives) {
      const double score = dens.dlog_dtheta(w[q], theta);
      const double curv = dens.d2log_dtheta2(w[q], theta);
      sd1 += p * score;
      sd2 += p * w[q] * score;
      sdd += p * (curv + score * score);
    }
  }
  MomentRatios m;
  m.log_phi1 = log_prefactor + lmax + std::log(s0);
  m.m2 = s1 / s0;
  m.m3 = s2 / s0;
  m.m4 = s3 / s0;
  m.d1 = sd1 / s0;
  m.d2 = sd2 / s0;
  m.dd1 = sdd / s0;
  return m;
}

MomentRatios FrailtyFamily::tabulated_moments(int n_events, double h) const {
  const auto& tab = static_cast<const TabulatedDensity&>(*density_);
  static constexpr double gl_x[8] = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                                     -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                                     0.7966664774136267,  0.9602898564975363};
  static constexpr double gl_w[8] = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                                     0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                                     0.2223810344533745, 0.1012285362903763};
  const auto& nodes = tab.nodes();
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0, sd1 = 0.0, sd2 = 0.0;
  for (std::size_t seg = 0; seg + 1 < nodes.size(); ++seg) {
    const double lo = nodes[seg], hi = nodes[seg + 1];
    const double half = 0.5 * (hi - lo), mid = 0.5 * (hi + lo);
    for (int q = 0; q < 8; ++q) {
      const double x = mid + half * gl_x[q];
      const double base = half * gl_w[q] * std::pow(x, n_events) * std::exp(-h * x);
      const double f = tab.density(x, theta_);
      const double df = tab.density_theta(x);
      s0 += base * f;
      s1 += base * f * x;
      s2 += base * f * x * x;
      s3 += base * f * x * x * x;
      sd1 += base * df;
      sd2 += base * df * x;
    }
  }
  if (!(s0 > 0.0)) fail(1, n_events, h, "phi");
  MomentRatios m;
  m.log_phi1 = std::log(s0);
  m.m2 = s1 / s0;
  m.m3 = s2 / s0;
  m.m4 = s3 / s0;
  m.d1 = sd1 / s0;
  m.d2 = sd2 / s0;
  m.dd1 = 0.0;  // linear in θ
  return m;
}

double FrailtyFamily::phi(int k, int n_events, double h) const {
  if (k < 1 || k > 4) throw FrailtyError(ErrorCode::invalid_input, "phi order k must be in 1..4");
  const MomentRatios m = moments(n_events, h, false);
  const double ratio = k == 1 ? 1.0 : k == 2 ? m.m2 : k == 3 ? m.m3 : m.m4;
  const double value = std::exp(m.log_phi1) * ratio;
  if (!std::isfinite(value) || !(value > 0.0)) fail(k, n_events, h, "phi");
  return value;
}

double FrailtyFamily::phi_theta(int k, int n_events, double h) const {
  if (k < 1 || k > 2) throw FrailtyError(ErrorCode::invalid_input, "phi_theta order k must be 1 or 2");
  const MomentRatios m = moments(n_events, h);
  const double value = std::exp(m.log_phi1) * (k == 1 ? m.d1 : m.d2);
  if (!std::isfinite(value)) fail(k, n_events, h, "phi_theta");
  return value;
}

double FrailtyFamily::phi_theta2(int n_events, double h) const {
  const MomentRatios m = moments(n_events, h);
  const double value = std::exp(m.log_phi1) * m.dd1;
  if (!std::isfinite(value)) fail(1, n_events, h, "phi_theta2");
  return value;
}

double FrailtyFamily::psi(int n_events, double h) const { return moments(n_events, h, false).psi(); }

double FrailtyFamily::eta1(int n_events, double h) const { return moments(n_events, h, false).eta1(); }

}  // namespace frailty
