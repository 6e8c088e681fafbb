#include "frailty/simulation.hpp"

#include "frailty/error.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

namespace frailty {

namespace {

// Independent stream per (seed, index, purpose).
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t index, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), purpose};
  return std::mt19937_64(seq);
}

constexpr std::uint32_t kGenerate = 0x5eed0001u;
constexpr std::uint32_t kBootstrap = 0x5eed0002u;

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& body) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, count); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

struct Estimate {
  Eigen::VectorXd gamma;  // β, θ
  Eigen::VectorXd se;
};

std::optional<Estimate> run_estimator(const ClusteredDataset& ds, StudyEstimator which, const FrailtyFamily& fam,
                                      const FitConfig& fit_config, const EmConfig& em_config) {
  const auto p = static_cast<Eigen::Index>(ds.dim());
  Estimate out;
  out.gamma.resize(p + 1);
  out.se = Eigen::VectorXd::Constant(p + 1, NAN);
  try {
    if (which == StudyEstimator::pseudo_full) {
      const FitResult r = fit(ds, fam, fit_config);
      if (!r.converged) return std::nullopt;
      out.gamma << r.gamma_hat.beta, r.gamma_hat.theta;
      if (fit_config.compute_variance) {
        if (!r.se.allFinite()) return std::nullopt;
        out.se = r.se;
      }
    } else {
      const EmFit r = em_fit(ds, em_config);
      if (!r.converged) return std::nullopt;
      out.gamma << r.beta, r.theta;
    }
  } catch (const FrailtyError&) {
    return std::nullopt;
  }
  return out;
}

double mean_of(const Eigen::VectorXd& v) { return v.size() ? v.mean() : NAN; }

double sd_of(const Eigen::VectorXd& v) {
  if (v.size() < 2) return NAN;
  const double m = v.mean();
  return std::sqrt((v.array() - m).square().sum() / static_cast<double>(v.size() - 1));
}

double correlation_of(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() < 2) return NAN;
  const Eigen::ArrayXd x = a.array() - a.mean(), y = b.array() - b.mean();
  return (x * y).sum() / std::sqrt(x.square().sum() * y.square().sum());
}

}  // namespace

void SimDesign::validate() const {
  if (families < 1 || family_size < 1) throw FrailtyError(ErrorCode::invalid_input, "design needs n ≥ 1 and m ≥ 1");
  if (!(theta >= 0.0) || !std::isfinite(theta)) throw FrailtyError(ErrorCode::invalid_input, "design theta must be ≥ 0");
  if (!(censor_sd > 0.0) || !std::isfinite(censor_mean)) {
    throw FrailtyError(ErrorCode::invalid_input, "censoring needs a finite mean and sd > 0");
  }
  if (beta.size() < 1 || !beta.allFinite()) throw FrailtyError(ErrorCode::invalid_input, "design beta is invalid");
}

ClusteredDataset generate(const SimDesign& design, std::uint64_t replicate) {
  design.validate();
  auto rng = stream(design.seed, replicate, kGenerate);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::optional<std::gamma_distribution<double>> frailty;
  if (design.theta > 0.0) frailty.emplace(1.0 / design.theta, design.theta);
  const auto p = static_cast<std::size_t>(design.beta.size());

  std::vector<Family> fams;
  fams.reserve(design.families);
  for (std::size_t i = 0; i < design.families; ++i) {
    const double w = frailty ? (*frailty)(rng) : 1.0;
    Family fam{std::to_string(i + 1), {}};
    fam.subjects.reserve(design.family_size);
    for (std::size_t j = 0; j < design.family_size; ++j) {
      Subject s;
      double lp = 0.0;
      for (std::size_t r = 0; r < p; ++r) {
        s.covariates.push_back(normal(rng));
        lp += design.beta(static_cast<Eigen::Index>(r)) * s.covariates.back();
      }
      // Inverse-CDF draw: 1 − U avoids log(0).
      const double e = -std::log(1.0 - unif(rng));
      const double t0 = w > 0.0 ? 100.0 * std::pow(e / (w * std::exp(lp)), 1.0 / 4.6) : INFINITY;
      const double c = std::max(0.0, design.censor_mean + design.censor_sd * normal(rng));
      s.status = t0 <= c ? 1 : 0;
      s.time = s.status ? t0 : c;
      fam.subjects.push_back(std::move(s));
    }
    fams.push_back(std::move(fam));
  }
  return ClusteredDataset(std::move(fams));
}

std::string to_string(StudyEstimator e) { return e == StudyEstimator::pseudo_full ? "pseudo_full" : "em"; }

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("FRAILTY_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
  }
  return 1;
}

StudyReport run_study(const SimDesign& design, int replicates, const StudyOptions& options) {
  design.validate();
  if (replicates < 1) throw FrailtyError(ErrorCode::invalid_input, "replicates must be ≥ 1");
  if (options.estimators.empty()) throw FrailtyError(ErrorCode::invalid_input, "no estimators requested");
  const FrailtyFamily fam = FrailtyFamily::from_name(options.frailty, 1.0);
  const std::size_t E = options.estimators.size();
  const auto R = static_cast<std::size_t>(replicates);
  const auto q = design.beta.size() + 1;

  std::vector<std::vector<std::optional<Estimate>>> results(E, std::vector<std::optional<Estimate>>(R));
  std::vector<std::vector<double>> seconds(E, std::vector<double>(R, 0.0));
  std::vector<std::size_t> censored(R, 0);

  parallel_for(R, resolve_threads(options.threads), [&](std::size_t r) {
    const ClusteredDataset ds = generate(design, r);
    censored[r] = ds.num_subjects() - ds.total_events();
    for (std::size_t e = 0; e < E; ++e) {
      const auto t0 = std::chrono::steady_clock::now();
      results[e][r] = run_estimator(ds, options.estimators[e], fam, options.fit, options.em);
      seconds[e][r] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
  });

  StudyReport report;
  report.design = design;
  report.requested = replicates;
  std::vector<std::size_t> used;
  for (std::size_t r = 0; r < R; ++r) {
    bool ok = true;
    for (std::size_t e = 0; e < E; ++e) ok = ok && results[e][r].has_value();
    if (ok) used.push_back(r);
  }
  report.used = static_cast<int>(used.size());
  std::size_t total_censored = 0;
  for (std::size_t c : censored) total_censored += c;
  report.censoring_fraction =
      static_cast<double>(total_censored) / static_cast<double>(R * design.families * design.family_size);

  const Eigen::VectorXd truth = (Eigen::VectorXd(q) << design.beta, design.theta).finished();
  for (std::size_t e = 0; e < E; ++e) {
    EstimatorReport er;
    er.estimator = options.estimators[e];
    for (std::size_t r = 0; r < R; ++r) {
      if (!results[e][r]) ++er.failures;
      er.seconds += seconds[e][r];
    }
    er.estimates.resize(static_cast<Eigen::Index>(used.size()), q);
    er.standard_errors.resize(static_cast<Eigen::Index>(used.size()), q);
    for (std::size_t u = 0; u < used.size(); ++u) {
      er.estimates.row(static_cast<Eigen::Index>(u)) = results[e][used[u]]->gamma.transpose();
      er.standard_errors.row(static_cast<Eigen::Index>(u)) = results[e][used[u]]->se.transpose();
    }
    for (Eigen::Index c = 0; c < q; ++c) {
      ParameterSummary ps;
      ps.name = c + 1 < q ? (q == 2 ? "beta" : "beta" + std::to_string(c + 1)) : "theta";
      ps.mean = mean_of(er.estimates.col(c));
      ps.sd = sd_of(er.estimates.col(c));
      if (er.standard_errors.rows() > 0 && er.standard_errors.col(c).allFinite()) {
        ps.mean_se = er.standard_errors.col(c).mean();
        int covered = 0;
        for (Eigen::Index u = 0; u < er.estimates.rows(); ++u) {
          covered += std::abs(er.estimates(u, c) - truth(c)) <= 1.959963984540054 * er.standard_errors(u, c);
        }
        ps.coverage = static_cast<double>(covered) / static_cast<double>(er.estimates.rows());
      }
      er.parameters.push_back(ps);
    }
    if (er.failures > 0) {
      report.warnings.push_back(to_string(er.estimator) + ": " + std::to_string(er.failures) +
                                " replicate(s) failed to converge and were excluded");
    }
    report.estimators.push_back(std::move(er));
  }
  if (E >= 2) {
    for (Eigen::Index c = 0; c < q; ++c) {
      report.correlation.push_back(
          correlation_of(report.estimators[0].estimates.col(c), report.estimators[1].estimates.col(c)));
    }
  }
  return report;
}

std::string format_report(const StudyReport& rep) {
  const auto& d = rep.design;
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "n=%zu families of size %zu; theta=%g; censoring N(%g, %g^2), observed %.1f%%\n",
                d.families, d.family_size, d.theta, d.censor_mean, d.censor_sd, 100.0 * rep.censoring_fraction);
  os << buf;
  os << "replicates: " << rep.requested << " requested, " << rep.used << " used\n";
  if (rep.estimators.empty()) return os.str();

  auto cell = [](double v, const char* fmt) {
    char b[32];
    if (std::isnan(v)) return std::string("-");
    std::snprintf(b, sizeof b, fmt, v);
    return std::string(b);
  };
  const std::size_t q = rep.estimators.front().parameters.size();
  for (std::size_t c = 0; c < q; ++c) {
    const auto& name = rep.estimators.front().parameters[c].name;
    const double truth = c + 1 < q ? d.beta(static_cast<Eigen::Index>(c)) : d.theta;
    std::snprintf(buf, sizeof buf, "\n%s (true %.4g)\n%-20s", name.c_str(), truth, "");
    os << buf;
    for (const auto& er : rep.estimators) {
      std::snprintf(buf, sizeof buf, "%14s", to_string(er.estimator).c_str());
      os << buf;
    }
    os << '\n';
    const char* labels[] = {"Empirical mean", "Empirical SD", "Mean estimated SD", "95% Wald CI (%)"};
    for (int row = 0; row < 4; ++row) {
      std::snprintf(buf, sizeof buf, "%-20s", labels[row]);
      os << buf;
      for (const auto& er : rep.estimators) {
        const auto& ps = er.parameters[c];
        std::string s;
        if (row == 0) s = cell(ps.mean, "%.3f");
        if (row == 1) s = cell(ps.sd, "%.3f");
        if (row == 2) s = cell(ps.mean_se, "%.3f");
        if (row == 3) s = cell(100.0 * ps.coverage, "%.1f");
        std::snprintf(buf, sizeof buf, "%14s", s.c_str());
        os << buf;
      }
      os << '\n';
    }
    if (c < rep.correlation.size()) {
      std::snprintf(buf, sizeof buf, "%-20s%14s\n", "Correlation", cell(rep.correlation[c], "%.3f").c_str());
      os << buf;
    }
  }
  for (const auto& w : rep.warnings) os << "warning: " << w << '\n';
  return os.str();
}

BootstrapResult cluster_bootstrap(const ClusteredDataset& ds, const FrailtyFamily& fam, int B, std::uint64_t seed,
                                  StudyEstimator estimator, FitConfig fit_config, EmConfig em_config, int threads) {
  if (B < 2) throw FrailtyError(ErrorCode::invalid_input, "bootstrap needs B ≥ 2");
  fit_config.compute_variance = false;
  const std::size_t n = ds.num_families();
  const auto q = static_cast<Eigen::Index>(ds.dim() + 1);
  std::vector<std::optional<Estimate>> fits(static_cast<std::size_t>(B));
  parallel_for(fits.size(), resolve_threads(threads), [&](std::size_t b) {
    auto rng = stream(seed, b, kBootstrap);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = pick(rng);
    fits[b] = run_estimator(ds.resample(idx), estimator, fam, fit_config, em_config);
  });

  BootstrapResult out;
  std::vector<Eigen::VectorXd> ok;
  for (const auto& f : fits) {
    if (f) {
      ok.push_back(f->gamma);
    } else {
      ++out.failures;
    }
  }
  out.estimates.resize(static_cast<Eigen::Index>(ok.size()), q);
  for (std::size_t i = 0; i < ok.size(); ++i) out.estimates.row(static_cast<Eigen::Index>(i)) = ok[i].transpose();
  out.se.resize(q);
  for (Eigen::Index c = 0; c < q; ++c) out.se(c) = sd_of(out.estimates.col(c));
  if (out.failures * 10 > B) {
    out.warnings.push_back(std::to_string(out.failures) + " of " + std::to_string(B) +
                           " bootstrap resamples failed and were dropped");
  }
  if (ok.size() < 2) out.warnings.push_back("fewer than two bootstrap resamples succeeded; SE is undefined");
  return out;
}

}  // namespace frailty
