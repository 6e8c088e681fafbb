#include "frailty/cli.hpp"

#include "frailty/error.hpp"
#include "frailty/io.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>

namespace frailty {

namespace {

template <class T>
void get_to(const nlohmann::json& v, T& field, const std::string& key) {
  try {
    field = v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw FrailtyError(ErrorCode::invalid_input, "config key '" + key + "' has the wrong type");
  }
}

StudyEstimator parse_estimator(const std::string& s) {
  if (s == "pseudo_full") return StudyEstimator::pseudo_full;
  if (s == "em") return StudyEstimator::em;
  throw FrailtyError(ErrorCode::invalid_input, "estimator must be 'pseudo_full' or 'em'");
}

void require_data(const RunConfig& c) {
  if (c.data.empty()) throw FrailtyError(ErrorCode::invalid_input, c.command + " needs --data");
}

std::uint64_t require_seed(const RunConfig& c) {
  if (!c.seed) throw FrailtyError(ErrorCode::invalid_input, c.command + " needs --seed");
  return *c.seed;
}

void emit(const nlohmann::json& j, const RunConfig& c, std::ostream& out) {
  if (c.out.empty()) {
    out << dump(j) << '\n';
    return;
  }
  std::ofstream f(c.out);
  if (!f) throw FrailtyError(ErrorCode::io_error, "cannot write '" + c.out + "'");
  f << dump(j) << '\n';
}

void warn(std::ostream& err, const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) err << "warning: " << w << '\n';
}

std::string side_by_side(const FitResult& ours, const EmFit& em) {
  std::string s;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-10s%16s%16s%12s\n", "", "pseudo_full", "em", "delta");
  s += buf;
  for (Eigen::Index r = 0; r < ours.gamma_hat.beta.size(); ++r) {
    const std::string name = ours.gamma_hat.beta.size() == 1 ? "beta" : "beta" + std::to_string(r + 1);
    std::snprintf(buf, sizeof buf, "%-10s%16.4f%16.4f%12.4f\n", name.c_str(), ours.gamma_hat.beta(r), em.beta(r),
                  ours.gamma_hat.beta(r) - em.beta(r));
    s += buf;
  }
  std::snprintf(buf, sizeof buf, "%-10s%16.4f%16.4f%12.4f\n", "theta", ours.gamma_hat.theta, em.theta,
                ours.gamma_hat.theta - em.theta);
  return s + buf;
}

int run_fit(const RunConfig& c, std::ostream& out, std::ostream& err) {
  require_data(c);
  const ClusteredDataset ds = parse_csv(c.data);
  const FrailtyFamily fam = make_family(c);
  const FitResult res = fit(ds, fam, make_fit_config(c));
  nlohmann::json j = to_json(res, ds, c.frailty);
  j["command"] = "fit";
  emit(j, c, out);
  if (!c.hazard_out.empty()) {
    std::ofstream h(c.hazard_out);
    if (!h) throw FrailtyError(ErrorCode::io_error, "cannot write '" + c.hazard_out + "'");
    write_hazard_csv(res.hazard, h);
  }
  warn(err, res.warnings);
  return res.converged ? 0 : 2;
}

int run_compare(const RunConfig& c, std::ostream& out, std::ostream& err) {
  require_data(c);
  if (c.frailty != "gamma") throw FrailtyError(ErrorCode::invalid_input, "the EM comparator supports gamma only");
  const ClusteredDataset ds = parse_csv(c.data);
  const FitResult ours = fit(ds, make_family(c), make_fit_config(c));
  const EmFit em = em_fit(ds);
  nlohmann::json j;
  j["command"] = "compare";
  j["pseudo_full"] = to_json(ours, ds, c.frailty);
  j["em"] = to_json(em);
  std::vector<double> dbeta;
  for (Eigen::Index r = 0; r < em.beta.size(); ++r) dbeta.push_back(ours.gamma_hat.beta(r) - em.beta(r));
  j["delta"] = {{"beta", dbeta}, {"theta", ours.gamma_hat.theta - em.theta}};
  emit(j, c, out);
  if (!c.out.empty()) out << side_by_side(ours, em);
  warn(err, ours.warnings);
  warn(err, em.warnings);
  return ours.converged && em.converged ? 0 : 2;
}

int run_simulate(const RunConfig& c, std::ostream& out, std::ostream& err) {
  require_seed(c);
  const SimDesign d = make_design(c);
  StudyOptions opt;
  opt.frailty = c.frailty;
  opt.fit = make_fit_config(c);
  opt.threads = c.threads;
  const StudyReport rep = run_study(d, c.replicates, opt);
  nlohmann::json j = to_json(rep);
  j["command"] = "simulate";
  emit(j, c, out);
  if (!c.out.empty()) out << format_report(rep);
  warn(err, rep.warnings);
  return rep.used > 0 ? 0 : 2;
}

int run_bootstrap(const RunConfig& c, std::ostream& out, std::ostream& err) {
  require_data(c);
  const std::uint64_t seed = require_seed(c);
  const StudyEstimator est = parse_estimator(c.estimator);
  if (est == StudyEstimator::em && c.frailty != "gamma") {
    throw FrailtyError(ErrorCode::invalid_input, "the EM comparator supports gamma only");
  }
  const ClusteredDataset ds = parse_csv(c.data);
  const BootstrapResult boot =
      cluster_bootstrap(ds, make_family(c), c.B, seed, est, make_fit_config(c), EmConfig{}, c.threads);
  nlohmann::json j = to_json(boot, c.estimator, c.B, seed);
  j["command"] = "bootstrap";
  emit(j, c, out);
  warn(err, boot.warnings);
  return boot.estimates.rows() >= 2 ? 0 : 2;
}

}  // namespace

FrailtyFamily make_family(const RunConfig& c) {
  if (c.frailty == "custom") {
    if (c.custom_density.empty()) {
      throw FrailtyError(ErrorCode::invalid_input, "frailty 'custom' needs custom_density (a w,f,df CSV)");
    }
    return FrailtyFamily::quadrature(read_tabulated_density(c.custom_density, c.custom_theta0), c.theta_init);
  }
  return FrailtyFamily::from_name(c.frailty, c.theta_init);
}

FitConfig make_fit_config(const RunConfig& c) {
  FitConfig f;
  f.theta_init = c.theta_init;
  f.tol_gamma = c.tol_gamma;
  f.tol_score = c.tol_score;
  f.max_iter = c.max_iter;
  if (c.jacobian == "analytic") {
    f.jacobian = JacobianMode::analytic;
  } else if (c.jacobian == "fd") {
    f.jacobian = JacobianMode::finite_difference;
  } else {
    throw FrailtyError(ErrorCode::invalid_input, "jacobian must be 'analytic' or 'fd'");
  }
  return f;
}

SimDesign make_design(const RunConfig& c) {
  SimDesign d;
  d.families = c.families;
  d.family_size = c.family_size;
  d.beta = Eigen::Map<const Eigen::VectorXd>(c.beta.data(), static_cast<Eigen::Index>(c.beta.size()));
  d.theta = c.theta;
  d.censor_mean = c.censor_mean;
  d.censor_sd = c.censor_sd;
  if (c.seed) d.seed = *c.seed;
  return d;
}

RunConfig apply_config(const nlohmann::json& j, RunConfig c) {
  if (!j.is_object()) throw FrailtyError(ErrorCode::invalid_input, "config must be a JSON object");
  const std::map<std::string, std::function<void(const nlohmann::json&)>> setters = {
      {"command", [&](const nlohmann::json& v) { get_to(v, c.command, "command"); }},
      {"data", [&](const nlohmann::json& v) { get_to(v, c.data, "data"); }},
      {"out", [&](const nlohmann::json& v) { get_to(v, c.out, "out"); }},
      {"hazard_out", [&](const nlohmann::json& v) { get_to(v, c.hazard_out, "hazard_out"); }},
      {"frailty", [&](const nlohmann::json& v) { get_to(v, c.frailty, "frailty"); }},
      {"custom_density", [&](const nlohmann::json& v) { get_to(v, c.custom_density, "custom_density"); }},
      {"custom_theta0", [&](const nlohmann::json& v) { get_to(v, c.custom_theta0, "custom_theta0"); }},
      {"theta_init", [&](const nlohmann::json& v) { get_to(v, c.theta_init, "theta_init"); }},
      {"tol_gamma", [&](const nlohmann::json& v) { get_to(v, c.tol_gamma, "tol_gamma"); }},
      {"tol_score", [&](const nlohmann::json& v) { get_to(v, c.tol_score, "tol_score"); }},
      {"max_iter", [&](const nlohmann::json& v) { get_to(v, c.max_iter, "max_iter"); }},
      {"jacobian", [&](const nlohmann::json& v) { get_to(v, c.jacobian, "jacobian"); }},
      {"families", [&](const nlohmann::json& v) { get_to(v, c.families, "families"); }},
      {"family_size", [&](const nlohmann::json& v) { get_to(v, c.family_size, "family_size"); }},
      {"beta",
       [&](const nlohmann::json& v) {
         if (v.is_number()) {
           c.beta = {v.get<double>()};
         } else {
           get_to(v, c.beta, "beta");
         }
       }},
      {"theta", [&](const nlohmann::json& v) { get_to(v, c.theta, "theta"); }},
      {"censor_mean", [&](const nlohmann::json& v) { get_to(v, c.censor_mean, "censor_mean"); }},
      {"censor_sd", [&](const nlohmann::json& v) { get_to(v, c.censor_sd, "censor_sd"); }},
      {"replicates", [&](const nlohmann::json& v) { get_to(v, c.replicates, "replicates"); }},
      {"B", [&](const nlohmann::json& v) { get_to(v, c.B, "B"); }},
      {"estimator", [&](const nlohmann::json& v) { get_to(v, c.estimator, "estimator"); }},
      {"seed",
       [&](const nlohmann::json& v) {
         std::uint64_t s = 0;
         get_to(v, s, "seed");
         c.seed = s;
       }},
      {"threads", [&](const nlohmann::json& v) { get_to(v, c.threads, "threads"); }},
  };
  for (const auto& [key, value] : j.items()) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw FrailtyError(ErrorCode::invalid_input, "unknown config key '" + key + "'");
    it->second(value);
  }
  return c;
}

int run(const RunConfig& config, std::ostream& out, std::ostream& err) {
  auto report = [&](std::string_view code, const std::string& message) {
    err << nlohmann::json{{"error", code}, {"message", message}}.dump() << '\n';
  };
  try {
    if (config.command == "fit") return run_fit(config, out, err);
    if (config.command == "compare") return run_compare(config, out, err);
    if (config.command == "simulate") return run_simulate(config, out, err);
    if (config.command == "bootstrap") return run_bootstrap(config, out, err);
    throw FrailtyError(ErrorCode::invalid_input, "unknown command '" + config.command + "'");
  } catch (const FrailtyError& e) {
    report(to_string(e.code()), e.what());
    const bool numerical = e.code() == ErrorCode::singular_jacobian || e.code() == ErrorCode::non_finite;
    return numerical ? 2 : 1;
  } catch (const std::exception& e) {
    report("invalid_input", e.what());
    return 1;
  }
}

}  // namespace frailty
