// frailty-fit: command-line front end for the shared frailty estimators.

#include "frailty/cli.hpp"
#include "frailty/error.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>

namespace {

// Keys whose values are passed through as JSON numbers rather than strings.
const std::set<std::string> kNumeric = {"custom_theta0", "theta_init", "tol_gamma", "tol_score", "max_iter",
                                        "families",      "family_size", "theta",    "censor_mean", "censor_sd",
                                        "replicates",    "B",          "seed",      "threads"};

struct Flag {
  const char* key;
  const char* names;
  const char* help;
};

const Flag kFlags[] = {
    {"data", "--data,--data_path", "input CSV: family_id,time,status,z1,...,zp"},
    {"out", "-o,--out", "write JSON here instead of stdout"},
    {"hazard_out", "--hazard-out,--hazard_out", "write the hazard table (time,jump,cumulative) as CSV"},
    {"frailty", "--frailty", "gamma | lognormal | invgauss | custom"},
    {"custom_density", "--custom-density,--custom_density", "w,f,df CSV for --frailty custom"},
    {"custom_theta0", "--custom-theta0,--custom_theta0", "theta at which the custom table was taken"},
    {"theta_init", "--theta-init,--theta_init", "starting theta"},
    {"tol_gamma", "--tol-gamma,--tol_gamma", "parameter-change tolerance"},
    {"tol_score", "--tol-score,--tol_score", "score tolerance"},
    {"max_iter", "--max-iter,--max_iter", "Newton iteration limit"},
    {"jacobian", "--jacobian", "analytic | fd"},
    {"families", "--families", "families per simulated dataset"},
    {"family_size", "--family-size,--family_size", "subjects per family"},
    {"beta", "--beta", "true coefficients, comma separated"},
    {"theta", "--theta", "true frailty variance"},
    {"censor_mean", "--censor-mean,--censor_mean", "mean of the normal censoring law"},
    {"censor_sd", "--censor-sd,--censor_sd", "sd of the normal censoring law"},
    {"replicates", "--replicates", "simulation replicates"},
    {"B", "-B,--B", "bootstrap resamples"},
    {"estimator", "--estimator", "pseudo_full | em (bootstrap)"},
    {"seed", "--seed", "random seed"},
    {"threads", "--threads", "worker threads (default: FRAILTY_THREADS or 1)"},
};

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw frailty::FrailtyError(frailty::ErrorCode::io_error, "cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw frailty::FrailtyError(frailty::ErrorCode::invalid_input, path + ": " + e.what());
  }
}

nlohmann::json flag_value(const std::string& key, const std::string& raw) {
  if (key == "beta") {
    auto arr = nlohmann::json::array();
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = raw.find(',', start);
      arr.push_back(nlohmann::json::parse(raw.substr(start, comma == std::string::npos ? comma : comma - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return arr;
  }
  if (kNumeric.count(key)) {
    const auto v = nlohmann::json::parse(raw);
    if (!v.is_number()) throw std::invalid_argument("not a number");
    return v;
  }
  return raw;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shared frailty model estimation: fit, compare with EM, simulate, bootstrap"};
  app.require_subcommand(1);

  std::map<std::string, std::string> raw;
  std::string config_path, design_path;
  const char* commands[][2] = {{"fit", "fit the pseudo-full-likelihood estimator"},
                               {"compare", "fit both the pseudo-full-likelihood and EM estimators"},
                               {"simulate", "run a Monte Carlo study"},
                               {"bootstrap", "cluster bootstrap standard errors"}};
  std::map<std::string, std::vector<std::pair<std::string, CLI::Option*>>> options;
  for (const auto& cmd : commands) {
    CLI::App* sub = app.add_subcommand(cmd[0], cmd[1]);
    sub->add_option("--config", config_path, "flat JSON config; flags override it");
    if (std::string(cmd[0]) == "simulate") sub->add_option("--design", design_path, "flat JSON simulation design");
    for (const Flag& f : kFlags) {
      options[cmd[0]].emplace_back(f.key, sub->add_option(f.names, raw[std::string(cmd[0]) + "." + f.key], f.help));
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << nlohmann::json{{"error", "invalid_input"}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  frailty::RunConfig config;
  try {
    if (!config_path.empty()) config = frailty::apply_config(read_json_file(config_path), config);
    if (!design_path.empty()) config = frailty::apply_config(read_json_file(design_path), config);
    nlohmann::json flags = nlohmann::json::object();
    for (const auto& [key, opt] : options[command]) {
      if (opt->count() == 0) continue;
      try {
        flags[key] = flag_value(key, raw[command + "." + key]);
      } catch (const std::exception&) {
        throw frailty::FrailtyError(frailty::ErrorCode::invalid_input, "bad value for --" + key);
      }
    }
    config = frailty::apply_config(flags, config);
  } catch (const frailty::FrailtyError& e) {
    std::cerr << nlohmann::json{{"error", frailty::to_string(e.code())}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }
  config.command = command;
  return frailty::run(config, std::cout, std::cerr);
}
