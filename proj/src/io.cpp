#include "frailty/io.hpp"

#include "frailty/error.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace frailty {

namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
  return std::string(s.substr(a, b - a));
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? comma : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

[[noreturn]] void bad_line(const std::string& source, std::size_t line, const std::string& what) {
  throw FrailtyError(ErrorCode::invalid_input, source + ":" + std::to_string(line) + ": " + what);
}

bool parse_double(const std::string& s, double& v) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  return ec == std::errc() && ptr == end && std::isfinite(v);
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool blank(const std::string& line) { return trim(line).empty(); }

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json vector_json(const Eigen::VectorXd& v) {
  auto a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

// JSON has no NaN or infinity; write them as null.
void scrub(nlohmann::json& j) {
  if (j.is_number_float() && !std::isfinite(j.get<double>())) {
    j = nullptr;
  } else if (j.is_structured()) {
    for (auto& x : j) scrub(x);
  }
}

}  // namespace

ClusteredDataset parse_csv(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    header = split(line);
    break;
  }
  if (header.empty()) throw FrailtyError(ErrorCode::invalid_input, source + ": file is empty");
  if (header.size() < 3 || header[0] != "family_id" || header[1] != "time" || header[2] != "status") {
    bad_line(source, lineno, "header must start with family_id,time,status");
  }
  const std::size_t p = header.size() - 3;

  std::vector<Family> fams;
  std::unordered_map<std::string, std::size_t> index;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) {
      bad_line(source, lineno,
               "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(cells.size()));
    }
    if (cells[0].empty()) bad_line(source, lineno, "empty family_id");
    Subject s;
    if (!parse_double(cells[1], s.time) || s.time < 0.0) bad_line(source, lineno, "time must be a number >= 0");
    if (cells[2] == "0") {
      s.status = 0;
    } else if (cells[2] == "1") {
      s.status = 1;
    } else {
      bad_line(source, lineno, "status must be 0 or 1, got '" + cells[2] + "'");
    }
    s.covariates.resize(p);
    for (std::size_t r = 0; r < p; ++r) {
      if (!parse_double(cells[3 + r], s.covariates[r])) {
        bad_line(source, lineno, "covariate " + header[3 + r] + " is not a finite number");
      }
    }
    auto [it, fresh] = index.try_emplace(cells[0], fams.size());
    if (fresh) fams.push_back(Family{cells[0], {}});
    fams[it->second].subjects.push_back(std::move(s));
  }
  if (fams.empty()) throw FrailtyError(ErrorCode::invalid_input, source + ": no data rows");
  return ClusteredDataset(std::move(fams));
}

ClusteredDataset parse_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FrailtyError(ErrorCode::io_error, "cannot open '" + path + "'");
  return parse_csv(in, path);
}

void write_csv(const ClusteredDataset& ds, std::ostream& out) {
  out << "family_id,time,status";
  for (std::size_t r = 0; r < ds.dim(); ++r) out << ",z" << r + 1;
  out << '\n';
  for (const Family& f : ds.families()) {
    for (const Subject& s : f.subjects) {
      out << f.id << ',' << fmt17(s.time) << ',' << s.status;
      for (double z : s.covariates) out << ',' << fmt17(z);
      out << '\n';
    }
  }
}

std::shared_ptr<const TabulatedDensity> read_tabulated_density(const std::string& path, double theta0) {
  std::ifstream in(path);
  if (!in) throw FrailtyError(ErrorCode::io_error, "cannot open '" + path + "'");
  std::vector<double> w, f, df;
  std::string line;
  std::size_t lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    const auto cells = split(line);
    double a, b, c;
    const bool numeric = cells.size() == 3 && parse_double(cells[0], a) && parse_double(cells[1], b) &&
                         parse_double(cells[2], c);
    if (!numeric) {
      if (first) {  // header
        first = false;
        continue;
      }
      bad_line(path, lineno, "expected three numbers w,f,df");
    }
    first = false;
    w.push_back(a);
    f.push_back(b);
    df.push_back(c);
  }
  return std::make_shared<TabulatedDensity>(std::move(w), std::move(f), std::move(df), theta0);
}

void write_hazard_csv(const StepCumulativeHazard& h, std::ostream& out) {
  out << "time,jump,cumulative\n";
  for (std::size_t k = 0; k < h.size(); ++k) {
    out << fmt17(h.grid()[k]) << ',' << fmt17(h.jumps()[k]) << ',' << fmt17(h.cumulative()[k]) << '\n';
  }
}

nlohmann::json to_json(const StepCumulativeHazard& h) {
  nlohmann::json j;
  j["time"] = std::vector<double>(h.grid().begin(), h.grid().end());
  j["jump"] = std::vector<double>(h.jumps().begin(), h.jumps().end());
  j["cumulative"] = std::vector<double>(h.cumulative().begin(), h.cumulative().end());
  return j;
}

nlohmann::json to_json(const FitResult& res, const ClusteredDataset& ds, const std::string& frailty) {
  const auto p = static_cast<Eigen::Index>(ds.dim());
  nlohmann::json j;
  j["frailty"] = frailty;
  j["data"] = {{"families", ds.num_families()},
               {"subjects", ds.num_subjects()},
               {"events", ds.total_events()},
               {"covariates", ds.dim()}};
  j["beta"] = vector_json(res.gamma_hat.beta);
  j["theta"] = res.gamma_hat.theta;
  j["se"] = {{"beta", vector_json(res.se.head(p))}, {"theta", res.se(p)}};
  j["covariance"] = matrix_json(res.covariance);
  j["hazard"] = to_json(res.hazard);
  nlohmann::json diag;
  diag["converged"] = res.converged;
  diag["iterations"] = res.iterations;
  diag["score_norm"] = res.score_norm;
  diag["theta_at_boundary"] = res.theta_at_boundary;
  diag["warnings"] = res.warnings;
  if (res.sandwich) {
    diag["sandwich"] = {{"D", matrix_json(res.sandwich->D)},
                        {"V", matrix_json(res.sandwich->V)},
                        {"G", matrix_json(res.sandwich->G)},
                        {"C", matrix_json(res.sandwich->C)}};
  }
  j["diagnostics"] = std::move(diag);
  return j;
}

nlohmann::json to_json(const EmFit& em) {
  nlohmann::json j;
  j["beta"] = vector_json(em.beta);
  j["theta"] = em.theta;
  j["hazard"] = to_json(em.baseline);
  j["w_hat"] = em.w_hat;
  j["diagnostics"] = {{"converged", em.converged},
                      {"iterations", em.iterations},
                      {"theta_at_boundary", em.theta_at_boundary},
                      {"loglik", em.loglik_trace.empty() ? NAN : em.loglik_trace.back()},
                      {"warnings", em.warnings}};
  return j;
}

nlohmann::json to_json(const StudyReport& rep, bool include_timing) {
  const auto& d = rep.design;
  nlohmann::json j;
  j["design"] = {{"families", d.families},    {"family_size", d.family_size}, {"beta", vector_json(d.beta)},
                 {"theta", d.theta},          {"censor_mean", d.censor_mean}, {"censor_sd", d.censor_sd},
                 {"seed", d.seed}};
  j["replicates"] = {{"requested", rep.requested}, {"used", rep.used}};
  j["censoring_fraction"] = rep.censoring_fraction;
  auto ests = nlohmann::json::array();
  for (const auto& er : rep.estimators) {
    nlohmann::json e;
    e["estimator"] = to_string(er.estimator);
    e["failures"] = er.failures;
    auto params = nlohmann::json::array();
    for (const auto& ps : er.parameters) {
      params.push_back({{"name", ps.name},
                        {"empirical_mean", ps.mean},
                        {"empirical_sd", ps.sd},
                        {"mean_estimated_sd", ps.mean_se},
                        {"coverage", ps.coverage}});
    }
    e["parameters"] = std::move(params);
    ests.push_back(std::move(e));
  }
  j["estimators"] = std::move(ests);
  j["correlation"] = rep.correlation;
  j["warnings"] = rep.warnings;
  if (include_timing) {
    nlohmann::json t;
    for (const auto& er : rep.estimators) t[to_string(er.estimator)] = er.seconds;
    j["timing_seconds"] = std::move(t);
  }
  return j;
}

nlohmann::json to_json(const BootstrapResult& boot, const std::string& estimator, int B, std::uint64_t seed) {
  const Eigen::Index p = boot.se.size() - 1;
  nlohmann::json j;
  j["estimator"] = estimator;
  j["B"] = B;
  j["seed"] = seed;
  j["se"] = {{"beta", vector_json(boot.se.head(p))}, {"theta", boot.se(p)}};
  j["failures"] = boot.failures;
  j["estimates"] = matrix_json(boot.estimates);
  j["warnings"] = boot.warnings;
  return j;
}

std::string dump(const nlohmann::json& j) {
  nlohmann::json copy = j;
  scrub(copy);
  return copy.dump(2);
}

}  // namespace frailty
