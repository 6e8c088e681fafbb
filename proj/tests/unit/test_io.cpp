#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "frailty/cli.hpp"
#include "frailty/error.hpp"
#include "frailty/io.hpp"
#include "support/random_data.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

using namespace frailty;

namespace {

std::optional<ErrorCode> code_of(const std::string& text) {
  std::istringstream in(text);
  try {
    parse_csv(in, "t.csv");
  } catch (const FrailtyError& e) {
    return e.code();
  }
  return std::nullopt;
}

std::string message_of(const std::string& text) {
  std::istringstream in(text);
  try {
    parse_csv(in, "t.csv");
  } catch (const FrailtyError& e) {
    return e.what();
  }
  return "";
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "frailty_test_io";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("parse_csv: two rows, one family") {
  std::istringstream in("family_id,time,status,z1\nA,1.5,1,0.25\nA,2.0,0,-1\n");
  const ClusteredDataset ds = parse_csv(in);
  CHECK(ds.num_families() == 1);
  CHECK(ds.num_subjects() == 2);
  CHECK(ds.dim() == 1);
  CHECK(ds.tau() == 2.0);
  CHECK(ds.families()[0].subjects[0].covariates[0] == 0.25);
}

TEST_CASE("parse_csv: families grouped in order of first appearance") {
  std::istringstream in("family_id,time,status\nb,1,1\na,2,0\nb,3,0\n");
  const ClusteredDataset ds = parse_csv(in);
  REQUIRE(ds.num_families() == 2);
  CHECK(ds.families()[0].id == "b");
  CHECK(ds.families()[0].subjects.size() == 2);
  CHECK(ds.families()[0].subjects[1].time == 3.0);
  CHECK(ds.dim() == 0);
}

TEST_CASE("parse_csv: errors name the line") {
  const std::string bad_status =
      "family_id,time,status,z1\n1,1,1,0\n1,2,0,0\n2,3,1,1\n2,4,0,1\n3,5,1,0\n3,6,2,0\n";
  CHECK(code_of(bad_status) == ErrorCode::invalid_input);
  CHECK(message_of(bad_status).find("t.csv:7:") != std::string::npos);

  CHECK(message_of("family_id,time,status\n1,abc,1\n").find("t.csv:2:") != std::string::npos);
  CHECK(message_of("family_id,time,status\n1,-1,1\n").find("t.csv:2:") != std::string::npos);
  CHECK(message_of("family_id,time,status,z1\n1,1,1\n").find("t.csv:2:") != std::string::npos);
  CHECK(message_of("id,time,status\n1,1,1\n").find("t.csv:1:") != std::string::npos);
  CHECK(code_of("") == ErrorCode::invalid_input);
  CHECK(code_of("family_id,time,status\n") == ErrorCode::invalid_input);
  CHECK_THROWS_AS(parse_csv("/nonexistent/x.csv"), FrailtyError);
}

TEST_CASE("round trip: write, parse, fit gives an identical result") {
  testdata::Options opt;
  opt.families = 40;
  opt.p = 2;
  const ClusteredDataset ds = testdata::make(opt, 11);
  std::stringstream buf;
  write_csv(ds, buf);
  const ClusteredDataset back = parse_csv(buf);
  REQUIRE(back.num_subjects() == ds.num_subjects());
  CHECK(back.time() == ds.time());
  CHECK(back.covariates() == ds.covariates());

  const FrailtyFamily fam = FrailtyFamily::gamma(1.0);
  const FitResult a = fit(ds, fam);
  const FitResult b = fit(back, fam);
  CHECK(a.gamma_hat.beta == b.gamma_hat.beta);
  CHECK(a.gamma_hat.theta == b.gamma_hat.theta);
  CHECK(a.covariance == b.covariance);
  CHECK(dump(to_json(a, ds, "gamma")) == dump(to_json(b, back, "gamma")));

  // JSON doubles survive a parse.
  const auto j = nlohmann::json::parse(dump(to_json(a, ds, "gamma")));
  CHECK(j["theta"].get<double>() == a.gamma_hat.theta);
}

TEST_CASE("hazard CSV: one row per grid point, nondecreasing") {
  const ClusteredDataset ds = testdata::make({}, 3);
  const FitResult r = fit(ds, FrailtyFamily::gamma(1.0));
  std::stringstream out;
  write_hazard_csv(r.hazard, out);
  std::string line;
  std::getline(out, line);
  CHECK(line == "time,jump,cumulative");
  std::size_t rows = 0;
  double prev = 0.0;
  while (std::getline(out, line)) {
    const double cum = std::stod(line.substr(line.rfind(',') + 1));
    CHECK(cum >= prev);
    prev = cum;
    ++rows;
  }
  CHECK(rows == ds.event_times().size());
}

TEST_CASE("apply_config: flat keys, overlay, unknown keys rejected") {
  RunConfig base;
  const RunConfig c = apply_config(nlohmann::json::parse(R"({"theta": 1.5, "beta": 0.3, "seed": 9, "families": 40})"),
                                   base);
  CHECK(c.theta == 1.5);
  CHECK(c.beta == std::vector<double>{0.3});
  CHECK(c.seed == 9u);
  CHECK(c.families == 40u);
  CHECK(c.censor_mean == base.censor_mean);
  const RunConfig d = apply_config(nlohmann::json::parse(R"({"beta": [0.1, -0.2]})"), c);
  CHECK(d.beta.size() == 2);
  CHECK(d.theta == 1.5);
  CHECK_THROWS_AS(apply_config(nlohmann::json::parse(R"({"thetta": 1})"), base), FrailtyError);
  CHECK_THROWS_AS(apply_config(nlohmann::json::parse(R"({"theta": "big"})"), base), FrailtyError);
  CHECK_THROWS_AS(apply_config(nlohmann::json::parse("[1]"), base), FrailtyError);
}

TEST_CASE("run: exit codes and machine-readable errors") {
  const auto empty = scratch("no_events.csv");
  std::ofstream(empty) << "family_id,time,status\na,1,0\nb,2,0\n";
  RunConfig c;
  c.command = "fit";
  c.data = empty.string();
  std::ostringstream out, err;
  CHECK(run(c, out, err) == 1);
  const auto e = nlohmann::json::parse(err.str());
  CHECK(e["error"] == "no_events");

  err.str("");
  c.command = "simulate";
  CHECK(run(c, out, err) == 1);
  CHECK(nlohmann::json::parse(err.str())["error"] == "invalid_input");

  err.str("");
  c.command = "compare";
  c.frailty = "lognormal";
  CHECK(run(c, out, err) == 1);

  err.str("");
  c.command = "dance";
  CHECK(run(c, out, err) == 1);
}

TEST_CASE("run: fit writes JSON and hazard files") {
  const auto data = scratch("fit.csv");
  {
    std::ofstream f(data);
    write_csv(testdata::make({}, 5), f);
  }
  RunConfig c;
  c.command = "fit";
  c.data = data.string();
  c.out = scratch("fit.json").string();
  c.hazard_out = scratch("hazard.csv").string();
  std::ostringstream out, err;
  REQUIRE(run(c, out, err) == 0);
  CHECK(out.str().empty());
  std::ifstream jf(c.out);
  const auto j = nlohmann::json::parse(jf);
  for (const char* key : {"beta", "theta", "se", "covariance", "hazard", "diagnostics"}) CHECK(j.contains(key));
  CHECK(std::filesystem::file_size(c.hazard_out) > 0);
}

TEST_CASE("run: simulate is deterministic for a fixed seed") {
  RunConfig c;
  c.command = "simulate";
  c.families = 30;
  c.replicates = 2;
  c.seed = 4;
  std::ostringstream a, b, err;
  REQUIRE(run(c, a, err) == 0);
  REQUIRE(run(c, b, err) == 0);
  auto ja = nlohmann::json::parse(a.str());
  auto jb = nlohmann::json::parse(b.str());
  ja.erase("timing_seconds");
  jb.erase("timing_seconds");
  CHECK(ja == jb);
}
