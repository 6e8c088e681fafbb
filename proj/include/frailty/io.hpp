#pragma once

#include "frailty/cox_em.hpp"
#include "frailty/estimator.hpp"
#include "frailty/frailty_family.hpp"
#include "frailty/model.hpp"
#include "frailty/simulation.hpp"

#include <json.hpp>

#include <iosfwd>
#include <memory>
#include <string>

namespace frailty {

/// Reads `family_id,time,status,z1,...,zp`. Rows are grouped by family_id in
/// order of first appearance. Errors name the offending line.
ClusteredDataset parse_csv(const std::string& path);
ClusteredDataset parse_csv(std::istream& in, const std::string& source = "<stream>");

/// Writes the dataset in input order with 17 significant digits.
void write_csv(const ClusteredDataset& ds, std::ostream& out);

/// `w,f,df` rows (header optional) for a custom density tabulated at θ₀.
std::shared_ptr<const TabulatedDensity> read_tabulated_density(const std::string& path, double theta0);

/// `time,jump,cumulative`, one row per grid point.
void write_hazard_csv(const StepCumulativeHazard& hazard, std::ostream& out);

nlohmann::json to_json(const StepCumulativeHazard& hazard);
nlohmann::json to_json(const FitResult& res, const ClusteredDataset& ds, const std::string& frailty);
nlohmann::json to_json(const EmFit& em);
nlohmann::json to_json(const StudyReport& report, bool include_timing = true);
nlohmann::json to_json(const BootstrapResult& boot, const std::string& estimator, int B, std::uint64_t seed);

/// Serializes with lossless (shortest round-trip) doubles and NaN as null.
std::string dump(const nlohmann::json& j);

}  // namespace frailty
