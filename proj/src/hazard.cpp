#include "frailty/hazard.hpp"

#include "frailty/error.hpp"
#include "sweep.hpp"

#include <algorithm>

namespace frailty {

namespace {

StepCumulativeHazard to_step(const ClusteredDataset& ds, const detail::Sweep& sw) {
  const auto t = ds.event_times();
  const auto d = ds.event_counts();
  return StepCumulativeHazard({t.begin(), t.end()}, sw.jumps, {d.begin(), d.end()});
}

}  // namespace

StepCumulativeHazard breslow_step(const ClusteredDataset& ds, const ParameterVector& gamma,
                                  const FrailtyFamily& fam) {
  return to_step(ds, detail::run_sweep(ds, gamma, fam, {}));
}

HazardWithDerivatives hazard_derivatives(const ClusteredDataset& ds, const ParameterVector& gamma,
                                         const FrailtyFamily& fam, const StepCumulativeHazard& hazard) {
  const auto grid = hazard.grid();
  const auto times = ds.event_times();
  if (!std::equal(grid.begin(), grid.end(), times.begin(), times.end())) {
    throw FrailtyError(ErrorCode::invalid_input, "hazard grid does not match the dataset's event times");
  }
  detail::SweepOptions opt;
  opt.derivatives = true;
  opt.fixed_jumps = hazard.jumps();
  const detail::Sweep sw = detail::run_sweep(ds, gamma, fam, opt);
  const auto p = static_cast<Eigen::Index>(ds.dim());
  return {hazard, sw.djump.leftCols(p), sw.djump.col(p)};
}

}  // namespace frailty
