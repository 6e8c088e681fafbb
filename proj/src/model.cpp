#include "frailty/model.hpp"

#include "frailty/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace frailty {

void ParameterVector::validate(std::size_t p) const {
  if (static_cast<std::size_t>(beta.size()) != p) {
    throw FrailtyError(ErrorCode::invalid_input, "beta has length " + std::to_string(beta.size()) +
                                                     ", expected " + std::to_string(p));
  }
  if (!beta.allFinite()) throw FrailtyError(ErrorCode::invalid_input, "beta has non-finite entries");
  if (!(theta > 0.0) || !std::isfinite(theta)) {
    throw FrailtyError(ErrorCode::invalid_input, "theta must be positive and finite");
  }
}

// ---------------------------------------------------------------------------
// StepCumulativeHazard

StepCumulativeHazard::StepCumulativeHazard(std::vector<double> grid, std::vector<double> jumps,
                                           std::vector<int> events)
    : grid_(std::move(grid)), jumps_(std::move(jumps)), events_(std::move(events)) {
  if (grid_.size() != jumps_.size()) {
    throw FrailtyError(ErrorCode::invalid_input, "hazard grid and jumps differ in length");
  }
  if (events_.empty()) events_.assign(grid_.size(), 0);
  if (events_.size() != grid_.size()) {
    throw FrailtyError(ErrorCode::invalid_input, "hazard grid and event counts differ in length");
  }
  cumulative_.resize(grid_.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < grid_.size(); ++k) {
    if (k > 0 && !(grid_[k] > grid_[k - 1])) {
      throw FrailtyError(ErrorCode::invalid_input, "hazard grid must be strictly increasing");
    }
    if (!(jumps_[k] >= 0.0) || !std::isfinite(jumps_[k])) {
      throw FrailtyError(ErrorCode::invalid_input, "hazard jumps must be finite and nonnegative");
    }
    acc += jumps_[k];
    cumulative_[k] = acc;
  }
}

double StepCumulativeHazard::operator()(double t) const {
  auto it = std::upper_bound(grid_.begin(), grid_.end(), t);
  if (it == grid_.begin()) return 0.0;
  return cumulative_[static_cast<std::size_t>(it - grid_.begin()) - 1];
}

StepCumulativeHazard StepCumulativeHazard::scaled(double factor) const {
  std::vector<double> jumps = jumps_;
  for (double& j : jumps) j *= factor;
  return StepCumulativeHazard(grid_, std::move(jumps), events_);
}

StepCumulativeHazard StepCumulativeHazard::with_extra_jump(double t, double mass) const {
  std::vector<double> grid = grid_;
  std::vector<double> jumps = jumps_;
  std::vector<int> events = events_;
  auto it = std::lower_bound(grid.begin(), grid.end(), t);
  auto pos = static_cast<std::size_t>(it - grid.begin());
  if (it != grid.end() && *it == t) {
    jumps[pos] += mass;
  } else {
    grid.insert(it, t);
    jumps.insert(jumps.begin() + static_cast<std::ptrdiff_t>(pos), mass);
    events.insert(events.begin() + static_cast<std::ptrdiff_t>(pos), 0);
  }
  return StepCumulativeHazard(std::move(grid), std::move(jumps), std::move(events));
}

// ---------------------------------------------------------------------------
// ClusteredDataset

namespace {

bool subject_less(const Subject& a, const Subject& b) {
  if (a.time != b.time) return a.time < b.time;
  if (a.status != b.status) return a.status < b.status;
  return a.covariates < b.covariates;
}

bool subject_equal(const Subject& a, const Subject& b) {
  return a.time == b.time && a.status == b.status && a.covariates == b.covariates;
}

}  // namespace

ClusteredDataset::ClusteredDataset(std::vector<Family> families, std::optional<double> tau,
                                   std::size_t max_family_size)
    : families_(std::move(families)), tau_override_(tau) {
  if (families_.empty()) throw FrailtyError(ErrorCode::invalid_input, "dataset has no families");
  bool have_p = false;
  for (const Family& fam : families_) {
    if (fam.subjects.empty()) {
      throw FrailtyError(ErrorCode::invalid_input, "family '" + fam.id + "' has no subjects");
    }
    if (max_family_size > 0 && fam.subjects.size() > max_family_size) {
      throw FrailtyError(ErrorCode::invalid_input,
                         "family '" + fam.id + "' exceeds the family size bound " +
                             std::to_string(max_family_size));
    }
    for (const Subject& s : fam.subjects) {
      if (!std::isfinite(s.time) || s.time < 0.0) {
        throw FrailtyError(ErrorCode::invalid_input,
                           "family '" + fam.id + "': follow-up time must be finite and >= 0");
      }
      if (s.status != 0 && s.status != 1) {
        throw FrailtyError(ErrorCode::invalid_input, "family '" + fam.id + "': status must be 0 or 1");
      }
      if (!have_p) {
        p_ = s.covariates.size();
        have_p = true;
      } else if (s.covariates.size() != p_) {
        throw FrailtyError(ErrorCode::invalid_input,
                           "family '" + fam.id + "': covariate length differs from " + std::to_string(p_));
      }
      for (double z : s.covariates) {
        if (!std::isfinite(z)) {
          throw FrailtyError(ErrorCode::invalid_input, "family '" + fam.id + "': non-finite covariate");
        }
      }
    }
  }
  build_layout();
}

void ClusteredDataset::build_layout() {
  const std::size_t n = families_.size();

  // Within-family canonical subject order.
  std::vector<std::vector<std::size_t>> member_order(n);
  std::vector<std::size_t> input_offset(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& subs = families_[i].subjects;
    auto& order = member_order[i];
    order.resize(subs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return subject_less(subs[a], subs[b]); });
    input_offset[i + 1] = input_offset[i] + subs.size();
  }

  family_input_index_.resize(n);
  std::iota(family_input_index_.begin(), family_input_index_.end(), 0);
  auto family_less = [&](std::size_t a, std::size_t b) {
    const auto& sa = families_[a].subjects;
    const auto& sb = families_[b].subjects;
    if (sa.size() != sb.size()) return sa.size() < sb.size();
    for (std::size_t j = 0; j < sa.size(); ++j) {
      const Subject& x = sa[member_order[a][j]];
      const Subject& y = sb[member_order[b][j]];
      if (!subject_equal(x, y)) return subject_less(x, y);
    }
    return families_[a].id < families_[b].id;
  };
  std::stable_sort(family_input_index_.begin(), family_input_index_.end(), family_less);

  const std::size_t total = input_offset[n];
  time_.resize(static_cast<Eigen::Index>(total));
  status_.resize(static_cast<Eigen::Index>(total));
  z_.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(p_));
  family_start_.assign(n + 1, 0);
  subject_input_index_.resize(total);
  family_event_count_.assign(n, 0);
  total_events_ = 0;

  std::size_t s = 0;
  double max_time = 0.0;
  for (std::size_t f = 0; f < n; ++f) {
    const std::size_t i = family_input_index_[f];
    family_start_[f] = s;
    for (std::size_t j : member_order[i]) {
      const Subject& sub = families_[i].subjects[j];
      const auto row = static_cast<Eigen::Index>(s);
      time_(row) = sub.time;
      status_(row) = sub.status;
      for (std::size_t r = 0; r < p_; ++r) z_(row, static_cast<Eigen::Index>(r)) = sub.covariates[r];
      subject_input_index_[s] = input_offset[i] + j;
      family_event_count_[f] += sub.status;
      max_time = std::max(max_time, sub.time);
      ++s;
    }
  }
  family_start_[n] = s;

  for (int st : family_event_count_) total_events_ += static_cast<std::size_t>(st);

  if (tau_override_) {
    if (*tau_override_ < max_time) {
      throw FrailtyError(ErrorCode::invalid_input, "tau must be >= every follow-up time");
    }
    tau_ = *tau_override_;
  } else {
    tau_ = max_time;
  }

  std::vector<double> ev;
  ev.reserve(total_events_);
  for (std::size_t k = 0; k < total; ++k) {
    if (status_(static_cast<Eigen::Index>(k)) == 1) ev.push_back(time_(static_cast<Eigen::Index>(k)));
  }
  std::sort(ev.begin(), ev.end());
  event_times_.clear();
  event_counts_.clear();
  for (double t : ev) {
    if (event_times_.empty() || event_times_.back() != t) {
      event_times_.push_back(t);
      event_counts_.push_back(1);
    } else {
      ++event_counts_.back();
    }
  }

  grid_position_.resize(total);
  for (std::size_t k = 0; k < total; ++k) {
    const double t = time_(static_cast<Eigen::Index>(k));
    grid_position_[k] =
        static_cast<int>(std::upper_bound(event_times_.begin(), event_times_.end(), t) - event_times_.begin());
  }
}

ClusteredDataset ClusteredDataset::resample(std::span<const std::size_t> family_indices) const {
  std::vector<Family> picked;
  picked.reserve(family_indices.size());
  std::size_t draw = 0;
  for (std::size_t idx : family_indices) {
    if (idx >= families_.size()) throw FrailtyError(ErrorCode::invalid_input, "resample index out of range");
    Family f = families_[idx];
    f.id += "#" + std::to_string(draw++);
    picked.push_back(std::move(f));
  }
  return ClusteredDataset(std::move(picked));
}

ClusteredDataset ClusteredDataset::shifted(std::span<const double> c) const {
  if (c.size() != p_) throw FrailtyError(ErrorCode::invalid_input, "shift has wrong length");
  std::vector<Family> fams = families_;
  for (Family& f : fams) {
    for (Subject& s : f.subjects) {
      for (std::size_t r = 0; r < p_; ++r) s.covariates[r] += c[r];
    }
  }
  return ClusteredDataset(std::move(fams), tau_override_);
}

// ---------------------------------------------------------------------------
// Counting-process quantities

namespace {

const Family& family_at(const ClusteredDataset& ds, std::size_t i) {
  if (i >= ds.num_families()) {
    throw FrailtyError(ErrorCode::invalid_input, "family index " + std::to_string(i) + " out of range");
  }
  return ds.families()[i];
}

}  // namespace

int counting_process(const ClusteredDataset& ds, std::size_t i, double t) {
  int count = 0;
  for (const Subject& s : family_at(ds, i).subjects) count += (s.status == 1 && s.time <= t) ? 1 : 0;
  return count;
}

int at_risk(const ClusteredDataset& ds, std::size_t i, std::size_t j, double t) {
  const Family& fam = family_at(ds, i);
  if (j >= fam.subjects.size()) {
    throw FrailtyError(ErrorCode::invalid_input, "subject index " + std::to_string(j) + " out of range");
  }
  return fam.subjects[j].time >= t ? 1 : 0;
}

double cumulative_intensity(const ClusteredDataset& ds, const StepCumulativeHazard& hazard,
                            const Eigen::VectorXd& beta, std::size_t i, double t) {
  const Family& fam = family_at(ds, i);
  if (static_cast<std::size_t>(beta.size()) != ds.dim()) {
    throw FrailtyError(ErrorCode::invalid_input, "beta length does not match covariate dimension");
  }
  double total = 0.0;
  for (const Subject& s : fam.subjects) {
    double lp = 0.0;
    for (std::size_t r = 0; r < ds.dim(); ++r) lp += beta(static_cast<Eigen::Index>(r)) * s.covariates[r];
    total += hazard(std::min(s.time, t)) * std::exp(lp);
  }
  return total;
}

}  // namespace frailty
