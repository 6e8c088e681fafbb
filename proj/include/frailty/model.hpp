#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace frailty {

struct Subject {
  double time = 0.0;
  int status = 0;
  std::vector<double> covariates;
};

struct Family {
  std::string id;
  std::vector<Subject> subjects;
};

struct ParameterVector {
  Eigen::VectorXd beta;
  double theta = 1.0;

  // Throws FrailtyError(invalid_input) unless theta > 0 and all entries finite.
  void validate(std::size_t p) const;
};

/// Right-continuous step function Λ(t) = Σ_{τ_k ≤ t} ΔΛ(τ_k) over a strictly
/// increasing grid. `events` carries the multiplicity d_k of each grid point.
class StepCumulativeHazard {
 public:
  StepCumulativeHazard() = default;
  StepCumulativeHazard(std::vector<double> grid, std::vector<double> jumps,
                       std::vector<int> events = {});

  double operator()(double t) const;

  std::size_t size() const { return grid_.size(); }
  std::span<const double> grid() const { return grid_; }
  std::span<const double> jumps() const { return jumps_; }
  std::span<const int> events() const { return events_; }
  // Λ(τ_k) for every grid point.
  std::span<const double> cumulative() const { return cumulative_; }

  StepCumulativeHazard scaled(double factor) const;
  // Adds `mass` at time t (merging with an existing grid point).
  StepCumulativeHazard with_extra_jump(double t, double mass) const;

 private:
  std::vector<double> grid_;
  std::vector<double> jumps_;
  std::vector<int> events_;
  std::vector<double> cumulative_;
};

/// Families of subjects with follow-up time, event status and covariates.
///
/// `families()` keeps the order the data was supplied in. Every estimator
/// works on a flattened layout in which families (and subjects within a
/// family) are sorted by content, so results do not depend on input order.
/// Indices named "canonical" refer to that layout.
class ClusteredDataset {
 public:
  // max_family_size == 0 means unbounded; tau defaults to the largest time.
  explicit ClusteredDataset(std::vector<Family> families,
                            std::optional<double> tau = std::nullopt,
                            std::size_t max_family_size = 0);

  const std::vector<Family>& families() const { return families_; }
  std::size_t num_families() const { return families_.size(); }
  std::size_t num_subjects() const { return static_cast<std::size_t>(time_.size()); }
  std::size_t dim() const { return p_; }
  double tau() const { return tau_; }
  std::size_t total_events() const { return total_events_; }

  // Flattened canonical layout.
  const Eigen::VectorXd& time() const { return time_; }
  const Eigen::VectorXi& status() const { return status_; }
  const Eigen::MatrixXd& covariates() const { return z_; }  // N x p
  // Canonical family f owns subjects [family_start[f], family_start[f+1]).
  std::span<const std::size_t> family_start() const { return family_start_; }
  // Canonical family -> index into families().
  std::span<const std::size_t> family_input_index() const { return family_input_index_; }
  // Canonical subject -> position in the input-order flattening
  // (families() in order, subjects in order).
  std::span<const std::size_t> subject_input_index() const { return subject_input_index_; }

  // Distinct event times τ_1 < ... < τ_K and their multiplicities d_k.
  std::span<const double> event_times() const { return event_times_; }
  std::span<const int> event_counts() const { return event_counts_; }
  // Number of event-grid points ≤ T for each canonical subject.
  std::span<const int> grid_position() const { return grid_position_; }
  // N_i·(τ) per canonical family.
  std::span<const int> family_event_count() const { return family_event_count_; }

  // New dataset made of the given families (by input index, repeats allowed).
  ClusteredDataset resample(std::span<const std::size_t> family_indices) const;
  // Copy with c added to every covariate vector.
  ClusteredDataset shifted(std::span<const double> c) const;

 private:
  void build_layout();

  std::vector<Family> families_;
  std::size_t p_ = 0;
  double tau_ = 0.0;
  std::optional<double> tau_override_;
  std::size_t total_events_ = 0;

  Eigen::VectorXd time_;
  Eigen::VectorXi status_;
  Eigen::MatrixXd z_;
  std::vector<std::size_t> family_start_;
  std::vector<std::size_t> family_input_index_;
  std::vector<std::size_t> subject_input_index_;
  std::vector<double> event_times_;
  std::vector<int> event_counts_;
  std::vector<int> grid_position_;
  std::vector<int> family_event_count_;
};

// Family/subject indices below refer to families() order.

/// N_i·(t) = Σ_j δ_ij 1{T_ij ≤ t}.
int counting_process(const ClusteredDataset& ds, std::size_t i, double t);

/// Y_ij(t) = 1{T_ij ≥ t}.
int at_risk(const ClusteredDataset& ds, std::size_t i, std::size_t j, double t);

/// H_i·(t) = Σ_j Λ(T_ij ∧ t) exp(βᵀZ_ij).
double cumulative_intensity(const ClusteredDataset& ds, const StepCumulativeHazard& hazard,
                            const Eigen::VectorXd& beta, std::size_t i, double t);

}  // namespace frailty
