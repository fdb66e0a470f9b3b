#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "gridse/measurement.hpp"
#include "gridse/network.hpp"

namespace gridse {

// Raised on numerical failure (singular gain matrix, unobservable input);
// the CLI maps it to exit code 3.
struct EstimationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SEConfig {
  int max_iterations = 12;
  double tolerance = 1e-8;  // sup-norm of the state update, per unit
  std::optional<StateVector> start;  // flat start when absent
};

struct SEResult {
  StateVector estimate;
  std::vector<StateVector> trace;  // state after each iteration
  bool converged = false;
  int iterations_used = 0;
};

struct ObservabilityReport {
  int rank = 0;
  int state_dim = 0;
  bool observable = false;
  int nullspace_dim = 0;
};

// Numerical rank of the Jacobian at flat start.
ObservabilityReport check_observability(const NetworkCase& nc, const AdmittanceModel& adm,
                                        const MeasurementPlan& plan);

// Weighted-least-squares state estimation by Gauss-Newton iteration:
// dx = (H' W H)^-1 H' W (z - h(x)), W = diag(1/sigma^2).
// Throws EstimationError when the gain matrix is numerically singular.
SEResult gauss_newton_solve(const NetworkCase& nc, const AdmittanceModel& adm,
                            const MeasurementSet& meas, const SEConfig& cfg);

// Root mean square error over the stacked (v, theta) vector, slack angle
// excluded; both states must have the same dimension.
double rmse(const StateVector& estimate, const StateVector& truth, int slack_idx);

// Per-iteration RMSE(trace_k)/baseline series.
std::vector<double> normalized_trace(const std::vector<double>& rmse_trace,
                                     double baseline_rmse);
std::vector<double> rmse_trace_of(const SEResult& result, const StateVector& truth,
                                  int slack_idx);

// First iteration index (1-based) from which the series stays at or below
// `threshold`; -1 when it never does.
int iterations_to_threshold(const std::vector<double>& series, double threshold);

// One inter-area exchange in a distributed solver's communication log.
struct CommRecord {
  int iteration;
  int from_area;
  int to_area;
  std::size_t bytes_estimate;
};

// Common result shape of the distributed solvers (ADMM and BP).
struct DistSEResult {
  StateVector estimate;
  std::vector<double> rmse_trace;    // one entry per iteration
  std::vector<double> primal_trace;  // ADMM only
  std::vector<double> dual_trace;    // ADMM only
  bool converged = false;
  int iterations_used = 0;
  bool diverged = false;              // ADMM divergence detector
  bool oscillation_detected = false;  // BP oscillation detector
  bool weak_prior_engaged = false;    // some area was locally unobservable
  int variance_floor_hits = 0;        // BP variance floor log
  std::vector<CommRecord> comm_log;
};

}  // namespace gridse
