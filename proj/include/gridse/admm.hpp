#pragma once

#include <vector>

#include "gridse/estimator.hpp"
#include "gridse/measurement.hpp"
#include "gridse/network.hpp"

namespace gridse {

struct ADMMConfig {
  double rho = 1.0;               // augmented penalty weight
  int max_iterations = 3500;
  double primal_tol = 1e-6;
  double dual_tol = 1e-6;
  int inner_gn_steps = 1;         // GN steps per x-update
  int sca_relinearize_every = 1;  // outer iterations between relinearizations
  double prior_sigma = 1e3;       // weak prior on interior states
  bool record_comm_log = false;
};

struct AreaSubproblem {
  int area_id = 0;
  std::vector<int> interior;     // internal bus indices owned by the area
  std::vector<int> boundary;     // copies of neighbours' tie-line endpoints
  std::vector<int> local_buses;  // interior followed by boundary
  MeasurementSet meas;           // measurements owned by the area
  std::vector<int> meas_rows;    // their indices in the global set
};

// One state component replicated across areas and driven to consensus.
struct SharedComponent {
  int bus = 0;  // internal index
  bool is_theta = false;
  std::vector<int> areas;  // sorted ids of participating areas
};

// Splits the network and measurement set into per-area subproblems.
// Ownership: every measurement belongs to the area of its metered bus
// (the from-bus for flows). Tie-line endpoint states become shared.
std::vector<AreaSubproblem> decompose(const NetworkCase& nc, const AreaPartition& part,
                                      const MeasurementSet& meas);
std::vector<SharedComponent> shared_components(const NetworkCase& nc,
                                               const AreaPartition& part);

// Consensus ADMM with successively relinearized local WLS subproblems.
// Per iteration: per-area GN x-update on
//   1/2 (z-h)' W (z-h) + weak prior + lambda'(x-zbar) + rho/2 |x-zbar|^2,
// then zbar <- mean of (copy + lambda/rho), then dual ascent on lambda.
DistSEResult admm_solve(const NetworkCase& nc, const AdmittanceModel& adm,
                        const AreaPartition& part, const MeasurementSet& meas,
                        const ADMMConfig& cfg, const StateVector& truth);

// Residual helpers (also the unit-test surface for the stopping machinery).
double primal_residual(const std::vector<std::vector<double>>& copies_per_component,
                       const std::vector<double>& zbar);
double dual_residual(double rho, const std::vector<double>& zbar,
                     const std::vector<double>& zbar_prev);

}  // namespace gridse
