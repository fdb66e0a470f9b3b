#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "gridse/estimator.hpp"
#include "gridse/measurement.hpp"
#include "gridse/network.hpp"

namespace gridse {

struct BPConfig {
  int max_iterations = 2025;
  double tolerance = 1e-12;     // max marginal mean change between iterations
  double damping = 0.5;         // on factor->variable means and variances
  // Fraction of factor->variable messages the damping is applied to each
  // iteration, chosen independently at random (seeded, so still
  // deterministic). 1 = classic uniform damping; values below 1 break the
  // lockstep of the synchronous schedule, which can help when the residual
  // oscillates rather than contracts.
  double damping_probability = 1.0;
  std::uint64_t damping_seed = 0x5eedbeef;
  double prior_variance = 1e10;
  double pin_variance = 1e-12;  // slack-angle anchor factor
  double variance_floor = 1e-15;
  int relinearize_every = 1;    // iterations between linearization refreshes
  bool record_comm_log = false;
};

// Gaussian belief propagation on the measurement factor graph.
//
// Variables are all bus magnitudes and all bus angles (the slack angle is a
// variable too, held near zero by a tight anchor factor). Every variable
// carries a weak flat-start prior so messages stay proper even where the
// plan leaves the graph locally underdetermined. Nonlinear measurement
// factors are relinearized at the running marginal means.
//
// One iteration = a synchronous factor->variable sweep followed by a
// variable->factor sweep. Exclusion sums are computed directly per edge.
//
// Edges whose factor and variable live in different areas are "cross" edges;
// `iterate` treats them per the requested mode so the same engine drives the
// single-area solver, the periodic-sync multi-area solver, and the timed
// network replay (capture + deliver).
class BPEngine {
 public:
  enum class CrossMode {
    immediate,  // update cross edges like any other edge
    skip,       // leave cross-edge messages untouched this iteration
    capture,    // compute cross-edge messages into the outbox, do not store
  };

  struct CrossMessage {
    int edge = 0;
    bool factor_to_var = true;
    int from_area = 0, to_area = 0;
    double mean = 0.0, var = 0.0;
  };

  BPEngine(const NetworkCase& nc, const AdmittanceModel& adm, const AreaPartition& part,
           const MeasurementSet& meas, const BPConfig& cfg);

  // Runs one iteration; returns the max marginal-mean change.
  double iterate(CrossMode mode);

  // Outbox filled by iterate(capture); cleared at the next iterate call.
  const std::vector<CrossMessage>& captured() const { return captured_; }
  // Applies a message that has finished transit.
  void deliver(const CrossMessage& msg);

  // Replaces one measurement's value in place (keeps the linearization).
  void update_measurement(int meas_index, double z);

  StateVector estimate() const;

  // Posterior marginals over all 2n variables, ordered [v_0..v_{n-1},
  // theta_0..theta_{n-1}] (the slack angle is included; its marginal is the
  // pinned prior).
  Eigen::VectorXd marginal_means() const {
    return Eigen::Map<const Eigen::VectorXd>(marg_mean_.data(), n_vars_);
  }
  Eigen::VectorXd marginal_variances() const {
    return Eigen::Map<const Eigen::VectorXd>(marg_var_.data(), n_vars_);
  }

  int iterations_done() const { return iters_done_; }
  int variance_floor_hits() const { return floor_hits_; }
  bool has_cross_edges() const { return has_cross_; }

  // Bytes moved by one full cross-area exchange (two doubles per message,
  // both sweep directions), grouped by directed area pair.
  std::vector<CommRecord> exchange_log(int iteration) const;

 private:
  struct Factor {
    MeasurementKind kind = MeasurementKind::V_mag;
    int meas_index = -1;  // index into the measurement set, -1 for priors
    int row = -1;         // evaluator row for measurement factors
    bool linear = true;
    double z = 0.0, sigma2 = 1.0;
    double h0 = 0.0, ax0 = 0.0;  // linearization record: h(x0) and a.x0
    double z_eff = 0.0;          // z - h0 + a.x0
    int area = 0;
    int edge_begin = 0, degree = 0;
  };

  int var_of_packed(int packed_col) const;
  void relinearize_at(const StateVector& point);
  void refresh_z_eff(Factor& f);
  void compute_marginals();

  const NetworkCase& nc_;
  MeasurementEvaluator ev_;
  BPConfig cfg_;
  int n_ = 0, slack_ = 0, n_vars_ = 0;
  bool has_cross_ = false;

  std::vector<Factor> factors_;
  std::vector<int> meas_factor_;  // measurement index -> factor index

  // flattened edges, grouped by factor
  std::vector<int> e_var_, e_factor_;
  std::vector<double> e_coeff_;
  std::vector<char> e_cross_;
  std::vector<double> f2v_mean_, f2v_var_;
  std::vector<double> v2f_mean_, v2f_var_;
  std::vector<std::vector<int>> var_edges_;
  std::vector<int> packed_to_edge_;  // relinearization scratch, state_dim wide

  std::vector<int> var_area_;
  std::vector<double> flat_value_;  // per variable
  std::vector<double> marg_mean_, marg_var_, prev_marg_;

  std::vector<CrossMessage> captured_;
  std::mt19937_64 damp_rng_;
  int iters_done_ = 0;
  int floor_hits_ = 0;
};

// Centralized solve: every bus in one area, all edges updated every sweep.
DistSEResult bp_solve(const NetworkCase& nc, const AdmittanceModel& adm,
                      const MeasurementSet& meas, const BPConfig& cfg,
                      const StateVector& truth);

// Multi-area solve with periodic synchronization: cross-area messages are
// exchanged every `sync_period` iterations and reused in between. Period 1
// reproduces the centralized schedule exactly.
DistSEResult bp_solve_multiarea(const NetworkCase& nc, const AdmittanceModel& adm,
                                const AreaPartition& part, const MeasurementSet& meas,
                                const BPConfig& cfg, const StateVector& truth,
                                int sync_period);

}  // namespace gridse
