#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gridse/admm.hpp"
#include "gridse/bp.hpp"
#include "gridse/estimator.hpp"
#include "gridse/measurement.hpp"
#include "gridse/network.hpp"

namespace gridse {

// One-way link: uniform latency in [lat_lo_ms, lat_hi_ms], independent packet
// loss with probability plr.
struct LinkModel {
  double lat_lo_ms = 0.0;
  double lat_hi_ms = 0.0;
  double plr = 0.0;

  double draw_latency(std::mt19937_64& rng) const;
  bool drops(std::mt19937_64& rng) const;
};

// Named profiles: "urllc" (1 ms, 1e-5), "urllc_meas" (2 ms, lossless),
// "lte_no_harq" (15-20 ms, 1e-1), "lte_harq_rlc" (40-60 ms, 1e-5),
// "x2" (1 ms), "core" (10 ms), "external" (20 ms), "ideal" (0 ms).
LinkModel link_preset(const std::string& name);

// ---------------------------------------------------------------------------
// Static packet-loss study
// ---------------------------------------------------------------------------

enum class SubstitutePolicy {
  last_known,  // lost rows fall back to the flat-start prediction
  redraw,      // lost rows become pseudo-measurements around the truth
};

SubstitutePolicy substitute_policy_from_string(const std::string& s);

// Per-row randomness shared across a whole loss-rate grid so that a higher
// rate drops a superset of the rows a lower rate drops.
struct LossDraws {
  std::vector<double> uniform;  // drop decision, one per row
  std::vector<double> normal;   // redraw noise, one per row
};
LossDraws draw_loss(int rows, std::uint64_t seed);

// Replaces every row with uniform[i] < plr by a pseudo-measurement with
// deviation sigma_pm; h_flat / h_truth supply the substitute values for the
// two policies.
MeasurementSet apply_packet_loss(const MeasurementSet& full, const LossDraws& draws,
                                 double plr, double sigma_pm, SubstitutePolicy policy,
                                 const Eigen::VectorXd& h_flat, const Eigen::VectorXd& h_truth,
                                 int* dropped = nullptr);

struct PLRConfig {
  std::vector<double> plr_grid{0.0, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
  std::vector<double> sigma_pm_grid{0.01, 0.1, 0.5};
  int trials = 100;
  std::uint64_t seed = 1;
  SubstitutePolicy policy = SubstitutePolicy::last_known;
  double pmu_sigma = 1e-4;
  SEConfig gn;
  ADMMConfig admm;
};

struct PLRCell {
  double plr = 0.0;
  double sigma_pm = 0.0;
  std::string solver;  // "gn" or "admm"
  double mean_rmse = 0.0;
};

// Monte-Carlo sweep over loss rate x pseudo-measurement deviation with a
// full PMU plan, solved centrally (GN) and distributed (ADMM) on the same
// degraded measurement sets.
std::vector<PLRCell> run_plr_sweep(const NetworkCase& nc, const AreaPartition& part,
                                   const PLRConfig& cfg);

// ---------------------------------------------------------------------------
// Timed replay
// ---------------------------------------------------------------------------

// `# bus v theta_deg` rows covering every bus of the case.
StateVector load_state_file(const std::string& path, const NetworkCase& nc);

// Discrete-event replay of an estimator fed over communication links. Time
// advances in 0.1 ms ticks; within a tick, sampling happens before packet
// arrivals, which happen before the estimator iteration. Each iteration costs
// bp_cost_ms and publishes its estimate that much later.
struct TimedScenario {
  NetworkCase net;
  AreaPartition partition;                            // used when !centralized
  std::vector<std::pair<double, StateVector>> timeline;  // (t_ms, truth), sorted
  MeasurementPlan plan;
  BPConfig bp;
  double sample_period_ms = 10.0;
  double bp_cost_ms = 0.1;
  double duration_ms = 80.0;
  double noise_scale = 0.0;  // multiplies each row's sigma for sampling noise
  bool centralized = false;
  LinkModel device_link;    // measurement source -> its estimator
  LinkModel x2_link;        // estimator <-> estimator, distributed mode only
  LinkModel backhaul_link;  // extra aggregation hops, centralized mode only
  std::uint64_t seed = 1;
};

struct TimedSample {
  double t_ms = 0.0;
  int bus_id = 0;
  double v_est = 0.0;
  double v_true = 0.0;
};

struct TimedResult {
  std::vector<TimedSample> series;
  int iterations = 0;
  int packets_sent = 0;
  int packets_dropped = 0;
};

const StateVector& timeline_state_at(const std::vector<std::pair<double, StateVector>>& timeline,
                                     double t_ms);

TimedResult run_timed_scenario(const TimedScenario& sc, int watch_bus_id);

// First publish time from which |v_est - v_true| stays below `tol` for the
// watched bus; -1 when it never settles.
double settle_time_ms(const TimedResult& r, double tol);

}  // namespace gridse
