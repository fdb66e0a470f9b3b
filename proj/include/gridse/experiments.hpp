#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gridse/admm.hpp"
#include "gridse/bp.hpp"
#include "gridse/commsim.hpp"
#include "gridse/config.hpp"
#include "gridse/estimator.hpp"
#include "gridse/network.hpp"

namespace gridse {

// ---------------------------------------------------------------------------
// convergence: distributed-solver iteration traces against a GN baseline
// ---------------------------------------------------------------------------

struct ConvergenceConfig {
  std::string case_path, partition_path;
  int trials = 50;
  std::uint64_t seed = 1;
  std::vector<int> pmu_counts{0, 1, 2};
  double legacy_sigma = 1e-2;
  double pmu_sigma = 1e-4;
  // true = RTU voltage-magnitude readings at every bus, not just the slack.
  // The BP recipe needs the magnitude anchoring; with the slack-only template
  // the no-PMU factor graph has a near-unobservable magnitude-shift mode that
  // message passing works off impractically slowly.
  bool legacy_vmag_all = false;
  SEConfig gn;
  ADMMConfig admm;
  BPConfig bp;
  int bp_sync_period = 1;
};

// Per-iteration means over trials for one solver at one PMU density.
// RMSE is normalized per trial by that trial's converged GN baseline, so 1.0
// means "as good as the centralized solution".
struct ConvergenceSeries {
  int pmus = 0;
  std::vector<double> mean_rmse;
  std::vector<double> mean_normalized;
  std::vector<double> mean_primal, mean_dual;  // ADMM only
  std::vector<CommRecord> comm_log;            // first trial only
};

struct ConvergenceOutput {
  std::vector<ConvergenceSeries> bp, admm;
};

// Runs the study; writes bp_pmu<k>.csv / admm_pmu<k>.csv (+ *_comm_pmu<k>.csv)
// into out_dir unless it is empty.
ConvergenceOutput run_convergence(const ConvergenceConfig& cfg, const std::string& out_dir);

// ---------------------------------------------------------------------------
// plr: packet-loss sweep
// ---------------------------------------------------------------------------

struct PLRExperimentConfig {
  std::string case_path, partition_path;
  PLRConfig sweep;
};

std::vector<PLRCell> run_plr(const PLRExperimentConfig& cfg, const std::string& out_dir);

// ---------------------------------------------------------------------------
// latency: timed replay under four network layouts
// ---------------------------------------------------------------------------

struct LatencyConfig {
  std::string case_path, partition_path;
  std::vector<std::pair<double, std::string>> timeline_files;  // (t_ms, state path)
  int watch_bus = 3;
  double sample_period_ms = 10.0;
  double bp_cost_ms = 0.1;
  double duration_ms = 80.0;
  double noise_scale = 0.0;
  double pmu_sigma = 1e-4;
  std::string device_preset = "urllc_meas";
  std::string x2_preset = "x2";
  std::uint64_t seed = 1;
  BPConfig bp;
};

struct LatencyVariantResult {
  std::string name;  // zero | distributed | core | core_external
  TimedResult result;
};

std::vector<LatencyVariantResult> run_latency(const LatencyConfig& cfg,
                                              const std::string& out_dir);

// ---------------------------------------------------------------------------
// config-file front end
// ---------------------------------------------------------------------------

ConvergenceConfig convergence_config_from(const ConfigFile& f);
PLRExperimentConfig plr_config_from(const ConfigFile& f);
LatencyConfig latency_config_from(const ConfigFile& f);

struct RunOptions {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<int> trials;
  std::optional<std::uint64_t> seed;
};

// Loads the config, applies overrides, dispatches on `kind`
// (convergence | plr | latency), writes outputs and a manifest. Returns 0.
int run_experiment(const std::string& kind, const RunOptions& opt);

}  // namespace gridse
