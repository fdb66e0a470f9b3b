#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cstdint>
#include <string>
#include <vector>

#include "gridse/network.hpp"

namespace gridse {

// Bus voltage magnitudes and angles over all buses (internal index order).
// The slack angle is pinned to 0 and excluded from the packed solver vector.
struct StateVector {
  Eigen::VectorXd v;      // per unit
  Eigen::VectorXd theta;  // radians

  static StateVector flat(int n) {
    StateVector s;
    s.v = Eigen::VectorXd::Ones(n);
    s.theta = Eigen::VectorXd::Zero(n);
    return s;
  }
};

// Truth operating point from the case's solved voltage columns.
StateVector truth_state(const NetworkCase& nc);

// Packed coordinates: [v_0 .. v_{n-1}, theta_* without the slack entry],
// dimension 2n-1.
Eigen::VectorXd pack_state(const StateVector& s, int slack_idx);
StateVector unpack_state(const Eigen::VectorXd& x, int n, int slack_idx);

enum class MeasurementKind { P_flow, Q_flow, P_inj, Q_inj, V_mag, PMU_Vmag, PMU_Vang };
enum class DeviceClass { legacy, pmu };

std::string to_string(MeasurementKind k);
std::string to_string(DeviceClass d);
MeasurementKind kind_from_string(const std::string& s);
DeviceClass device_from_string(const std::string& s);

inline bool is_flow(MeasurementKind k) {
  return k == MeasurementKind::P_flow || k == MeasurementKind::Q_flow;
}

struct PlanEntry {
  MeasurementKind kind;
  int loc1 = 0;   // bus id; for flows the metered (from) end
  int loc2 = -1;  // far-end bus id for flows, -1 otherwise
  double sigma = 1e-2;
  DeviceClass device = DeviceClass::legacy;
};

struct MeasurementPlan {
  std::vector<PlanEntry> entries;
  int count() const { return static_cast<int>(entries.size()); }
};

struct Measurement : PlanEntry {
  double z = 0.0;
};

struct MeasurementSet {
  std::vector<Measurement> entries;
  int count() const { return static_cast<int>(entries.size()); }
  MeasurementPlan plan() const;
};

// Precomputed evaluation structures for one (case, admittance, plan) triple.
// Flow rows aggregate all parallel branches joining their bus pair, oriented
// so the metered end is loc1. Injection rows carry the bus's admittance row.
class MeasurementEvaluator {
 public:
  MeasurementEvaluator(const NetworkCase& nc, const AdmittanceModel& adm,
                       const MeasurementPlan& plan);

  int count() const { return static_cast<int>(rows_.size()); }
  int n_buses() const { return n_; }
  int state_dim() const { return 2 * n_ - 1; }
  int slack_index() const { return slack_; }

  // Column of theta_i in the packed vector, -1 for the slack bus.
  int theta_col(int bus_idx) const {
    if (bus_idx == slack_) return -1;
    return n_ + (bus_idx < slack_ ? bus_idx : bus_idx - 1);
  }

  Eigen::VectorXd eval(const StateVector& s) const;
  Eigen::SparseMatrix<double> jacobian(const StateVector& s) const;

  double eval_row(int row, const StateVector& s) const;
  // Gradient of one row as (packed column, value) pairs; slack-angle terms dropped.
  void row_gradient(int row, const StateVector& s,
                    std::vector<std::pair<int, double>>& out) const;

  // Internal bus indices whose state enters a row (metered + far buses).
  const std::vector<int>& row_buses(int row) const { return rows_[row].buses; }

 private:
  struct FlowLeg {
    int local, remote;  // internal bus indices
    double g_ll, b_ll, g_lr, b_lr;
  };
  struct Row {
    MeasurementKind kind;
    int bus = -1;                 // injections / V_mag / PMU: metered bus index
    std::vector<FlowLeg> legs;    // flow rows: one leg per parallel branch
    std::vector<int> buses;       // all involved bus indices, metered first
  };

  const NetworkCase& nc_;
  const AdmittanceModel& adm_;
  int n_, slack_;
  std::vector<Row> rows_;
  // injection support: per bus list of (neighbor index, G, B) incl. the diagonal
  std::vector<std::vector<std::tuple<int, double, double>>> yrow_;
};

// Convenience wrappers matching the one-shot call shape.
Eigen::VectorXd eval_h(const StateVector& s, const MeasurementPlan& plan,
                       const NetworkCase& nc, const AdmittanceModel& adm);
Eigen::SparseMatrix<double> eval_jacobian(const StateVector& s, const MeasurementPlan& plan,
                                          const NetworkCase& nc, const AdmittanceModel& adm);

// z_i = h_i(truth) + sigma_i * N(0,1); deterministic per seed; sigma = 0 rows
// take h_i(truth) bitwise (no RNG draw consumed).
MeasurementSet generate_measurements(const StateVector& truth, const MeasurementPlan& plan,
                                     const NetworkCase& nc, const AdmittanceModel& adm,
                                     std::uint64_t seed);

// z_i = h_i(truth) bitwise for every row; sigmas kept from the plan so the
// weighting stays well defined.
MeasurementSet noiseless_measurements(const StateVector& truth, const MeasurementPlan& plan,
                                      const NetworkCase& nc, const AdmittanceModel& adm);

// P/Q injection at every bus, P/Q flow at the from end of every branch,
// V_mag at the slack; sigma 1e-2.
MeasurementPlan default_legacy_plan(const NetworkCase& nc, double sigma = 1e-2);
// Legacy template plus `pmus_per_area` PMU (Vmag, Vang) pairs per area at the
// lowest-numbered non-slack buses; PMU sigma 1e-4.
MeasurementPlan build_plan_with_pmus(const NetworkCase& nc, const AreaPartition& part,
                                     int pmus_per_area,
                                     const MeasurementPlan& legacy_template,
                                     double pmu_sigma = 1e-4);
// One PMU pair at every bus: fully observable, linear.
MeasurementPlan pmu_full_plan(const NetworkCase& nc, double sigma = 1e-4);

MeasurementPlan parse_plan(const std::string& text, const NetworkCase& nc);
std::string serialize_plan(const MeasurementPlan& plan);

void write_measurements_csv(const std::string& path, const MeasurementSet& ms);

}  // namespace gridse
