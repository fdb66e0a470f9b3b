#pragma once

#include <Eigen/Sparse>
#include <complex>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridse {

// Raised for malformed case/partition text or violated structural invariants.
struct CaseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Bus {
  int id = 0;
  double v_true = 1.0;      // per unit
  double theta_true = 0.0;  // radians
  double shunt_g = 0.0;     // per-unit shunt admittance at the bus
  double shunt_b = 0.0;
};

struct Branch {
  int from = 0, to = 0;      // bus ids
  double r = 0.0, x = 0.0;   // per-unit series impedance
  double b_charging = 0.0;   // total line charging susceptance
  double tap_ratio = 1.0;    // off-nominal turns ratio at the from side
  double tap_shift = 0.0;    // phase shift, radians
};

class NetworkCase {
 public:
  double base_mva = 100.0;
  int slack_bus = 0;  // external bus id
  std::vector<Bus> buses;
  std::vector<Branch> branches;

  int n_buses() const { return static_cast<int>(buses.size()); }

  // 0-based position of a bus id in `buses`; throws for unknown ids.
  int index_of(int bus_id) const;
  bool has_bus(int bus_id) const { return index_by_id_.count(bus_id) > 0; }
  int slack_index() const { return index_of(slack_bus); }

  // Checks all structural invariants (unique ids, dangling branches, single
  // slack, connectivity, positive impedances); throws CaseError on violation.
  void validate() const;

  // Rebuilds the id lookup; called by the parser and needed after manual edits.
  void reindex();

 private:
  std::map<int, int> index_by_id_;
};

NetworkCase parse_case(const std::string& text);
std::string serialize_case(const NetworkCase& nc);
NetworkCase load_case(const std::string& path);

class AreaPartition {
 public:
  std::map<int, int> area_of_bus;  // bus id -> area id
  std::vector<int> area_ids;       // sorted distinct area ids

  int area_count() const { return static_cast<int>(area_ids.size()); }
  int area(int bus_id) const;
};

AreaPartition parse_partition(const std::string& text, const NetworkCase& nc);
AreaPartition load_partition(const std::string& path, const NetworkCase& nc);
// Degenerate partition putting every bus in area 1.
AreaPartition single_area(const NetworkCase& nc);

// Pi-model two-port admittance of one branch, tap on the from side.
struct BranchAdmittance {
  std::complex<double> yff, yft, ytf, ytt;
};

class AdmittanceModel {
 public:
  // Bus admittance matrix over internal bus indices.
  Eigen::SparseMatrix<std::complex<double>> Y;
  // Per-branch two-ports, parallel to NetworkCase::branches.
  std::vector<BranchAdmittance> branch;

  std::complex<double> at(int i, int j) const { return Y.coeff(i, j); }
};

AdmittanceModel build_admittance(const NetworkCase& nc);

// Truth operating point straight from the case's solved voltage columns.
// (Defined in measurement.hpp as a StateVector factory.)

}  // namespace gridse
