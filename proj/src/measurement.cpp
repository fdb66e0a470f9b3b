#include "gridse/measurement.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "gridse/csvio.hpp"

namespace gridse {

StateVector truth_state(const NetworkCase& nc) {
  StateVector s;
  const int n = nc.n_buses();
  s.v.resize(n);
  s.theta.resize(n);
  for (int i = 0; i < n; ++i) {
    s.v[i] = nc.buses[i].v_true;
    s.theta[i] = nc.buses[i].theta_true;
  }
  return s;
}

Eigen::VectorXd pack_state(const StateVector& s, int slack_idx) {
  const int n = static_cast<int>(s.v.size());
  Eigen::VectorXd x(2 * n - 1);
  x.head(n) = s.v;
  int col = n;
  for (int i = 0; i < n; ++i)
    if (i != slack_idx) x[col++] = s.theta[i];
  return x;
}

StateVector unpack_state(const Eigen::VectorXd& x, int n, int slack_idx) {
  StateVector s;
  s.v = x.head(n);
  s.theta.resize(n);
  int col = n;
  for (int i = 0; i < n; ++i)
    s.theta[i] = (i == slack_idx) ? 0.0 : x[col++];
  return s;
}

std::string to_string(MeasurementKind k) {
  switch (k) {
    case MeasurementKind::P_flow: return "P_flow";
    case MeasurementKind::Q_flow: return "Q_flow";
    case MeasurementKind::P_inj: return "P_inj";
    case MeasurementKind::Q_inj: return "Q_inj";
    case MeasurementKind::V_mag: return "V_mag";
    case MeasurementKind::PMU_Vmag: return "PMU_Vmag";
    case MeasurementKind::PMU_Vang: return "PMU_Vang";
  }
  return "?";
}

std::string to_string(DeviceClass d) {
  return d == DeviceClass::legacy ? "legacy" : "pmu";
}

MeasurementKind kind_from_string(const std::string& s) {
  if (s == "P_flow") return MeasurementKind::P_flow;
  if (s == "Q_flow") return MeasurementKind::Q_flow;
  if (s == "P_inj") return MeasurementKind::P_inj;
  if (s == "Q_inj") return MeasurementKind::Q_inj;
  if (s == "V_mag") return MeasurementKind::V_mag;
  if (s == "PMU_Vmag") return MeasurementKind::PMU_Vmag;
  if (s == "PMU_Vang") return MeasurementKind::PMU_Vang;
  throw CaseError("unknown measurement kind: " + s);
}

DeviceClass device_from_string(const std::string& s) {
  if (s == "legacy") return DeviceClass::legacy;
  if (s == "pmu") return DeviceClass::pmu;
  throw CaseError("unknown device class: " + s);
}

MeasurementPlan MeasurementSet::plan() const {
  MeasurementPlan p;
  p.entries.reserve(entries.size());
  for (const Measurement& m : entries) p.entries.push_back(m);
  return p;
}

MeasurementEvaluator::MeasurementEvaluator(const NetworkCase& nc, const AdmittanceModel& adm,
                                           const MeasurementPlan& plan)
    : nc_(nc), adm_(adm), n_(nc.n_buses()), slack_(nc.slack_index()) {
  // admittance rows for injection evaluation (column-major sparse -> gather)
  yrow_.resize(n_);
  for (int col = 0; col < adm_.Y.outerSize(); ++col) {
    for (Eigen::SparseMatrix<std::complex<double>>::InnerIterator it(adm_.Y, col); it; ++it) {
      yrow_[it.row()].emplace_back(col, it.value().real(), it.value().imag());
    }
  }
  for (auto& row : yrow_)
    std::sort(row.begin(), row.end(),
              [](const auto& a, const auto& b) { return std::get<0>(a) < std::get<0>(b); });

  rows_.reserve(plan.entries.size());
  for (const PlanEntry& e : plan.entries) {
    Row row;
    row.kind = e.kind;
    if (is_flow(e.kind)) {
      int metered = nc.index_of(e.loc1);
      int far = nc.index_of(e.loc2);
      for (std::size_t b = 0; b < nc.branches.size(); ++b) {
        const Branch& br = nc.branches[b];
        const BranchAdmittance& ba = adm.branch[b];
        FlowLeg leg;
        if (br.from == e.loc1 && br.to == e.loc2) {
          leg = {metered, far, ba.yff.real(), ba.yff.imag(), ba.yft.real(), ba.yft.imag()};
        } else if (br.from == e.loc2 && br.to == e.loc1) {
          leg = {metered, far, ba.ytt.real(), ba.ytt.imag(), ba.ytf.real(), ba.ytf.imag()};
        } else {
          continue;
        }
        row.legs.push_back(leg);
      }
      if (row.legs.empty())
        throw CaseError("flow measurement references no branch " + std::to_string(e.loc1) +
                        "-" + std::to_string(e.loc2));
      row.bus = metered;
      row.buses = {metered, far};
    } else {
      row.bus = nc.index_of(e.loc1);
      if (e.kind == MeasurementKind::P_inj || e.kind == MeasurementKind::Q_inj) {
        row.buses.push_back(row.bus);
        for (const auto& [j, g, b] : yrow_[row.bus])
          if (j != row.bus) row.buses.push_back(j);
      } else {
        row.buses = {row.bus};
      }
    }
    rows_.push_back(std::move(row));
  }
}

double MeasurementEvaluator::eval_row(int row, const StateVector& s) const {
  const Row& r = rows_[row];
  switch (r.kind) {
    case MeasurementKind::P_flow: {
      double p = 0;
      for (const FlowLeg& l : r.legs) {
        double th = s.theta[l.local] - s.theta[l.remote];
        p += s.v[l.local] * s.v[l.local] * l.g_ll +
             s.v[l.local] * s.v[l.remote] * (l.g_lr * std::cos(th) + l.b_lr * std::sin(th));
      }
      return p;
    }
    case MeasurementKind::Q_flow: {
      double q = 0;
      for (const FlowLeg& l : r.legs) {
        double th = s.theta[l.local] - s.theta[l.remote];
        q += -s.v[l.local] * s.v[l.local] * l.b_ll +
             s.v[l.local] * s.v[l.remote] * (l.g_lr * std::sin(th) - l.b_lr * std::cos(th));
      }
      return q;
    }
    case MeasurementKind::P_inj: {
      double p = 0;
      const int i = r.bus;
      for (const auto& [j, g, b] : yrow_[i]) {
        double th = s.theta[i] - s.theta[j];
        p += s.v[j] * (g * std::cos(th) + b * std::sin(th));
      }
      return s.v[i] * p;
    }
    case MeasurementKind::Q_inj: {
      double q = 0;
      const int i = r.bus;
      for (const auto& [j, g, b] : yrow_[i]) {
        double th = s.theta[i] - s.theta[j];
        q += s.v[j] * (g * std::sin(th) - b * std::cos(th));
      }
      return s.v[i] * q;
    }
    case MeasurementKind::V_mag:
    case MeasurementKind::PMU_Vmag:
      return s.v[r.bus];
    case MeasurementKind::PMU_Vang:
      return s.theta[r.bus];
  }
  return 0.0;
}

Eigen::VectorXd MeasurementEvaluator::eval(const StateVector& s) const {
  Eigen::VectorXd h(count());
  for (int i = 0; i < count(); ++i) h[i] = eval_row(i, s);
  return h;
}

void MeasurementEvaluator::row_gradient(int row, const StateVector& s,
                                        std::vector<std::pair<int, double>>& out) const {
  out.clear();
  const Row& r = rows_[row];
  auto push = [&](int col, double val) {
    if (col >= 0) out.emplace_back(col, val);
  };
  switch (r.kind) {
    case MeasurementKind::P_flow:
    case MeasurementKind::Q_flow: {
      const bool active = r.kind == MeasurementKind::P_flow;
      // accumulate per-variable since parallel legs share endpoints
      double d_vl = 0, d_vr = 0, d_tl = 0;
      for (const FlowLeg& l : r.legs) {
        double th = s.theta[l.local] - s.theta[l.remote];
        double c = std::cos(th), sn = std::sin(th);
        double vl = s.v[l.local], vr = s.v[l.remote];
        if (active) {
          d_vl += 2 * vl * l.g_ll + vr * (l.g_lr * c + l.b_lr * sn);
          d_vr += vl * (l.g_lr * c + l.b_lr * sn);
          d_tl += vl * vr * (-l.g_lr * sn + l.b_lr * c);
        } else {
          d_vl += -2 * vl * l.b_ll + vr * (l.g_lr * sn - l.b_lr * c);
          d_vr += vl * (l.g_lr * sn - l.b_lr * c);
          d_tl += vl * vr * (l.g_lr * c + l.b_lr * sn);
        }
      }
      const FlowLeg& l0 = r.legs.front();
      push(l0.local, d_vl);
      push(l0.remote, d_vr);
      push(theta_col(l0.local), d_tl);
      push(theta_col(l0.remote), -d_tl);
      break;
    }
    case MeasurementKind::P_inj: {
      const int i = r.bus;
      double gii = 0;
      double sum = 0, dth_i = 0;
      for (const auto& [j, g, b] : yrow_[i]) {
        double th = s.theta[i] - s.theta[j];
        double c = std::cos(th), sn = std::sin(th);
        double t = g * c + b * sn;
        sum += s.v[j] * t;
        if (j == i) {
          gii = g;
        } else {
          double dpj = s.v[i] * s.v[j] * (g * sn - b * c);
          dth_i += -dpj;                        // d/d theta_i over off-diagonal terms
          push(j, s.v[i] * t);                  // d/d v_j
          push(theta_col(j), dpj);              // d/d theta_j
        }
      }
      push(i, sum + s.v[i] * gii);              // d/d v_i
      push(theta_col(i), dth_i);
      break;
    }
    case MeasurementKind::Q_inj: {
      const int i = r.bus;
      double bii = 0;
      double sum = 0, dth_i = 0;
      for (const auto& [j, g, b] : yrow_[i]) {
        double th = s.theta[i] - s.theta[j];
        double c = std::cos(th), sn = std::sin(th);
        double t = g * sn - b * c;
        sum += s.v[j] * t;
        if (j == i) {
          bii = b;
        } else {
          double dqj = -s.v[i] * s.v[j] * (g * c + b * sn);
          dth_i += -dqj;
          push(j, s.v[i] * t);
          push(theta_col(j), dqj);
        }
      }
      push(i, sum - s.v[i] * bii);
      push(theta_col(i), dth_i);
      break;
    }
    case MeasurementKind::V_mag:
    case MeasurementKind::PMU_Vmag:
      push(r.bus, 1.0);
      break;
    case MeasurementKind::PMU_Vang:
      push(theta_col(r.bus), 1.0);
      break;
  }
}

Eigen::SparseMatrix<double> MeasurementEvaluator::jacobian(const StateVector& s) const {
  std::vector<Eigen::Triplet<double>> trip;
  std::vector<std::pair<int, double>> grad;
  for (int row = 0; row < count(); ++row) {
    row_gradient(row, s, grad);
    for (const auto& [col, val] : grad) trip.emplace_back(row, col, val);
  }
  Eigen::SparseMatrix<double> H(count(), state_dim());
  H.setFromTriplets(trip.begin(), trip.end());
  H.makeCompressed();
  return H;
}

Eigen::VectorXd eval_h(const StateVector& s, const MeasurementPlan& plan,
                       const NetworkCase& nc, const AdmittanceModel& adm) {
  return MeasurementEvaluator(nc, adm, plan).eval(s);
}

Eigen::SparseMatrix<double> eval_jacobian(const StateVector& s, const MeasurementPlan& plan,
                                          const NetworkCase& nc, const AdmittanceModel& adm) {
  return MeasurementEvaluator(nc, adm, plan).jacobian(s);
}

MeasurementSet generate_measurements(const StateVector& truth, const MeasurementPlan& plan,
                                     const NetworkCase& nc, const AdmittanceModel& adm,
                                     std::uint64_t seed) {
  MeasurementEvaluator ev(nc, adm, plan);
  Eigen::VectorXd h = ev.eval(truth);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  MeasurementSet ms;
  ms.entries.reserve(plan.entries.size());
  for (std::size_t i = 0; i < plan.entries.size(); ++i) {
    Measurement m;
    static_cast<PlanEntry&>(m) = plan.entries[i];
    m.z = h[static_cast<int>(i)];
    if (m.sigma > 0.0) m.z += m.sigma * unit(rng);
    ms.entries.push_back(m);
  }
  return ms;
}

MeasurementSet noiseless_measurements(const StateVector& truth, const MeasurementPlan& plan,
                                      const NetworkCase& nc, const AdmittanceModel& adm) {
  MeasurementEvaluator ev(nc, adm, plan);
  Eigen::VectorXd h = ev.eval(truth);
  MeasurementSet ms;
  ms.entries.reserve(plan.entries.size());
  for (std::size_t i = 0; i < plan.entries.size(); ++i) {
    Measurement m;
    static_cast<PlanEntry&>(m) = plan.entries[i];
    m.z = h[static_cast<int>(i)];
    ms.entries.push_back(m);
  }
  return ms;
}

MeasurementPlan default_legacy_plan(const NetworkCase& nc, double sigma) {
  MeasurementPlan p;
  for (const Bus& b : nc.buses) {
    p.entries.push_back({MeasurementKind::P_inj, b.id, -1, sigma, DeviceClass::legacy});
    p.entries.push_back({MeasurementKind::Q_inj, b.id, -1, sigma, DeviceClass::legacy});
  }
  std::set<std::pair<int, int>> seen;  // collapse parallel circuits to one row
  for (const Branch& br : nc.branches) {
    if (!seen.emplace(br.from, br.to).second) continue;
    p.entries.push_back({MeasurementKind::P_flow, br.from, br.to, sigma, DeviceClass::legacy});
    p.entries.push_back({MeasurementKind::Q_flow, br.from, br.to, sigma, DeviceClass::legacy});
  }
  p.entries.push_back({MeasurementKind::V_mag, nc.slack_bus, -1, sigma, DeviceClass::legacy});
  return p;
}

MeasurementPlan build_plan_with_pmus(const NetworkCase& nc, const AreaPartition& part,
                                     int pmus_per_area, const MeasurementPlan& legacy_template,
                                     double pmu_sigma) {
  MeasurementPlan p = legacy_template;
  if (pmus_per_area == 0) return p;
  std::map<int, std::vector<int>> buses_by_area;
  for (const Bus& b : nc.buses)
    if (b.id != nc.slack_bus) buses_by_area[part.area(b.id)].push_back(b.id);
  for (auto& [area, buses] : buses_by_area) std::sort(buses.begin(), buses.end());
  for (int area : part.area_ids) {
    const auto& candidates = buses_by_area[area];
    if (static_cast<int>(candidates.size()) < pmus_per_area)
      throw CaseError("area " + std::to_string(area) + " has too few non-slack buses for " +
                      std::to_string(pmus_per_area) + " PMUs");
    for (int k = 0; k < pmus_per_area; ++k) {
      p.entries.push_back({MeasurementKind::PMU_Vmag, candidates[k], -1, pmu_sigma,
                           DeviceClass::pmu});
      p.entries.push_back({MeasurementKind::PMU_Vang, candidates[k], -1, pmu_sigma,
                           DeviceClass::pmu});
    }
  }
  return p;
}

MeasurementPlan pmu_full_plan(const NetworkCase& nc, double sigma) {
  MeasurementPlan p;
  for (const Bus& b : nc.buses) {
    p.entries.push_back({MeasurementKind::PMU_Vmag, b.id, -1, sigma, DeviceClass::pmu});
    p.entries.push_back({MeasurementKind::PMU_Vang, b.id, -1, sigma, DeviceClass::pmu});
  }
  return p;
}

MeasurementPlan parse_plan(const std::string& text, const NetworkCase& nc) {
  MeasurementPlan p;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string kind_s, device_s;
    PlanEntry e;
    if (!(ls >> kind_s)) continue;
    e.kind = kind_from_string(kind_s);
    if (is_flow(e.kind)) {
      if (!(ls >> e.loc1 >> e.loc2 >> e.sigma >> device_s))
        throw CaseError("plan line " + std::to_string(lineno) +
                        ": expected 'kind from to sigma device'");
    } else {
      if (!(ls >> e.loc1 >> e.sigma >> device_s))
        throw CaseError("plan line " + std::to_string(lineno) +
                        ": expected 'kind bus sigma device'");
    }
    e.device = device_from_string(device_s);
    if (e.sigma < 0)
      throw CaseError("plan line " + std::to_string(lineno) + ": negative sigma");
    if (!nc.has_bus(e.loc1) || (is_flow(e.kind) && !nc.has_bus(e.loc2)))
      throw CaseError("plan line " + std::to_string(lineno) + ": unknown bus");
    p.entries.push_back(e);
  }
  return p;
}

std::string serialize_plan(const MeasurementPlan& plan) {
  std::ostringstream out;
  out << "# kind loc1 [loc2] sigma device\n";
  for (const PlanEntry& e : plan.entries) {
    out << to_string(e.kind) << ' ' << e.loc1;
    if (is_flow(e.kind)) out << ' ' << e.loc2;
    out << ' ' << format_double(e.sigma) << ' ' << to_string(e.device) << "\n";
  }
  return out.str();
}

void write_measurements_csv(const std::string& path, const MeasurementSet& ms) {
  CsvWriter csv(path, {"index", "kind", "loc1", "loc2", "z", "sigma", "device"});
  for (int i = 0; i < ms.count(); ++i) {
    const Measurement& m = ms.entries[i];
    csv.row({std::to_string(i), to_string(m.kind), std::to_string(m.loc1),
             std::to_string(m.loc2), format_double(m.z), format_double(m.sigma),
             to_string(m.device)});
  }
}

}  // namespace gridse
