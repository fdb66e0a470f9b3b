#include "gridse/admm.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace gridse {

std::vector<SharedComponent> shared_components(const NetworkCase& nc,
                                               const AreaPartition& part) {
  const int slack = nc.slack_index();
  // tie-line endpoints and the neighbouring areas that replicate them
  std::map<int, std::set<int>> areas_of_bus;  // internal index -> area ids
  for (const Branch& br : nc.branches) {
    int af = part.area(br.from), at = part.area(br.to);
    if (af == at) continue;
    int f = nc.index_of(br.from), t = nc.index_of(br.to);
    areas_of_bus[f].insert({af, at});
    areas_of_bus[t].insert({af, at});
  }
  std::vector<SharedComponent> shared;
  for (const auto& [bus, areas] : areas_of_bus) {
    SharedComponent v{bus, false, std::vector<int>(areas.begin(), areas.end())};
    shared.push_back(v);
    if (bus != slack) {
      SharedComponent t{bus, true, std::vector<int>(areas.begin(), areas.end())};
      shared.push_back(t);
    }
  }
  return shared;
}

std::vector<AreaSubproblem> decompose(const NetworkCase& nc, const AreaPartition& part,
                                      const MeasurementSet& meas) {
  std::map<int, AreaSubproblem> by_area;
  for (int a : part.area_ids) {
    by_area[a].area_id = a;
  }
  for (const Bus& b : nc.buses)
    by_area[part.area(b.id)].interior.push_back(nc.index_of(b.id));

  // boundary copies: far endpoints of tie branches
  std::map<int, std::set<int>> copies;
  for (const Branch& br : nc.branches) {
    int af = part.area(br.from), at = part.area(br.to);
    if (af == at) continue;
    copies[af].insert(nc.index_of(br.to));
    copies[at].insert(nc.index_of(br.from));
  }
  for (auto& [a, sub] : by_area) {
    sub.boundary.assign(copies[a].begin(), copies[a].end());
    sub.local_buses = sub.interior;
    sub.local_buses.insert(sub.local_buses.end(), sub.boundary.begin(), sub.boundary.end());
  }

  // measurement ownership by metered bus; arguments must stay local
  AdmittanceModel adm = build_admittance(nc);
  MeasurementEvaluator ev(nc, adm, meas.plan());
  for (int i = 0; i < meas.count(); ++i) {
    const Measurement& m = meas.entries[i];
    int owner = part.area(m.loc1);
    AreaSubproblem& sub = by_area.at(owner);
    std::set<int> local(sub.local_buses.begin(), sub.local_buses.end());
    for (int bus : ev.row_buses(i)) {
      if (!local.count(bus))
        throw CaseError("measurement " + std::to_string(i) + " (" + to_string(m.kind) +
                        " at bus " + std::to_string(m.loc1) + ") reaches bus " +
                        std::to_string(nc.buses[bus].id) + " outside area " +
                        std::to_string(owner) + " and its boundary");
    }
    sub.meas.entries.push_back(m);
    sub.meas_rows.push_back(i);
  }

  std::vector<AreaSubproblem> out;
  out.reserve(by_area.size());
  for (auto& [a, sub] : by_area) out.push_back(std::move(sub));
  return out;
}

double primal_residual(const std::vector<std::vector<double>>& copies_per_component,
                       const std::vector<double>& zbar) {
  double ss = 0;
  for (std::size_t s = 0; s < copies_per_component.size(); ++s)
    for (double c : copies_per_component[s]) {
      double d = c - zbar[s];
      ss += d * d;
    }
  return std::sqrt(ss);
}

double dual_residual(double rho, const std::vector<double>& zbar,
                     const std::vector<double>& zbar_prev) {
  double ss = 0;
  for (std::size_t s = 0; s < zbar.size(); ++s) {
    double d = zbar[s] - zbar_prev[s];
    ss += d * d;
  }
  return rho * std::sqrt(ss);
}

namespace {

// Per-area solver workspace: local packed coordinates are
// [v of local buses..., theta of local buses... (slack skipped)].
struct AreaWork {
  const AreaSubproblem* sub = nullptr;
  MeasurementEvaluator ev;
  int m = 0;                       // local dimension
  std::vector<int> col_bus;        // local col -> bus index
  std::vector<char> col_is_theta;  // local col -> component type
  std::vector<char> col_interior;  // local col -> owned by this area
  std::vector<int> global_to_local;  // packed global col -> local col or -1

  Eigen::VectorXd x;        // current local iterate
  Eigen::VectorXd x_flat;   // prior anchor
  Eigen::VectorXd z, w;     // measurements and weights
  StateVector state;        // full-size scratch state for evaluation

  // linearization
  Eigen::MatrixXd H;        // k_a x m
  Eigen::VectorXd h0;       // h at linearization point
  Eigen::VectorXd x_lin;
  Eigen::MatrixXd A;        // normal matrix with penalty diagonals
  Eigen::LDLT<Eigen::MatrixXd> ldlt;

  // consensus bookkeeping: local col -> shared component id (-1 if private)
  std::vector<int> shared_id;
  std::vector<double> lambda;  // per local col, nonzero only on shared cols

  AreaWork(const NetworkCase& nc, const AdmittanceModel& adm, const AreaSubproblem& s)
      : sub(&s), ev(nc, adm, s.meas.plan()) {}
};

}  // namespace

DistSEResult admm_solve(const NetworkCase& nc, const AdmittanceModel& adm,
                        const AreaPartition& part, const MeasurementSet& meas,
                        const ADMMConfig& cfg, const StateVector& truth) {
  const int n = nc.n_buses();
  const int slack = nc.slack_index();
  const double w_prior = 1.0 / (cfg.prior_sigma * cfg.prior_sigma);

  std::vector<AreaSubproblem> subs = decompose(nc, part, meas);
  std::vector<SharedComponent> shared = shared_components(nc, part);

  // component lookup: (bus, is_theta) -> shared id
  std::map<std::pair<int, int>, int> shared_index;
  for (std::size_t s = 0; s < shared.size(); ++s)
    shared_index[{shared[s].bus, shared[s].is_theta ? 1 : 0}] = static_cast<int>(s);

  std::vector<AreaWork> work;
  work.reserve(subs.size());
  const int dim = 2 * n - 1;
  for (const AreaSubproblem& sub : subs) {
    AreaWork wk(nc, adm, sub);
    // local layout
    for (int bus : sub.local_buses) {
      wk.col_bus.push_back(bus);
      wk.col_is_theta.push_back(0);
    }
    for (int bus : sub.local_buses) {
      if (bus == slack) continue;
      wk.col_bus.push_back(bus);
      wk.col_is_theta.push_back(1);
    }
    wk.m = static_cast<int>(wk.col_bus.size());
    wk.global_to_local.assign(dim, -1);
    wk.col_interior.assign(wk.m, 0);
    wk.shared_id.assign(wk.m, -1);
    std::set<int> interior(sub.interior.begin(), sub.interior.end());
    for (int c = 0; c < wk.m; ++c) {
      int bus = wk.col_bus[c];
      bool th = wk.col_is_theta[c];
      int gcol = th ? wk.ev.theta_col(bus) : bus;
      wk.global_to_local[gcol] = c;
      wk.col_interior[c] = interior.count(bus) ? 1 : 0;
      auto it = shared_index.find({bus, th ? 1 : 0});
      if (it != shared_index.end()) wk.shared_id[c] = it->second;
    }
    // measurements
    const int k = wk.ev.count();
    wk.z.resize(k);
    wk.w.resize(k);
    for (int i = 0; i < k; ++i) {
      const Measurement& mm = sub.meas.entries[i];
      if (mm.sigma <= 0) throw EstimationError("measurement sigma must be positive");
      wk.z[i] = mm.z;
      wk.w[i] = 1.0 / (mm.sigma * mm.sigma);
    }
    wk.x = Eigen::VectorXd::Zero(wk.m);
    for (int c = 0; c < wk.m; ++c) wk.x[c] = wk.col_is_theta[c] ? 0.0 : 1.0;
    wk.x_flat = wk.x;
    wk.lambda.assign(wk.m, 0.0);
    wk.state = StateVector::flat(n);
    work.push_back(std::move(wk));
  }

  DistSEResult res;

  // local observability at flat start (informational; the weak prior keeps
  // the updates well posed either way)
  for (AreaWork& wk : work) {
    Eigen::MatrixXd H(wk.ev.count(), wk.m);
    H.setZero();
    StateVector flat = StateVector::flat(n);
    Eigen::SparseMatrix<double> Hg = wk.ev.jacobian(flat);
    for (int c = 0; c < Hg.outerSize(); ++c)
      for (Eigen::SparseMatrix<double>::InnerIterator it(Hg, c); it; ++it) {
        int lc = wk.global_to_local[it.col()];
        if (lc >= 0) H(it.row(), lc) = it.value();
      }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(H);
    qr.setThreshold(1e-10);
    if (qr.rank() < wk.m) res.weak_prior_engaged = true;
  }

  // neighbour pairs for the communication log
  std::vector<std::pair<std::pair<int, int>, int>> pair_counts;  // ((a,b), #comps)
  if (cfg.record_comm_log) {
    std::map<std::pair<int, int>, int> counts;
    for (const SharedComponent& sc : shared)
      for (std::size_t i = 0; i < sc.areas.size(); ++i)
        for (std::size_t j = i + 1; j < sc.areas.size(); ++j)
          counts[{sc.areas[i], sc.areas[j]}]++;
    pair_counts.assign(counts.begin(), counts.end());
  }

  const int S = static_cast<int>(shared.size());
  std::vector<double> zbar(S), zbar_prev(S);
  for (int s = 0; s < S; ++s) zbar[s] = shared[s].is_theta ? 0.0 : 1.0;

  StateVector estimate = StateVector::flat(n);
  auto sync_state = [&](AreaWork& wk) {
    for (int c = 0; c < wk.m; ++c) {
      if (wk.col_is_theta[c])
        wk.state.theta[wk.col_bus[c]] = wk.x[c];
      else
        wk.state.v[wk.col_bus[c]] = wk.x[c];
    }
  };

  double max_step = 0;
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    max_step = 0;
    // ---- x-update per area ----
    for (AreaWork& wk : work) {
      const bool relin = ((it - 1) % cfg.sca_relinearize_every) == 0 || wk.H.size() == 0;
      if (relin) {
        sync_state(wk);
        wk.h0 = wk.ev.eval(wk.state);
        wk.x_lin = wk.x;
        Eigen::SparseMatrix<double> Hg = wk.ev.jacobian(wk.state);
        wk.H.resize(wk.ev.count(), wk.m);
        wk.H.setZero();
        for (int c = 0; c < Hg.outerSize(); ++c)
          for (Eigen::SparseMatrix<double>::InnerIterator jt(Hg, c); jt; ++jt) {
            int lc = wk.global_to_local[jt.col()];
            if (lc >= 0) wk.H(jt.row(), lc) = jt.value();
          }
        wk.A = wk.H.transpose() * wk.w.asDiagonal() * wk.H;
        for (int c = 0; c < wk.m; ++c) {
          if (wk.col_interior[c]) wk.A(c, c) += w_prior;
          if (wk.shared_id[c] >= 0) wk.A(c, c) += cfg.rho;
        }
        wk.ldlt.compute(wk.A);
        if (wk.ldlt.info() != Eigen::Success)
          throw EstimationError("area " + std::to_string(wk.sub->area_id) +
                                ": local normal matrix factorization failed");
      }
      for (int step = 0; step < cfg.inner_gn_steps; ++step) {
        Eigen::VectorXd r = wk.z - wk.h0 - wk.H * (wk.x - wk.x_lin);
        Eigen::VectorXd b = wk.H.transpose() * (wk.w.asDiagonal() * r);
        for (int c = 0; c < wk.m; ++c) {
          if (wk.col_interior[c]) b[c] -= w_prior * (wk.x[c] - wk.x_flat[c]);
          if (wk.shared_id[c] >= 0)
            b[c] -= wk.lambda[c] + cfg.rho * (wk.x[c] - zbar[wk.shared_id[c]]);
        }
        Eigen::VectorXd dx = wk.ldlt.solve(b);
        wk.x += dx;
        max_step = std::max(max_step, dx.cwiseAbs().maxCoeff());
      }
    }

    // ---- z-update ----
    zbar_prev = zbar;
    std::vector<double> acc(S, 0.0);
    std::vector<int> cnt(S, 0);
    for (AreaWork& wk : work)
      for (int c = 0; c < wk.m; ++c) {
        int s = wk.shared_id[c];
        if (s < 0) continue;
        acc[s] += wk.x[c] + wk.lambda[c] / cfg.rho;
        cnt[s] += 1;
      }
    for (int s = 0; s < S; ++s) zbar[s] = acc[s] / cnt[s];

    // ---- dual update and residuals ----
    double primal_ss = 0;
    for (AreaWork& wk : work)
      for (int c = 0; c < wk.m; ++c) {
        int s = wk.shared_id[c];
        if (s < 0) continue;
        double gap = wk.x[c] - zbar[s];
        wk.lambda[c] += cfg.rho * gap;
        primal_ss += gap * gap;
      }
    double primal = std::sqrt(primal_ss);
    double dual = dual_residual(cfg.rho, zbar, zbar_prev);
    res.primal_trace.push_back(primal);
    res.dual_trace.push_back(dual);

    if (cfg.record_comm_log)
      for (const auto& [pair, count] : pair_counts) {
        res.comm_log.push_back({it, pair.first, pair.second,
                                static_cast<std::size_t>(count) * sizeof(double)});
        res.comm_log.push_back({it, pair.second, pair.first,
                                static_cast<std::size_t>(count) * sizeof(double)});
      }

    // ---- global estimate and RMSE ----
    for (AreaWork& wk : work)
      for (int c = 0; c < wk.m; ++c) {
        if (!wk.col_interior[c]) continue;
        if (wk.col_is_theta[c])
          estimate.theta[wk.col_bus[c]] = wk.x[c];
        else
          estimate.v[wk.col_bus[c]] = wk.x[c];
      }
    for (int s = 0; s < S; ++s) {
      if (shared[s].is_theta)
        estimate.theta[shared[s].bus] = zbar[s];
      else
        estimate.v[shared[s].bus] = zbar[s];
    }
    res.rmse_trace.push_back(rmse(estimate, truth, slack));
    res.iterations_used = it;

    if (primal < cfg.primal_tol && dual < cfg.dual_tol && max_step < cfg.primal_tol) {
      res.converged = true;
      break;
    }
    int back = it - 1 - 50;
    if (back >= 0 && res.primal_trace[back] > cfg.primal_tol &&
        primal > 10.0 * res.primal_trace[back]) {
      res.diverged = true;
      break;
    }
  }

  res.estimate = estimate;
  return res;
}

}  // namespace gridse
