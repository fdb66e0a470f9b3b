#include "gridse/estimator.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#include <cmath>

namespace gridse {

ObservabilityReport check_observability(const NetworkCase& nc, const AdmittanceModel& adm,
                                        const MeasurementPlan& plan) {
  ObservabilityReport rep;
  MeasurementEvaluator ev(nc, adm, plan);
  rep.state_dim = ev.state_dim();
  if (plan.entries.empty()) {
    rep.nullspace_dim = rep.state_dim;
    return rep;
  }
  StateVector flat = StateVector::flat(nc.n_buses());
  Eigen::MatrixXd H = Eigen::MatrixXd(ev.jacobian(flat));
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(H);
  qr.setThreshold(1e-10);
  rep.rank = static_cast<int>(qr.rank());
  rep.nullspace_dim = rep.state_dim - rep.rank;
  rep.observable = rep.rank == rep.state_dim;
  return rep;
}

SEResult gauss_newton_solve(const NetworkCase& nc, const AdmittanceModel& adm,
                            const MeasurementSet& meas, const SEConfig& cfg) {
  const int n = nc.n_buses();
  const int slack = nc.slack_index();
  MeasurementPlan plan = meas.plan();
  MeasurementEvaluator ev(nc, adm, plan);
  const int k = ev.count();
  const int dim = ev.state_dim();
  if (k < dim)
    throw EstimationError("underdetermined: " + std::to_string(k) + " measurements for " +
                          std::to_string(dim) + " states");

  Eigen::VectorXd z(k), w(k);
  for (int i = 0; i < k; ++i) {
    const Measurement& m = meas.entries[i];
    if (m.sigma <= 0) throw EstimationError("measurement sigma must be positive");
    z[i] = m.z;
    w[i] = 1.0 / (m.sigma * m.sigma);
  }

  StateVector state = cfg.start ? *cfg.start : StateVector::flat(n);
  SEResult res;
  res.trace.reserve(cfg.max_iterations);
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    Eigen::SparseMatrix<double> H = ev.jacobian(state);
    Eigen::VectorXd r = z - ev.eval(state);
    Eigen::SparseMatrix<double> Hw = w.asDiagonal() * H;
    Eigen::SparseMatrix<double> gain = Eigen::SparseMatrix<double>(H.transpose()) * Hw;
    Eigen::VectorXd rhs = H.transpose() * (w.asDiagonal() * r);
    ldlt.compute(gain);
    if (ldlt.info() != Eigen::Success)
      throw EstimationError("gain matrix factorization failed");
    // relative-pivot rank check on the LDLT diagonal
    const Eigen::VectorXd& d = ldlt.vectorD();
    double dmax = d.cwiseAbs().maxCoeff();
    int rank = 0;
    for (int i = 0; i < d.size(); ++i)
      if (std::abs(d[i]) > 1e-10 * dmax) ++rank;
    if (rank < dim)
      throw EstimationError("gain matrix numerically singular: rank " + std::to_string(rank) +
                            " of " + std::to_string(dim));
    Eigen::VectorXd dx = ldlt.solve(rhs);

    Eigen::VectorXd x = pack_state(state, slack) + dx;
    state = unpack_state(x, n, slack);
    res.trace.push_back(state);
    res.iterations_used = it + 1;
    if (dx.cwiseAbs().maxCoeff() < cfg.tolerance) {
      res.converged = true;
      break;
    }
  }
  res.estimate = res.trace.empty() ? state : res.trace.back();
  return res;
}

double rmse(const StateVector& estimate, const StateVector& truth, int slack_idx) {
  const int n = static_cast<int>(truth.v.size());
  if (estimate.v.size() != n || estimate.theta.size() != n)
    throw EstimationError("rmse: state dimension mismatch");
  double ss = 0;
  for (int i = 0; i < n; ++i) {
    double dv = estimate.v[i] - truth.v[i];
    ss += dv * dv;
    if (i != slack_idx) {
      double dt = estimate.theta[i] - truth.theta[i];
      ss += dt * dt;
    }
  }
  return std::sqrt(ss / (2 * n - 1));
}

std::vector<double> rmse_trace_of(const SEResult& result, const StateVector& truth,
                                  int slack_idx) {
  std::vector<double> out;
  out.reserve(result.trace.size());
  for (const StateVector& s : result.trace) out.push_back(rmse(s, truth, slack_idx));
  return out;
}

std::vector<double> normalized_trace(const std::vector<double>& rmse_trace,
                                     double baseline_rmse) {
  if (baseline_rmse <= 0) throw EstimationError("normalized_trace: baseline must be positive");
  std::vector<double> out;
  out.reserve(rmse_trace.size());
  for (double r : rmse_trace) out.push_back(r / baseline_rmse);
  return out;
}

int iterations_to_threshold(const std::vector<double>& series, double threshold) {
  int k = -1;
  for (int i = static_cast<int>(series.size()) - 1; i >= 0; --i) {
    if (series[i] > threshold) break;
    k = i + 1;
  }
  return k;
}

}  // namespace gridse
