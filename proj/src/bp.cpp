#include "gridse/bp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace gridse {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kCoeffEps = 1e-12;  // below this a factor says nothing about the variable
}  // namespace

int BPEngine::var_of_packed(int packed_col) const {
  if (packed_col < n_) return packed_col;
  int off = packed_col - n_;
  int bus = off < slack_ ? off : off + 1;
  return n_ + bus;
}

BPEngine::BPEngine(const NetworkCase& nc, const AdmittanceModel& adm,
                   const AreaPartition& part, const MeasurementSet& meas,
                   const BPConfig& cfg)
    : nc_(nc), ev_(nc, adm, meas.plan()), cfg_(cfg), damp_rng_(cfg.damping_seed) {
  n_ = nc.n_buses();
  slack_ = nc.slack_index();
  n_vars_ = 2 * n_;

  var_area_.resize(n_vars_);
  flat_value_.resize(n_vars_);
  for (int i = 0; i < n_; ++i) {
    int a = part.area(nc.buses[i].id);
    var_area_[i] = a;
    var_area_[n_ + i] = a;
    flat_value_[i] = 1.0;
    flat_value_[n_ + i] = 0.0;
  }

  // measurement factors, then one weak prior per variable, then the slack
  // angle anchor
  meas_factor_.assign(meas.count(), -1);
  auto begin_factor = [&]() -> Factor& {
    factors_.emplace_back();
    factors_.back().edge_begin = static_cast<int>(e_var_.size());
    return factors_.back();
  };
  auto add_edge = [&](Factor& f, int var, double coeff) {
    e_var_.push_back(var);
    e_factor_.push_back(static_cast<int>(factors_.size()) - 1);
    e_coeff_.push_back(coeff);
    f.degree += 1;
  };

  for (int i = 0; i < meas.count(); ++i) {
    const Measurement& m = meas.entries[i];
    if (m.sigma <= 0) throw EstimationError("measurement sigma must be positive");
    std::vector<int> scope;
    switch (m.kind) {
      case MeasurementKind::V_mag:
      case MeasurementKind::PMU_Vmag:
        scope.push_back(nc.index_of(m.loc1));
        break;
      case MeasurementKind::PMU_Vang: {
        int b = nc.index_of(m.loc1);
        if (b != slack_) scope.push_back(n_ + b);
        break;
      }
      default:
        for (int b : ev_.row_buses(i)) scope.push_back(b);
        for (int b : ev_.row_buses(i))
          if (b != slack_) scope.push_back(n_ + b);
        break;
    }
    if (scope.empty()) continue;  // e.g. an angle reading at the slack
    Factor& f = begin_factor();
    f.kind = m.kind;
    f.meas_index = i;
    f.row = i;
    f.linear = m.kind == MeasurementKind::V_mag || m.kind == MeasurementKind::PMU_Vmag ||
               m.kind == MeasurementKind::PMU_Vang;
    f.z = m.z;
    f.sigma2 = m.sigma * m.sigma;
    f.area = part.area(m.loc1);
    for (int v : scope) add_edge(f, v, 0.0);
    meas_factor_[i] = static_cast<int>(factors_.size()) - 1;
  }

  for (int u = 0; u < n_vars_; ++u) {
    Factor& f = begin_factor();
    f.meas_index = -1;
    f.linear = true;
    f.z = flat_value_[u];
    f.z_eff = f.z;
    f.sigma2 = cfg.prior_variance;
    f.area = var_area_[u];
    add_edge(f, u, 1.0);
  }
  {
    Factor& f = begin_factor();
    f.meas_index = -1;
    f.linear = true;
    f.z = 0.0;
    f.z_eff = 0.0;
    f.sigma2 = cfg.pin_variance;
    f.area = var_area_[n_ + slack_];
    add_edge(f, n_ + slack_, 1.0);
  }

  const int E = static_cast<int>(e_var_.size());
  e_cross_.resize(E);
  for (int e = 0; e < E; ++e) {
    e_cross_[e] = factors_[e_factor_[e]].area != var_area_[e_var_[e]] ? 1 : 0;
    if (e_cross_[e]) has_cross_ = true;
  }
  var_edges_.resize(n_vars_);
  for (int e = 0; e < E; ++e) var_edges_[e_var_[e]].push_back(e);

  f2v_mean_.resize(E);
  f2v_var_.assign(E, kInf);
  v2f_mean_.resize(E);
  v2f_var_.resize(E);
  for (int e = 0; e < E; ++e) {
    f2v_mean_[e] = flat_value_[e_var_[e]];
    v2f_mean_[e] = flat_value_[e_var_[e]];
    v2f_var_[e] = cfg.prior_variance;
  }

  marg_mean_ = flat_value_;
  marg_var_.assign(n_vars_, cfg.prior_variance);
  packed_to_edge_.assign(ev_.state_dim(), -1);

  relinearize_at(estimate());
}

void BPEngine::refresh_z_eff(Factor& f) { f.z_eff = f.z - f.h0 + f.ax0; }

void BPEngine::relinearize_at(const StateVector& point) {
  std::vector<std::pair<int, double>> grad;
  for (Factor& f : factors_) {
    if (f.meas_index < 0) continue;
    f.h0 = ev_.eval_row(f.row, point);
    for (int k = 0; k < f.degree; ++k) {
      int e = f.edge_begin + k;
      int var = e_var_[e];
      int packed = var < n_ ? var : ev_.theta_col(var - n_);
      packed_to_edge_[packed] = e;
      e_coeff_[e] = 0.0;
    }
    grad.clear();
    ev_.row_gradient(f.row, point, grad);
    for (const auto& [col, val] : grad) {
      int e = packed_to_edge_[col];
      if (e < 0)
        throw EstimationError("measurement " + std::to_string(f.meas_index) +
                              ": gradient touches a variable outside the factor scope");
      e_coeff_[e] = val;
    }
    f.ax0 = 0.0;
    for (int k = 0; k < f.degree; ++k) {
      int e = f.edge_begin + k;
      int var = e_var_[e];
      double x0 = var < n_ ? point.v[var] : point.theta[var - n_];
      f.ax0 += e_coeff_[e] * x0;
    }
    refresh_z_eff(f);
    for (int k = 0; k < f.degree; ++k) {
      int var = e_var_[f.edge_begin + k];
      packed_to_edge_[var < n_ ? var : ev_.theta_col(var - n_)] = -1;
    }
  }
}

double BPEngine::iterate(CrossMode mode) {
  captured_.clear();
  if (iters_done_ % cfg_.relinearize_every == 0) relinearize_at(estimate());

  // factor -> variable sweep
  for (const Factor& f : factors_) {
    const int eb = f.edge_begin, d = f.degree;
    for (int u = 0; u < d; ++u) {
      const int eu = eb + u;
      if (mode == CrossMode::skip && e_cross_[eu]) continue;
      const double au = e_coeff_[eu];
      double mean, var;
      if (std::abs(au) < kCoeffEps) {
        mean = flat_value_[e_var_[eu]];
        var = kInf;
      } else {
        double num = f.z_eff;
        double s2 = f.sigma2;
        for (int l = 0; l < d; ++l) {
          if (l == u) continue;
          const int el = eb + l;
          num -= e_coeff_[el] * v2f_mean_[el];
          s2 += e_coeff_[el] * e_coeff_[el] * v2f_var_[el];
        }
        mean = num / au;
        var = s2 / (au * au);
        if (var < cfg_.variance_floor) {
          var = cfg_.variance_floor;
          ++floor_hits_;
        }
      }
      // damp against the stored message unless either side is uninformative
      if (!std::isinf(f2v_var_[eu]) && !std::isinf(var)) {
        bool damp = true;
        if (cfg_.damping_probability < 1.0) {
          const double u01 = (damp_rng_() >> 11) * 0x1.0p-53;
          damp = u01 < cfg_.damping_probability;
        }
        if (damp) {
          mean = (1.0 - cfg_.damping) * mean + cfg_.damping * f2v_mean_[eu];
          var = (1.0 - cfg_.damping) * var + cfg_.damping * f2v_var_[eu];
        }
      }
      if (mode == CrossMode::capture && e_cross_[eu]) {
        captured_.push_back({eu, true, f.area, var_area_[e_var_[eu]], mean, var});
      } else {
        f2v_mean_[eu] = mean;
        f2v_var_[eu] = var;
      }
    }
  }

  // variable -> factor sweep
  for (int u = 0; u < n_vars_; ++u) {
    const std::vector<int>& edges = var_edges_[u];
    for (int eo : edges) {
      if (mode == CrossMode::skip && e_cross_[eo]) continue;
      double tau = 0.0, acc = 0.0;
      for (int e : edges) {
        if (e == eo || std::isinf(f2v_var_[e])) continue;
        const double p = 1.0 / f2v_var_[e];
        tau += p;
        acc += f2v_mean_[e] * p;
      }
      double mean, var;
      if (tau < 1e-300) {
        mean = flat_value_[u];
        var = kInf;
      } else {
        var = 1.0 / tau;
        mean = acc * var;
        if (var < cfg_.variance_floor) {
          var = cfg_.variance_floor;
          ++floor_hits_;
        }
      }
      if (mode == CrossMode::capture && e_cross_[eo]) {
        captured_.push_back({eo, false, var_area_[u], factors_[e_factor_[eo]].area, mean, var});
      } else {
        v2f_mean_[eo] = mean;
        v2f_var_[eo] = var;
      }
    }
  }

  double delta = 0.0;
  compute_marginals();
  for (int u = 0; u < n_vars_; ++u) delta = std::max(delta, std::abs(marg_mean_[u] - prev_marg_[u]));
  ++iters_done_;
  return delta;
}

void BPEngine::compute_marginals() {
  prev_marg_ = marg_mean_;
  for (int u = 0; u < n_vars_; ++u) {
    double tau = 0.0, acc = 0.0;
    for (int e : var_edges_[u]) {
      if (std::isinf(f2v_var_[e])) continue;
      const double p = 1.0 / f2v_var_[e];
      tau += p;
      acc += f2v_mean_[e] * p;
    }
    if (tau < 1e-300) {
      marg_mean_[u] = flat_value_[u];
      marg_var_[u] = kInf;
    } else {
      marg_var_[u] = 1.0 / tau;
      marg_mean_[u] = acc / tau;
    }
  }
}

void BPEngine::deliver(const CrossMessage& msg) {
  if (msg.factor_to_var) {
    f2v_mean_[msg.edge] = msg.mean;
    f2v_var_[msg.edge] = msg.var;
  } else {
    v2f_mean_[msg.edge] = msg.mean;
    v2f_var_[msg.edge] = msg.var;
  }
}

void BPEngine::update_measurement(int meas_index, double z) {
  if (meas_index < 0 || meas_index >= static_cast<int>(meas_factor_.size()))
    throw EstimationError("measurement index out of range");
  int fi = meas_factor_[meas_index];
  if (fi < 0) return;  // the row has no state dependence (slack angle reading)
  Factor& f = factors_[fi];
  f.z = z;
  refresh_z_eff(f);
}

StateVector BPEngine::estimate() const {
  StateVector s;
  s.v.resize(n_);
  s.theta.resize(n_);
  for (int i = 0; i < n_; ++i) {
    s.v[i] = marg_mean_[i];
    s.theta[i] = marg_mean_[n_ + i];
  }
  s.theta[slack_] = 0.0;
  return s;
}

std::vector<CommRecord> BPEngine::exchange_log(int iteration) const {
  std::map<std::pair<int, int>, std::size_t> bytes;
  for (std::size_t e = 0; e < e_var_.size(); ++e) {
    if (!e_cross_[e]) continue;
    int fa = factors_[e_factor_[e]].area;
    int va = var_area_[e_var_[e]];
    bytes[{fa, va}] += 2 * sizeof(double);
    bytes[{va, fa}] += 2 * sizeof(double);
  }
  std::vector<CommRecord> log;
  for (const auto& [pair, b] : bytes) log.push_back({iteration, pair.first, pair.second, b});
  return log;
}

namespace {

DistSEResult run_bp(const NetworkCase& nc, const AdmittanceModel& adm,
                    const AreaPartition& part, const MeasurementSet& meas,
                    const BPConfig& cfg, const StateVector& truth, int sync_period) {
  if (sync_period < 1) throw EstimationError("sync period must be at least 1");
  BPEngine eng(nc, adm, part, meas, cfg);
  const int slack = nc.slack_index();
  DistSEResult res;
  std::vector<double> deltas;
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    const bool tick = (it - 1) % sync_period == 0;
    double delta = eng.iterate(tick ? BPEngine::CrossMode::immediate : BPEngine::CrossMode::skip);
    deltas.push_back(delta);
    res.rmse_trace.push_back(rmse(eng.estimate(), truth, slack));
    res.iterations_used = it;
    if (cfg.record_comm_log && tick && eng.has_cross_edges()) {
      for (CommRecord r : eng.exchange_log(it)) res.comm_log.push_back(r);
    }
    if (delta < cfg.tolerance) {
      res.converged = true;
      break;
    }
    if (it > 50 && deltas[it - 1] >= deltas[it - 51] && deltas[it - 51] > cfg.tolerance)
      res.oscillation_detected = true;
  }
  res.estimate = eng.estimate();
  res.variance_floor_hits = eng.variance_floor_hits();
  return res;
}

}  // namespace

DistSEResult bp_solve(const NetworkCase& nc, const AdmittanceModel& adm,
                      const MeasurementSet& meas, const BPConfig& cfg,
                      const StateVector& truth) {
  return run_bp(nc, adm, single_area(nc), meas, cfg, truth, 1);
}

DistSEResult bp_solve_multiarea(const NetworkCase& nc, const AdmittanceModel& adm,
                                const AreaPartition& part, const MeasurementSet& meas,
                                const BPConfig& cfg, const StateVector& truth,
                                int sync_period) {
  return run_bp(nc, adm, part, meas, cfg, truth, sync_period);
}

}  // namespace gridse
