#include "gridse/commsim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "gridse/config.hpp"

namespace gridse {

double LinkModel::draw_latency(std::mt19937_64& rng) const {
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return lat_lo_ms + u * (lat_hi_ms - lat_lo_ms);
}

bool LinkModel::drops(std::mt19937_64& rng) const {
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return u < plr;
}

LinkModel link_preset(const std::string& name) {
  if (name == "urllc") return {1.0, 1.0, 1e-5};
  if (name == "urllc_meas") return {2.0, 2.0, 0.0};
  if (name == "lte_no_harq") return {15.0, 20.0, 1e-1};
  if (name == "lte_harq_rlc") return {40.0, 60.0, 1e-5};
  if (name == "x2") return {1.0, 1.0, 0.0};
  if (name == "core") return {10.0, 10.0, 0.0};
  if (name == "external") return {20.0, 20.0, 0.0};
  if (name == "ideal") return {0.0, 0.0, 0.0};
  throw ConfigError("unknown link preset: " + name);
}

SubstitutePolicy substitute_policy_from_string(const std::string& s) {
  if (s == "last_known") return SubstitutePolicy::last_known;
  if (s == "redraw") return SubstitutePolicy::redraw;
  throw ConfigError("unknown substitute policy: " + s);
}

LossDraws draw_loss(int rows, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LossDraws d;
  d.uniform.resize(rows);
  d.normal.resize(rows);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int i = 0; i < rows; ++i) d.uniform[i] = uni(rng);
  std::normal_distribution<double> nrm(0.0, 1.0);
  for (int i = 0; i < rows; ++i) d.normal[i] = nrm(rng);
  return d;
}

MeasurementSet apply_packet_loss(const MeasurementSet& full, const LossDraws& draws,
                                 double plr, double sigma_pm, SubstitutePolicy policy,
                                 const Eigen::VectorXd& h_flat, const Eigen::VectorXd& h_truth,
                                 int* dropped) {
  MeasurementSet out = full;
  int lost = 0;
  for (int i = 0; i < out.count(); ++i) {
    if (draws.uniform[i] >= plr) continue;
    Measurement& m = out.entries[i];
    m.z = policy == SubstitutePolicy::last_known
              ? h_flat[i]
              : h_truth[i] + sigma_pm * draws.normal[i];
    m.sigma = sigma_pm;
    ++lost;
  }
  if (dropped) *dropped = lost;
  return out;
}

std::vector<PLRCell> run_plr_sweep(const NetworkCase& nc, const AreaPartition& part,
                                   const PLRConfig& cfg) {
  if (cfg.trials < 1) throw ConfigError("plr sweep needs at least one trial");
  AdmittanceModel adm = build_admittance(nc);
  StateVector truth = truth_state(nc);
  MeasurementPlan plan = pmu_full_plan(nc, cfg.pmu_sigma);
  MeasurementEvaluator ev(nc, adm, plan);
  const int slack = nc.slack_index();
  Eigen::VectorXd h_flat = ev.eval(StateVector::flat(nc.n_buses()));
  Eigen::VectorXd h_truth = ev.eval(truth);

  const int P = static_cast<int>(cfg.plr_grid.size());
  const int S = static_cast<int>(cfg.sigma_pm_grid.size());
  std::vector<double> sum_gn(P * S, 0.0), sum_admm(P * S, 0.0);

  for (int t = 0; t < cfg.trials; ++t) {
    std::uint64_t tseed = cfg.seed + static_cast<std::uint64_t>(t);
    MeasurementSet full = generate_measurements(truth, plan, nc, adm, tseed);
    LossDraws draws = draw_loss(plan.count(), tseed ^ 0x9E3779B97F4A7C15ULL);
    // cells where nothing dropped share one solve
    std::optional<std::pair<double, double>> clean;
    for (int pi = 0; pi < P; ++pi) {
      for (int si = 0; si < S; ++si) {
        int lost = 0;
        MeasurementSet lossy =
            apply_packet_loss(full, draws, cfg.plr_grid[pi], cfg.sigma_pm_grid[si],
                              cfg.policy, h_flat, h_truth, &lost);
        double r_gn, r_admm;
        if (lost == 0 && clean) {
          r_gn = clean->first;
          r_admm = clean->second;
        } else {
          SEResult gn = gauss_newton_solve(nc, adm, lossy, cfg.gn);
          r_gn = rmse(gn.estimate, truth, slack);
          DistSEResult da = admm_solve(nc, adm, part, lossy, cfg.admm, truth);
          r_admm = rmse(da.estimate, truth, slack);
          if (lost == 0) clean = {r_gn, r_admm};
        }
        sum_gn[pi * S + si] += r_gn;
        sum_admm[pi * S + si] += r_admm;
      }
    }
  }

  std::vector<PLRCell> cells;
  for (int pi = 0; pi < P; ++pi)
    for (int si = 0; si < S; ++si) {
      double plr = cfg.plr_grid[pi], sig = cfg.sigma_pm_grid[si];
      cells.push_back({plr, sig, "gn", sum_gn[pi * S + si] / cfg.trials});
      cells.push_back({plr, sig, "admm", sum_admm[pi * S + si] / cfg.trials});
    }
  return cells;
}

StateVector load_state_file(const std::string& path, const NetworkCase& nc) {
  std::ifstream in(path);
  if (!in) throw CaseError("cannot open state file: " + path);
  StateVector s = StateVector::flat(nc.n_buses());
  std::vector<char> seen(nc.n_buses(), 0);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string::size_type hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    int bus;
    double v, theta_deg;
    if (!(ls >> bus)) continue;  // blank or comment-only line
    if (!(ls >> v >> theta_deg))
      throw CaseError(path + ":" + std::to_string(lineno) + ": expected `bus v theta_deg`");
    if (!nc.has_bus(bus))
      throw CaseError(path + ":" + std::to_string(lineno) + ": unknown bus " +
                      std::to_string(bus));
    int idx = nc.index_of(bus);
    if (seen[idx])
      throw CaseError(path + ":" + std::to_string(lineno) + ": duplicate bus " +
                      std::to_string(bus));
    seen[idx] = 1;
    s.v[idx] = v;
    s.theta[idx] = theta_deg * M_PI / 180.0;
  }
  for (int i = 0; i < nc.n_buses(); ++i)
    if (!seen[i])
      throw CaseError(path + ": no entry for bus " + std::to_string(nc.buses[i].id));
  return s;
}

const StateVector& timeline_state_at(const std::vector<std::pair<double, StateVector>>& timeline,
                                     double t_ms) {
  const StateVector* best = &timeline.front().second;
  for (const auto& [t, s] : timeline) {
    if (t > t_ms) break;
    best = &s;
  }
  return *best;
}

namespace {

struct Pending {
  bool is_meas = true;
  int row = -1;
  double z = 0.0;
  std::vector<BPEngine::CrossMessage> batch;
};

long to_ticks(double ms) { return std::lround(ms * 10.0); }

}  // namespace

TimedResult run_timed_scenario(const TimedScenario& sc, int watch_bus_id) {
  if (sc.timeline.empty()) throw ConfigError("timed scenario needs at least one truth state");
  if (sc.plan.count() == 0) throw ConfigError("timed scenario needs a measurement plan");
  if (sc.bp_cost_ms <= 0 || sc.sample_period_ms <= 0 || sc.duration_ms <= 0)
    throw ConfigError("timed scenario durations must be positive");

  AdmittanceModel adm = build_admittance(sc.net);
  AreaPartition part = sc.centralized ? single_area(sc.net) : sc.partition;
  MeasurementEvaluator ev(sc.net, adm, sc.plan);
  const int n = sc.net.n_buses();
  const int watch = sc.net.index_of(watch_bus_id);

  // start from the flat prediction; real samples overwrite it in transit order
  StateVector flat = StateVector::flat(n);
  Eigen::VectorXd h_flat = ev.eval(flat);
  MeasurementSet init;
  for (int i = 0; i < sc.plan.count(); ++i) {
    Measurement m;
    static_cast<PlanEntry&>(m) = sc.plan.entries[i];
    m.z = h_flat[i];
    init.entries.push_back(m);
  }
  BPEngine eng(sc.net, adm, part, init, sc.bp);

  std::mt19937_64 rng(sc.seed);
  std::normal_distribution<double> nrm(0.0, 1.0);
  std::multimap<long, Pending> due;
  TimedResult res;

  const long dur = to_ticks(sc.duration_ms);
  const long iter_step = std::max<long>(1, to_ticks(sc.bp_cost_ms));
  const long samp_step = std::max<long>(1, to_ticks(sc.sample_period_ms));

  for (long tick = 0; tick <= dur; ++tick) {
    double t = tick * 0.1;

    if (tick % samp_step == 0) {
      const StateVector& truth = timeline_state_at(sc.timeline, t);
      Eigen::VectorXd z = ev.eval(truth);
      std::map<int, double> bus_latency;  // one transit draw per source bus
      for (int i = 0; i < sc.plan.count(); ++i) {
        const PlanEntry& pe = sc.plan.entries[i];
        auto it = bus_latency.find(pe.loc1);
        if (it == bus_latency.end()) {
          double lat = sc.device_link.draw_latency(rng);
          if (sc.centralized) lat += sc.backhaul_link.draw_latency(rng);
          it = bus_latency.emplace(pe.loc1, lat).first;
        }
        double zi = z[i];
        if (sc.noise_scale > 0) zi += sc.noise_scale * pe.sigma * nrm(rng);
        bool lost = sc.device_link.drops(rng);
        if (sc.centralized && sc.backhaul_link.drops(rng)) lost = true;
        ++res.packets_sent;
        if (lost) {
          ++res.packets_dropped;
          continue;
        }
        Pending p;
        p.is_meas = true;
        p.row = i;
        p.z = zi;
        due.emplace(tick + to_ticks(it->second), std::move(p));
      }
    }

    auto range = due.equal_range(tick);
    for (auto it = range.first; it != range.second; ++it) {
      const Pending& p = it->second;
      if (p.is_meas) {
        eng.update_measurement(p.row, p.z);
      } else {
        for (const BPEngine::CrossMessage& msg : p.batch) eng.deliver(msg);
      }
    }
    due.erase(range.first, range.second);

    if (tick % iter_step == 0) {
      eng.iterate(sc.centralized ? BPEngine::CrossMode::immediate
                                 : BPEngine::CrossMode::capture);
      ++res.iterations;
      if (!sc.centralized && !eng.captured().empty()) {
        std::map<std::pair<int, int>, std::vector<BPEngine::CrossMessage>> groups;
        for (const BPEngine::CrossMessage& msg : eng.captured())
          groups[{msg.from_area, msg.to_area}].push_back(msg);
        for (auto& [pair, batch] : groups) {
          double lat = sc.x2_link.draw_latency(rng);
          bool lost = sc.x2_link.drops(rng);
          ++res.packets_sent;
          if (lost) {
            ++res.packets_dropped;
            continue;
          }
          Pending p;
          p.is_meas = false;
          p.batch = std::move(batch);
          // deliveries for this tick are already drained, so even a sub-tick
          // transit cannot land before the next tick
          due.emplace(tick + std::max<long>(1, to_ticks(lat)), std::move(p));
        }
      }
      double t_pub = t + sc.bp_cost_ms;
      const StateVector& truth_pub = timeline_state_at(sc.timeline, t_pub);
      StateVector est = eng.estimate();
      res.series.push_back({t_pub, watch_bus_id, est.v[watch], truth_pub.v[watch]});
    }
  }
  return res;
}

double settle_time_ms(const TimedResult& r, double tol) {
  int last_bad = -1;
  for (int i = 0; i < static_cast<int>(r.series.size()); ++i)
    if (std::abs(r.series[i].v_est - r.series[i].v_true) >= tol) last_bad = i;
  if (last_bad + 1 >= static_cast<int>(r.series.size())) return -1.0;
  return r.series[last_bad + 1].t_ms;
}

}  // namespace gridse
