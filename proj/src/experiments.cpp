#include "gridse/experiments.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "gridse/csvio.hpp"
#include "gridse/measurement.hpp"

namespace gridse {

namespace {

double padded(const std::vector<double>& v, int i) {
  if (v.empty()) return 0.0;
  return v[std::min<std::size_t>(static_cast<std::size_t>(i), v.size() - 1)];
}

void write_comm_csv(const std::string& path, const std::vector<CommRecord>& log) {
  CsvWriter csv(path, {"iteration", "from_area", "to_area", "bytes"});
  for (const CommRecord& r : log)
    csv.row({std::to_string(r.iteration), std::to_string(r.from_area),
             std::to_string(r.to_area), std::to_string(r.bytes_estimate)});
}

SEConfig gn_from(const ConfigFile& f) {
  SEConfig c;
  c.max_iterations = f.get_int("gn.max_iterations", c.max_iterations);
  c.tolerance = f.get_double("gn.tolerance", c.tolerance);
  return c;
}

ADMMConfig admm_from(const ConfigFile& f) {
  ADMMConfig c;
  c.rho = f.get_double("admm.rho", c.rho);
  c.max_iterations = f.get_int("admm.max_iterations", c.max_iterations);
  c.primal_tol = f.get_double("admm.primal_tol", c.primal_tol);
  c.dual_tol = f.get_double("admm.dual_tol", c.dual_tol);
  c.inner_gn_steps = f.get_int("admm.inner_gn_steps", c.inner_gn_steps);
  c.sca_relinearize_every = f.get_int("admm.sca_relinearize_every", c.sca_relinearize_every);
  c.prior_sigma = f.get_double("admm.prior_sigma", c.prior_sigma);
  return c;
}

BPConfig bp_from(const ConfigFile& f) {
  BPConfig c;
  c.max_iterations = f.get_int("bp.max_iterations", c.max_iterations);
  c.tolerance = f.get_double("bp.tolerance", c.tolerance);
  c.damping = f.get_double("bp.damping", c.damping);
  c.damping_probability = f.get_double("bp.damping_probability", c.damping_probability);
  c.damping_seed = static_cast<std::uint64_t>(
      f.get_long("bp.damping_seed", static_cast<long>(c.damping_seed)));
  c.prior_variance = f.get_double("bp.prior_variance", c.prior_variance);
  c.pin_variance = f.get_double("bp.pin_variance", c.pin_variance);
  c.variance_floor = f.get_double("bp.variance_floor", c.variance_floor);
  c.relinearize_every = f.get_int("bp.relinearize_every", c.relinearize_every);
  return c;
}

}  // namespace

ConvergenceOutput run_convergence(const ConvergenceConfig& cfg, const std::string& out_dir) {
  if (cfg.trials < 1) throw ConfigError("convergence study needs at least one trial");
  NetworkCase nc = load_case(cfg.case_path);
  AreaPartition part = load_partition(cfg.partition_path, nc);
  AdmittanceModel adm = build_admittance(nc);
  StateVector truth = truth_state(nc);
  const int slack = nc.slack_index();
  MeasurementPlan legacy = default_legacy_plan(nc, cfg.legacy_sigma);
  if (cfg.legacy_vmag_all) {
    for (const Bus& b : nc.buses)
      if (b.id != nc.slack_bus)
        legacy.entries.push_back(
            {MeasurementKind::V_mag, b.id, -1, cfg.legacy_sigma, DeviceClass::legacy});
  }

  ConvergenceOutput out;
  for (int k : cfg.pmu_counts) {
    MeasurementPlan plan = build_plan_with_pmus(nc, part, k, legacy, cfg.pmu_sigma);
    const int bp_budget = cfg.bp.max_iterations;
    const int admm_budget = cfg.admm.max_iterations;
    ConvergenceSeries bs, as;
    bs.pmus = as.pmus = k;
    bs.mean_rmse.assign(bp_budget, 0.0);
    bs.mean_normalized.assign(bp_budget, 0.0);
    as.mean_rmse.assign(admm_budget, 0.0);
    as.mean_normalized.assign(admm_budget, 0.0);
    as.mean_primal.assign(admm_budget, 0.0);
    as.mean_dual.assign(admm_budget, 0.0);

    for (int t = 0; t < cfg.trials; ++t) {
      std::uint64_t seed_t = cfg.seed + static_cast<std::uint64_t>(t);
      MeasurementSet ms = generate_measurements(truth, plan, nc, adm, seed_t);

      SEResult gnr = gauss_newton_solve(nc, adm, ms, cfg.gn);
      double base = rmse(gnr.estimate, truth, slack);

      BPConfig bpc = cfg.bp;
      bpc.record_comm_log = t == 0;
      DistSEResult bpr = bp_solve_multiarea(nc, adm, part, ms, bpc, truth, cfg.bp_sync_period);

      ADMMConfig adc = cfg.admm;
      adc.record_comm_log = t == 0;
      DistSEResult adr = admm_solve(nc, adm, part, ms, adc, truth);

      for (int i = 0; i < bp_budget; ++i) {
        double r = padded(bpr.rmse_trace, i);
        bs.mean_rmse[i] += r;
        bs.mean_normalized[i] += r / base;
      }
      for (int i = 0; i < admm_budget; ++i) {
        double r = padded(adr.rmse_trace, i);
        as.mean_rmse[i] += r;
        as.mean_normalized[i] += r / base;
        as.mean_primal[i] += padded(adr.primal_trace, i);
        as.mean_dual[i] += padded(adr.dual_trace, i);
      }
      if (t == 0) {
        bs.comm_log = bpr.comm_log;
        as.comm_log = adr.comm_log;
      }
    }
    for (double* sums : {bs.mean_rmse.data(), bs.mean_normalized.data()})
      for (int i = 0; i < bp_budget; ++i) sums[i] /= cfg.trials;
    for (double* sums : {as.mean_rmse.data(), as.mean_normalized.data(),
                         as.mean_primal.data(), as.mean_dual.data()})
      for (int i = 0; i < admm_budget; ++i) sums[i] /= cfg.trials;

    if (!out_dir.empty()) {
      const std::string tag = std::to_string(k);
      {
        CsvWriter csv(out_dir + "/bp_pmu" + tag + ".csv",
                      {"iteration", "rmse", "normalized_rmse"});
        for (int i = 0; i < bp_budget; ++i)
          csv.row({std::to_string(i + 1), format_double(bs.mean_rmse[i]),
                   format_double(bs.mean_normalized[i])});
      }
      {
        CsvWriter csv(out_dir + "/admm_pmu" + tag + ".csv",
                      {"iteration", "primal_residual", "dual_residual", "rmse",
                       "normalized_rmse"});
        for (int i = 0; i < admm_budget; ++i)
          csv.row({std::to_string(i + 1), format_double(as.mean_primal[i]),
                   format_double(as.mean_dual[i]), format_double(as.mean_rmse[i]),
                   format_double(as.mean_normalized[i])});
      }
      write_comm_csv(out_dir + "/bp_comm_pmu" + tag + ".csv", bs.comm_log);
      write_comm_csv(out_dir + "/admm_comm_pmu" + tag + ".csv", as.comm_log);
    }
    out.bp.push_back(std::move(bs));
    out.admm.push_back(std::move(as));
  }
  return out;
}

std::vector<PLRCell> run_plr(const PLRExperimentConfig& cfg, const std::string& out_dir) {
  NetworkCase nc = load_case(cfg.case_path);
  AreaPartition part = load_partition(cfg.partition_path, nc);
  std::vector<PLRCell> cells = run_plr_sweep(nc, part, cfg.sweep);
  if (!out_dir.empty()) {
    CsvWriter csv(out_dir + "/plr.csv", {"plr", "sigma_pm", "solver", "mean_rmse"});
    for (const PLRCell& c : cells)
      csv.row({format_double(c.plr), format_double(c.sigma_pm), c.solver,
               format_double(c.mean_rmse)});
  }
  return cells;
}

std::vector<LatencyVariantResult> run_latency(const LatencyConfig& cfg,
                                              const std::string& out_dir) {
  NetworkCase nc = load_case(cfg.case_path);
  AreaPartition part =
      cfg.partition_path.empty() ? single_area(nc) : load_partition(cfg.partition_path, nc);
  if (cfg.timeline_files.empty()) throw ConfigError("latency study needs a truth timeline");

  TimedScenario base;
  base.net = nc;
  base.partition = part;
  for (const auto& [t, path] : cfg.timeline_files)
    base.timeline.emplace_back(t, load_state_file(path, nc));
  std::sort(base.timeline.begin(), base.timeline.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  base.plan = pmu_full_plan(nc, cfg.pmu_sigma);
  base.bp = cfg.bp;
  base.sample_period_ms = cfg.sample_period_ms;
  base.bp_cost_ms = cfg.bp_cost_ms;
  base.duration_ms = cfg.duration_ms;
  base.noise_scale = cfg.noise_scale;
  base.seed = cfg.seed;

  auto combine = [](LinkModel a, LinkModel b) {
    return LinkModel{a.lat_lo_ms + b.lat_lo_ms, a.lat_hi_ms + b.lat_hi_ms,
                     1.0 - (1.0 - a.plr) * (1.0 - b.plr)};
  };
  LinkModel device = link_preset(cfg.device_preset);
  LinkModel x2 = link_preset(cfg.x2_preset);
  LinkModel core = link_preset("core");
  LinkModel external = link_preset("external");

  std::vector<LatencyVariantResult> results;
  auto run_variant = [&](const std::string& name, bool centralized, LinkModel dev,
                         LinkModel x2l, LinkModel backhaul) {
    TimedScenario sc = base;
    sc.centralized = centralized;
    sc.device_link = dev;
    sc.x2_link = x2l;
    sc.backhaul_link = backhaul;
    TimedResult r = run_timed_scenario(sc, cfg.watch_bus);
    if (!out_dir.empty()) {
      CsvWriter csv(out_dir + "/latency_" + name + ".csv", {"t_ms", "bus", "v_est", "v_true"});
      for (const TimedSample& s : r.series)
        csv.row({format_double(s.t_ms), std::to_string(s.bus_id), format_double(s.v_est),
                 format_double(s.v_true)});
    }
    results.push_back({name, std::move(r)});
  };

  LinkModel ideal = link_preset("ideal");
  run_variant("zero", true, ideal, ideal, ideal);
  run_variant("distributed", false, device, x2, ideal);
  run_variant("core", true, device, x2, core);
  run_variant("core_external", true, device, x2, combine(core, external));
  return results;
}

ConvergenceConfig convergence_config_from(const ConfigFile& f) {
  ConvergenceConfig c;
  c.case_path = f.resolve_path(f.require_string("experiment.case"));
  c.partition_path = f.resolve_path(f.require_string("experiment.partition"));
  c.trials = f.get_int("experiment.trials", c.trials);
  c.seed = static_cast<std::uint64_t>(f.get_long("experiment.seed", 1));
  std::vector<double> counts{0, 1, 2};
  counts = f.get_double_list("experiment.pmu_counts", counts);
  c.pmu_counts.clear();
  for (double v : counts) c.pmu_counts.push_back(static_cast<int>(v));
  c.legacy_sigma = f.get_double("experiment.legacy_sigma", c.legacy_sigma);
  c.pmu_sigma = f.get_double("experiment.pmu_sigma", c.pmu_sigma);
  {
    std::string v = f.get_string("experiment.legacy_vmag", "slack");
    if (v == "all")
      c.legacy_vmag_all = true;
    else if (v != "slack")
      throw ConfigError("experiment.legacy_vmag must be `slack` or `all`, got: " + v);
  }
  c.gn = gn_from(f);
  c.admm = admm_from(f);
  c.bp = bp_from(f);
  c.bp_sync_period = f.get_int("bp.sync_period", c.bp_sync_period);
  return c;
}

PLRExperimentConfig plr_config_from(const ConfigFile& f) {
  PLRExperimentConfig c;
  c.case_path = f.resolve_path(f.require_string("experiment.case"));
  c.partition_path = f.resolve_path(f.require_string("experiment.partition"));
  c.sweep.trials = f.get_int("experiment.trials", c.sweep.trials);
  c.sweep.seed = static_cast<std::uint64_t>(f.get_long("experiment.seed", 1));
  c.sweep.plr_grid = f.get_double_list("plr.grid", c.sweep.plr_grid);
  c.sweep.sigma_pm_grid = f.get_double_list("plr.sigma_pm", c.sweep.sigma_pm_grid);
  c.sweep.policy = substitute_policy_from_string(f.get_string("plr.substitute", "last_known"));
  c.sweep.pmu_sigma = f.get_double("plr.pmu_sigma", c.sweep.pmu_sigma);
  c.sweep.gn = gn_from(f);
  c.sweep.admm = admm_from(f);
  return c;
}

LatencyConfig latency_config_from(const ConfigFile& f) {
  LatencyConfig c;
  c.case_path = f.resolve_path(f.require_string("experiment.case"));
  c.partition_path = f.has("experiment.partition")
                         ? f.resolve_path(f.require_string("experiment.partition"))
                         : "";
  c.seed = static_cast<std::uint64_t>(f.get_long("experiment.seed", 1));
  std::string tl = f.require_string("latency.timeline");
  std::size_t pos = 0;
  while (pos < tl.size()) {
    std::size_t comma = tl.find(',', pos);
    std::string tok = tl.substr(pos, comma == std::string::npos ? std::string::npos
                                                                : comma - pos);
    pos = comma == std::string::npos ? tl.size() : comma + 1;
    std::size_t a = tok.find_first_not_of(" \t");
    std::size_t b = tok.find_last_not_of(" \t");
    if (a == std::string::npos) continue;
    tok = tok.substr(a, b - a + 1);
    std::size_t colon = tok.find(':');
    if (colon == std::string::npos)
      throw ConfigError("timeline entries must look like `t_ms:path`, got: " + tok);
    double t;
    try {
      t = std::stod(tok.substr(0, colon));
    } catch (const std::exception&) {
      throw ConfigError("bad timeline time in: " + tok);
    }
    c.timeline_files.emplace_back(t, f.resolve_path(tok.substr(colon + 1)));
  }
  c.watch_bus = f.get_int("latency.watch_bus", c.watch_bus);
  c.sample_period_ms = f.get_double("latency.sample_period_ms", c.sample_period_ms);
  c.bp_cost_ms = f.get_double("latency.bp_cost_ms", c.bp_cost_ms);
  c.duration_ms = f.get_double("latency.duration_ms", c.duration_ms);
  c.noise_scale = f.get_double("latency.noise", c.noise_scale);
  c.pmu_sigma = f.get_double("latency.pmu_sigma", c.pmu_sigma);
  c.device_preset = f.get_string("latency.device", c.device_preset);
  c.x2_preset = f.get_string("latency.x2", c.x2_preset);
  c.bp = bp_from(f);
  return c;
}

namespace {

void write_manifest(const std::string& out_dir,
                    const std::vector<std::pair<std::string, std::string>>& lines) {
  std::ofstream out(out_dir + "/manifest.txt", std::ios::binary);
  if (!out) throw ConfigError("cannot write manifest in " + out_dir);
  for (const auto& [k, v] : lines) out << k << " = " << v << "\n";
  out << "eigen = " << EIGEN_WORLD_VERSION << "." << EIGEN_MAJOR_VERSION << "."
      << EIGEN_MINOR_VERSION << "\n";
  out << "compiler = " << __VERSION__ << "\n";
}

std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += format_double(v[i]);
  }
  return s;
}

}  // namespace

int run_experiment(const std::string& kind, const RunOptions& opt) {
  ConfigFile f = ConfigFile::load(opt.config_path);
  std::string cfg_kind = f.get_string("experiment.kind", kind);
  if (cfg_kind != kind)
    throw ConfigError("config describes experiment '" + cfg_kind + "' but '" + kind +
                      "' was requested");
  std::filesystem::create_directories(opt.out_dir);

  std::vector<std::pair<std::string, std::string>> man;
  man.emplace_back("kind", kind);
  man.emplace_back("config", opt.config_path);

  if (kind == "convergence") {
    ConvergenceConfig c = convergence_config_from(f);
    if (opt.trials) c.trials = *opt.trials;
    if (opt.seed) c.seed = *opt.seed;
    run_convergence(c, opt.out_dir);
    man.emplace_back("case", c.case_path);
    man.emplace_back("partition", c.partition_path);
    man.emplace_back("trials", std::to_string(c.trials));
    man.emplace_back("seed", std::to_string(c.seed));
    {
      std::string s;
      for (std::size_t i = 0; i < c.pmu_counts.size(); ++i)
        s += (i ? "," : "") + std::to_string(c.pmu_counts[i]);
      man.emplace_back("pmu_counts", s);
    }
    man.emplace_back("legacy_sigma", format_double(c.legacy_sigma));
    man.emplace_back("pmu_sigma", format_double(c.pmu_sigma));
    man.emplace_back("legacy_vmag", c.legacy_vmag_all ? "all" : "slack");
    man.emplace_back("gn.max_iterations", std::to_string(c.gn.max_iterations));
    man.emplace_back("gn.tolerance", format_double(c.gn.tolerance));
    man.emplace_back("admm.rho", format_double(c.admm.rho));
    man.emplace_back("admm.max_iterations", std::to_string(c.admm.max_iterations));
    man.emplace_back("admm.primal_tol", format_double(c.admm.primal_tol));
    man.emplace_back("admm.dual_tol", format_double(c.admm.dual_tol));
    man.emplace_back("admm.inner_gn_steps", std::to_string(c.admm.inner_gn_steps));
    man.emplace_back("admm.sca_relinearize_every",
                     std::to_string(c.admm.sca_relinearize_every));
    man.emplace_back("admm.prior_sigma", format_double(c.admm.prior_sigma));
    man.emplace_back("bp.max_iterations", std::to_string(c.bp.max_iterations));
    man.emplace_back("bp.damping", format_double(c.bp.damping));
    man.emplace_back("bp.damping_probability", format_double(c.bp.damping_probability));
    man.emplace_back("bp.tolerance", format_double(c.bp.tolerance));
    man.emplace_back("bp.relinearize_every", std::to_string(c.bp.relinearize_every));
    man.emplace_back("bp.sync_period", std::to_string(c.bp_sync_period));
  } else if (kind == "plr") {
    PLRExperimentConfig c = plr_config_from(f);
    if (opt.trials) c.sweep.trials = *opt.trials;
    if (opt.seed) c.sweep.seed = *opt.seed;
    run_plr(c, opt.out_dir);
    man.emplace_back("case", c.case_path);
    man.emplace_back("partition", c.partition_path);
    man.emplace_back("trials", std::to_string(c.sweep.trials));
    man.emplace_back("seed", std::to_string(c.sweep.seed));
    man.emplace_back("plr.grid", join_doubles(c.sweep.plr_grid));
    man.emplace_back("plr.sigma_pm", join_doubles(c.sweep.sigma_pm_grid));
    man.emplace_back("plr.substitute", c.sweep.policy == SubstitutePolicy::last_known
                                           ? "last_known"
                                           : "redraw");
    man.emplace_back("plr.pmu_sigma", format_double(c.sweep.pmu_sigma));
    man.emplace_back("admm.rho", format_double(c.sweep.admm.rho));
  } else if (kind == "latency") {
    if (opt.trials)
      throw ConfigError("the latency experiment is a single replay and has no trial count");
    LatencyConfig c = latency_config_from(f);
    if (opt.seed) c.seed = *opt.seed;
    std::vector<LatencyVariantResult> rs = run_latency(c, opt.out_dir);
    man.emplace_back("case", c.case_path);
    man.emplace_back("partition", c.partition_path.empty() ? "(single area)" : c.partition_path);
    man.emplace_back("watch_bus", std::to_string(c.watch_bus));
    man.emplace_back("seed", std::to_string(c.seed));
    man.emplace_back("device", c.device_preset);
    man.emplace_back("x2", c.x2_preset);
    man.emplace_back("sample_period_ms", format_double(c.sample_period_ms));
    man.emplace_back("bp_cost_ms", format_double(c.bp_cost_ms));
    man.emplace_back("duration_ms", format_double(c.duration_ms));
    for (const LatencyVariantResult& r : rs)
      man.emplace_back("settle_ms." + r.name, format_double(settle_time_ms(r.result, 1e-4)));
  } else {
    throw ConfigError("unknown experiment kind: " + kind);
  }

  write_manifest(opt.out_dir, man);
  return 0;
}

}  // namespace gridse
