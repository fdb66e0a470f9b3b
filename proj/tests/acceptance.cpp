// End-to-end acceptance sweep. Each numbered block prints one PASS/FAIL
// line; the exit status is the number of failed blocks. Budgets are generous
// on purpose: the heavy studies (3 and 4) re-run the shipped configuration
// files, not scaled-down stand-ins.
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gridse/admm.hpp"
#include "gridse/bp.hpp"
#include "gridse/commsim.hpp"
#include "gridse/estimator.hpp"
#include "gridse/experiments.hpp"
#include "gridse/measurement.hpp"
#include "gridse/network.hpp"
#include "oracles.hpp"

using namespace gridse;
namespace fs = std::filesystem;

namespace {

std::string data_file(const std::string& name) { return std::string(DATA_DIR) + "/" + name; }
std::string config_file(const std::string& name) {
  return std::string(DATA_DIR) + "/../configs/" + name;
}

int g_failures = 0;

void criterion(int num, const std::function<bool(std::string&)>& body) {
  std::string note;
  bool ok = false;
  auto t0 = std::chrono::steady_clock::now();
  try {
    ok = body(note);
  } catch (const std::exception& e) {
    note = std::string("exception: ") + e.what();
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("criterion %d: %s (%.1fs)%s%s\n", num, ok ? "PASS" : "FAIL", secs,
              note.empty() ? "" : " -- ", note.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

double sup_err(const StateVector& a, const StateVector& b, int slack) {
  return (pack_state(a, slack) - pack_state(b, slack)).lpNorm<Eigen::Infinity>();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace

int main() {
  // carried from block 3 into block 4
  int admm30_pmu1_iters = -1;

  criterion(1, [&](std::string& note) {
    NetworkCase nc = load_case(data_file("ieee30.case"));
    AdmittanceModel adm = build_admittance(nc);
    StateVector truth = truth_state(nc);
    MeasurementSet ms = noiseless_measurements(truth, default_legacy_plan(nc), nc, adm);
    SEResult res = gauss_newton_solve(nc, adm, ms, SEConfig{});
    double err = sup_err(res.estimate, truth, nc.slack_index());
    note = fmt("sup error %.2e after %d iterations", err, res.iterations_used);
    return res.converged && res.iterations_used <= 12 && err < 1e-8;
  });

  criterion(2, [&](std::string& note) {
    std::mt19937_64 rng(123);
    std::uniform_int_distribution<int> size(4, 10);
    double worst_mean = 0.0, worst_var = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      NetworkCase nc = testutil::random_tree_case(rng, size(rng));
      AdmittanceModel adm = build_admittance(nc);
      MeasurementSet ms =
          generate_measurements(truth_state(nc), pmu_full_plan(nc), nc, adm, 1000 + rep);
      BPConfig cfg;
      BPEngine eng(nc, adm, single_area(nc), ms, cfg);
      for (int it = 1; it <= 400; ++it) {
        double d = eng.iterate(BPEngine::CrossMode::immediate);
        if (d < 1e-15 && it > 5) break;
      }
      testutil::DensePosterior ref = testutil::bp_model_posterior(nc, adm, ms, cfg);
      worst_mean = std::max(worst_mean,
                            (eng.marginal_means() - ref.mean).lpNorm<Eigen::Infinity>());
      worst_var = std::max(
          worst_var, (eng.marginal_variances() - ref.variance).lpNorm<Eigen::Infinity>());
    }
    note = fmt("20 instances, worst mean gap %.2e, worst variance gap %.2e", worst_mean,
               worst_var);
    return worst_mean < 1e-10 && worst_var < 1e-10;
  });

  criterion(3, [&](std::string& note) {
    ConvergenceConfig cfg =
        convergence_config_from(ConfigFile::load(config_file("convergence30.cfg")));
    ConvergenceOutput out = run_convergence(cfg, "");
    int bp_at[3] = {-1, -1, -1}, admm_at[3] = {-1, -1, -1};
    bool ok = out.bp.size() == 3 && out.admm.size() == 3;
    for (std::size_t i = 0; ok && i < out.bp.size(); ++i) {
      int k = out.bp[i].pmus;
      bp_at[k] = iterations_to_threshold(out.bp[i].mean_normalized, 1.05);
      admm_at[k] = iterations_to_threshold(out.admm[i].mean_normalized, 1.05);
      ok = ok && bp_at[k] >= 1 && bp_at[k] <= 2025;
      ok = ok && admm_at[k] >= 1 && admm_at[k] <= 3500;
    }
    ok = ok && bp_at[2] < bp_at[0];
    admm30_pmu1_iters = admm_at[1];
    note = fmt("iters to 1.05 -- bp {%d,%d,%d}, admm {%d,%d,%d} for {0,1,2} pmus/area",
               bp_at[0], bp_at[1], bp_at[2], admm_at[0], admm_at[1], admm_at[2]);
    return ok;
  });

  criterion(4, [&](std::string& note) {
    ConvergenceConfig cfg =
        convergence_config_from(ConfigFile::load(config_file("convergence118.cfg")));
    ConvergenceOutput out = run_convergence(cfg, "");
    int it118 = -1;
    for (std::size_t i = 0; i < out.admm.size(); ++i)
      if (out.admm[i].pmus == 1)
        it118 = iterations_to_threshold(out.admm[i].mean_normalized, 1.05);
    note = fmt("admm iters to 1.05: ieee118 %d vs ieee30 %d", it118, admm30_pmu1_iters);
    return it118 >= 1 && admm30_pmu1_iters >= 1 && it118 > admm30_pmu1_iters;
  });

  criterion(5, [&](std::string& note) {
    PLRExperimentConfig cfg = plr_config_from(ConfigFile::load(config_file("plr30.cfg")));
    std::vector<PLRCell> cells = run_plr(cfg, "");
    auto mean_of = [&](double plr, double spm, const char* solver) {
      for (const PLRCell& c : cells)
        if (c.plr == plr && c.sigma_pm == spm && c.solver == solver) return c.mean_rmse;
      throw EstimationError("plr cell missing from sweep output");
    };
    const std::vector<double>& plrs = cfg.sweep.plr_grid;
    const std::vector<double>& spms = cfg.sweep.sigma_pm_grid;
    bool ok = true;

    // (i) negligible loss stays within 20% of the lossless floor
    for (const char* solver : {"gn", "admm"})
      for (double spm : spms) {
        double base = mean_of(0.0, spm, solver);
        ok = ok && std::abs(mean_of(1e-5, spm, solver) - base) <= 0.2 * base;
      }
    // (ii) heavy loss with coarse substitutes sits 2..4 decades above it
    double deteriorated = 0.0;
    for (const char* solver : {"gn", "admm"}) {
      double r = mean_of(0.1, 0.5, solver) / mean_of(0.0, 0.5, solver);
      deteriorated = std::max(deteriorated, r);
      ok = ok && r >= 1e2 && r <= 1e4;
    }
    // (iii) monotone in the loss rate and in the substitute deviation
    const double slack_factor = 1.0 - 1e-9;
    for (const char* solver : {"gn", "admm"}) {
      for (double spm : spms)
        for (std::size_t i = 1; i < plrs.size(); ++i)
          ok = ok && mean_of(plrs[i], spm, solver) >=
                         mean_of(plrs[i - 1], spm, solver) * slack_factor;
      for (double plr : plrs)
        for (std::size_t i = 1; i < spms.size(); ++i)
          ok = ok && mean_of(plr, spms[i], solver) >=
                         mean_of(plr, spms[i - 1], solver) * slack_factor;
    }
    // (iv) both solvers degrade alike
    for (double plr : plrs)
      for (double spm : spms) {
        double r = mean_of(plr, spm, "gn") / mean_of(plr, spm, "admm");
        ok = ok && r >= 0.5 && r <= 2.0;
      }
    note = fmt("%zu cells, worst-loss ratio %.0fx over lossless", cells.size(), deteriorated);
    return ok;
  });

  criterion(6, [&](std::string& note) {
    NetworkCase nc = load_case(data_file("ieee30.case"));
    StateVector before = load_state_file(data_file("ieee30_t0.state"), nc);
    StateVector after = load_state_file(data_file("ieee30_step.state"), nc);
    bool pinned = before.v[nc.index_of(3)] == 1.02099501402936 &&
                  after.v[nc.index_of(3)] == 1.01138192767137;

    LatencyConfig cfg = latency_config_from(ConfigFile::load(config_file("latency30.cfg")));
    std::vector<LatencyVariantResult> rs = run_latency(cfg, "");
    double settle_dist = -1.0, settle_ext = -1.0;
    for (const LatencyVariantResult& r : rs) {
      if (r.name == "distributed") settle_dist = settle_time_ms(r.result, 1e-4);
      if (r.name == "core_external") settle_ext = settle_time_ms(r.result, 1e-4);
    }
    note = fmt("settle: distributed %.1f ms, centralized-external %.1f ms (step at 10 ms)",
               settle_dist, settle_ext);
    return pinned && settle_dist >= 0.0 && settle_dist - 10.0 <= 15.0 && settle_ext >= 0.0 &&
           settle_ext - settle_dist >= 20.0;
  });

  criterion(7, [&](std::string& note) {
    NetworkCase nc = load_case(data_file("ieee30.case"));
    AdmittanceModel adm = build_admittance(nc);
    AreaPartition part = load_partition(data_file("ieee30_3areas.part"), nc);
    StateVector truth = truth_state(nc);
    const int slack = nc.slack_index();
    bool ok = true;
    std::string parts;

    {  // analytic vs finite-difference jacobian
      MeasurementEvaluator ev(nc, adm, default_legacy_plan(nc));
      Eigen::MatrixXd J = Eigen::MatrixXd(ev.jacobian(truth));
      double rel =
          (J - testutil::fd_jacobian(ev, truth)).cwiseAbs().maxCoeff() / J.cwiseAbs().maxCoeff();
      ok = ok && rel < 1e-6;
      parts += fmt("jacobian %.1e", rel);
    }
    {  // uniform weight scaling does not move the iterates
      MeasurementSet ms = generate_measurements(truth, default_legacy_plan(nc), nc, adm, 3);
      MeasurementSet scaled = ms;
      for (Measurement& m : scaled.entries) m.sigma *= 2.0;
      SEResult a = gauss_newton_solve(nc, adm, ms, SEConfig{});
      SEResult b = gauss_newton_solve(nc, adm, scaled, SEConfig{});
      double worst = 0.0;
      bool same = a.trace.size() == b.trace.size();
      for (std::size_t k = 0; same && k < a.trace.size(); ++k)
        worst = std::max(worst, sup_err(a.trace[k], b.trace[k], slack));
      ok = ok && same && worst < 1e-12;
      parts += fmt(", weight scaling %.1e", worst);
    }
    {  // penalty-weight invariance of the consensus fixed point
      MeasurementSet ms = generate_measurements(truth, pmu_full_plan(nc), nc, adm, 7);
      ADMMConfig c1, c2;
      c1.rho = 1.0;
      c2.rho = 100.0;
      DistSEResult r1 = admm_solve(nc, adm, part, ms, c1, truth);
      DistSEResult r2 = admm_solve(nc, adm, part, ms, c2, truth);
      double gap = sup_err(r1.estimate, r2.estimate, slack);
      ok = ok && r1.converged && r2.converged && gap < 1e-5;
      parts += fmt(", rho invariance %.1e", gap);
    }
    {  // single-area distributed solvers collapse to the central answer
      MeasurementSet ms = generate_measurements(truth, pmu_full_plan(nc), nc, adm, 11);
      SEResult gn = gauss_newton_solve(nc, adm, ms, SEConfig{});
      DistSEResult admm = admm_solve(nc, adm, single_area(nc), ms, ADMMConfig{}, truth);
      DistSEResult bp = bp_solve(nc, adm, ms, BPConfig{}, truth);
      double ga = sup_err(admm.estimate, gn.estimate, slack);
      double gb = sup_err(bp.estimate, gn.estimate, slack);
      ok = ok && admm.converged && bp.converged && ga < 1e-6 && gb < 1e-6;
      parts += fmt(", single-area admm %.1e / bp %.1e", ga, gb);
    }
    {  // bit-identical reruns
      ConvergenceConfig cfg;
      cfg.case_path = data_file("ieee30.case");
      cfg.partition_path = data_file("ieee30_3areas.part");
      cfg.trials = 2;
      cfg.pmu_counts = {2};
      cfg.legacy_vmag_all = true;
      cfg.admm.rho = 1e4;
      cfg.admm.max_iterations = 40;
      cfg.bp.max_iterations = 40;
      cfg.bp.damping = 0.2;
      cfg.bp.relinearize_every = 75;
      const std::string da = "acceptance_det_a", db = "acceptance_det_b";
      fs::remove_all(da);
      fs::remove_all(db);
      fs::create_directories(da);
      fs::create_directories(db);
      run_convergence(cfg, da);
      run_convergence(cfg, db);
      bool identical = true;
      for (const char* f : {"bp_pmu2.csv", "admm_pmu2.csv", "bp_comm_pmu2.csv",
                            "admm_comm_pmu2.csv"}) {
        std::string sa = slurp(da + "/" + f);
        identical = identical && !sa.empty() && sa == slurp(db + "/" + f);
      }
      fs::remove_all(da);
      fs::remove_all(db);
      ok = ok && identical;
      parts += identical ? ", reruns bit-identical" : ", reruns differ";
    }
    note = parts;
    return ok;
  });

  if (g_failures == 0) std::printf("all criteria passed\n");
  return g_failures;
}
