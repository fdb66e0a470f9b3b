#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "gridse/commsim.hpp"
#include "gridse/config.hpp"
#include "oracles.hpp"

using namespace gridse;
using testutil::data_path;

TEST_CASE("link presets") {
  struct Row {
    const char* name;
    double lo, hi, plr;
  };
  const Row table[] = {
      {"urllc", 1, 1, 1e-5},        {"urllc_meas", 2, 2, 0},  {"lte_no_harq", 15, 20, 1e-1},
      {"lte_harq_rlc", 40, 60, 1e-5}, {"x2", 1, 1, 0},        {"core", 10, 10, 0},
      {"external", 20, 20, 0},      {"ideal", 0, 0, 0},
  };
  for (const Row& r : table) {
    CAPTURE(r.name);
    LinkModel m = link_preset(r.name);
    CHECK(m.lat_lo_ms == r.lo);
    CHECK(m.lat_hi_ms == r.hi);
    CHECK(m.plr == r.plr);
  }
  CHECK_THROWS_AS(link_preset("avian"), ConfigError);
}

TEST_CASE("latency and drop draws") {
  std::mt19937_64 rng(5);
  LinkModel fixed = link_preset("core");
  for (int i = 0; i < 50; ++i) CHECK(fixed.draw_latency(rng) == 10.0);

  LinkModel ranged = link_preset("lte_harq_rlc");
  bool varied = false;
  double first = ranged.draw_latency(rng);
  for (int i = 0; i < 500; ++i) {
    double d = ranged.draw_latency(rng);
    CHECK(d >= 40.0);
    CHECK(d <= 60.0);
    varied = varied || d != first;
  }
  CHECK(varied);

  LinkModel never{0, 0, 0.0}, always{0, 0, 1.0}, tenth{0, 0, 0.1};
  int n_never = 0, n_always = 0, n_tenth = 0;
  for (int i = 0; i < 10000; ++i) {
    n_never += never.drops(rng) ? 1 : 0;
    n_always += always.drops(rng) ? 1 : 0;
    n_tenth += tenth.drops(rng) ? 1 : 0;
  }
  CHECK(n_never == 0);
  CHECK(n_always == 10000);
  CHECK(n_tenth > 850);   // 6 sigma around the binomial mean of 1000
  CHECK(n_tenth < 1150);
}

TEST_CASE("substitute policy names") {
  CHECK(substitute_policy_from_string("last_known") == SubstitutePolicy::last_known);
  CHECK(substitute_policy_from_string("redraw") == SubstitutePolicy::redraw);
  CHECK_THROWS_AS(substitute_policy_from_string("wish"), ConfigError);
}

TEST_CASE("loss draws are seeded and nested across rates") {
  LossDraws a = draw_loss(143, 77);
  LossDraws b = draw_loss(143, 77);
  CHECK(a.uniform == b.uniform);
  CHECK(a.normal == b.normal);
  CHECK(draw_loss(143, 78).uniform != a.uniform);

  // the same uniforms decide every rate, so drop sets nest upward
  std::set<int> low, high;
  for (int i = 0; i < 143; ++i) {
    if (a.uniform[i] < 0.01) low.insert(i);
    if (a.uniform[i] < 0.2) high.insert(i);
  }
  CHECK(low.size() <= high.size());
  for (int i : low) CHECK(high.count(i) == 1);
}

TEST_CASE("packet loss substitution policies") {
  NetworkCase nc = load_case(data_path("ieee30.case"));
  AdmittanceModel adm = build_admittance(nc);
  StateVector truth = truth_state(nc);
  MeasurementPlan plan = pmu_full_plan(nc);
  MeasurementSet full = generate_measurements(truth, plan, nc, adm, 21);
  Eigen::VectorXd h_flat = eval_h(StateVector::flat(nc.n_buses()), plan, nc, adm);
  Eigen::VectorXd h_truth = eval_h(truth, plan, nc, adm);
  LossDraws draws = draw_loss(full.count(), 9);

  int dropped = 0;
  MeasurementSet held = apply_packet_loss(full, draws, 0.3, 0.5, SubstitutePolicy::last_known,
                                          h_flat, h_truth, &dropped);
  int expect = 0;
  for (int i = 0; i < full.count(); ++i) {
    if (draws.uniform[i] < 0.3) {
      ++expect;
      CHECK(held.entries[i].z == h_flat[i]);
      CHECK(held.entries[i].sigma == 0.5);
    } else {
      CHECK(held.entries[i].z == full.entries[i].z);
      CHECK(held.entries[i].sigma == full.entries[i].sigma);
    }
  }
  CHECK(dropped == expect);
  CHECK(dropped > 0);

  MeasurementSet redrawn = apply_packet_loss(full, draws, 0.3, 0.5, SubstitutePolicy::redraw,
                                             h_flat, h_truth, nullptr);
  for (int i = 0; i < full.count(); ++i)
    if (draws.uniform[i] < 0.3)
      CHECK(redrawn.entries[i].z == h_truth[i] + 0.5 * draws.normal[i]);

  // plr 0 never substitutes anything
  MeasurementSet untouched = apply_packet_loss(full, draws, 0.0, 0.5,
                                               SubstitutePolicy::last_known, h_flat, h_truth,
                                               &dropped);
  CHECK(dropped == 0);
  for (int i = 0; i < full.count(); ++i) CHECK(untouched.entries[i].z == full.entries[i].z);
}

TEST_CASE("plr sweep degrades with the loss rate") {
  NetworkCase nc = load_case(data_path("ieee30.case"));
  AreaPartition part = load_partition(data_path("ieee30_3areas.part"), nc);

  PLRConfig cfg;
  cfg.plr_grid = {0.0, 0.2};
  cfg.sigma_pm_grid = {0.1};
  cfg.trials = 3;
  cfg.seed = 2;
  std::vector<PLRCell> cells = run_plr_sweep(nc, part, cfg);
  REQUIRE(cells.size() == 4);  // 2 rates x 1 deviation x 2 solvers

  auto mean_of = [&](double plr, const std::string& solver) {
    for (const PLRCell& c : cells)
      if (c.plr == plr && c.solver == solver) return c.mean_rmse;
    FAIL("missing cell");
    return 0.0;
  };
  for (const std::string solver : {"gn", "admm"}) {
    CHECK(mean_of(0.0, solver) < mean_of(0.2, solver));
    CHECK(mean_of(0.0, solver) > 0.0);
  }
  double ratio = mean_of(0.2, "gn") / mean_of(0.2, "admm");
  CHECK(ratio > 0.5);
  CHECK(ratio < 2.0);

  cfg.trials = 0;
  CHECK_THROWS_AS(run_plr_sweep(nc, part, cfg), ConfigError);
}

TEST_CASE("state files load and reject malformed input") {
  NetworkCase nc = load_case(data_path("ieee30.case"));
  StateVector s = load_state_file(data_path("ieee30_t0.state"), nc);
  CHECK(s.v[nc.index_of(3)] == 1.02099501402936);
  StateVector stepped = load_state_file(data_path("ieee30_step.state"), nc);
  CHECK(stepped.v[nc.index_of(3)] == 1.01138192767137);

  CHECK_THROWS_AS(load_state_file(data_path("no_such.state"), nc), CaseError);

  auto write_tmp = [](const std::string& body) {
    const std::string path = "test_commsim_tmp.state";
    std::ofstream out(path);
    out << body;
    return path;
  };
  // short row
  std::string p = write_tmp("1 1.0\n");
  CHECK_THROWS_AS(load_state_file(p, nc), CaseError);
  // unknown bus
  p = write_tmp("99 1.0 0\n");
  CHECK_THROWS_AS(load_state_file(p, nc), CaseError);
  // covers only one bus of thirty
  p = write_tmp("1 1.0 0\n");
  CHECK_THROWS_AS(load_state_file(p, nc), CaseError);
  std::remove(p.c_str());
}

TEST_CASE("timeline lookup picks the latest state at or before t") {
  NetworkCase nc = load_case(data_path("ieee30.case"));
  StateVector s0 = load_state_file(data_path("ieee30_t0.state"), nc);
  StateVector s1 = load_state_file(data_path("ieee30_step.state"), nc);
  std::vector<std::pair<double, StateVector>> tl{{0.0, s0}, {10.0, s1}};

  CHECK(timeline_state_at(tl, 0.0).v[2] == s0.v[2]);
  CHECK(timeline_state_at(tl, 9.9).v[2] == s0.v[2]);
  CHECK(timeline_state_at(tl, 10.0).v[2] == s1.v[2]);
  CHECK(timeline_state_at(tl, 500.0).v[2] == s1.v[2]);
}

TEST_CASE("settle time scans for the last excursion") {
  TimedResult r;
  auto push = [&](double t, double err) {
    TimedSample s;
    s.t_ms = t;
    s.bus_id = 3;
    s.v_true = 1.0;
    s.v_est = 1.0 + err;
    r.series.push_back(s);
  };
  push(1.0, 0.01);
  push(2.0, 5e-5);
  push(3.0, 2e-4);
  push(4.0, 5e-5);
  push(5.0, 1e-5);
  CHECK(settle_time_ms(r, 1e-4) == 4.0);

  TimedResult never;
  never.series = r.series;
  never.series.back().v_est = 2.0;
  CHECK(settle_time_ms(never, 1e-4) == -1.0);

  TimedResult immediate;
  immediate.series = {r.series[4]};
  CHECK(settle_time_ms(immediate, 1e-4) == 5.0);
}

TEST_CASE("timed replay is deterministic and tracks the truth") {
  NetworkCase nc = load_case(data_path("ieee30.case"));
  TimedScenario sc;
  sc.net = nc;
  sc.partition = load_partition(data_path("ieee30_3areas.part"), nc);
  sc.timeline.emplace_back(0.0, load_state_file(data_path("ieee30_t0.state"), nc));
  sc.plan = pmu_full_plan(nc);
  sc.duration_ms = 20.0;
  sc.device_link = link_preset("urllc_meas");
  sc.x2_link = link_preset("x2");

  TimedResult a = run_timed_scenario(sc, 3);
  TimedResult b = run_timed_scenario(sc, 3);
  REQUIRE_FALSE(a.series.empty());
  REQUIRE(a.series.size() == b.series.size());
  for (std::size_t i = 0; i < a.series.size(); ++i) {
    CHECK(a.series[i].t_ms == b.series[i].t_ms);
    CHECK(a.series[i].v_est == b.series[i].v_est);
  }
  CHECK(a.packets_sent > 0);
  CHECK(a.iterations > 0);
  for (const TimedSample& s : a.series) CHECK(s.bus_id == 3);
  // steady truth, clean links: the estimate locks on well inside the window
  CHECK(std::abs(a.series.back().v_est - a.series.back().v_true) < 1e-4);
  CHECK(settle_time_ms(a, 1e-4) >= 0.0);

  // scenario guards
  TimedScenario empty = sc;
  empty.timeline.clear();
  CHECK_THROWS_AS(run_timed_scenario(empty, 3), ConfigError);
  TimedScenario planless = sc;
  planless.plan.entries.clear();
  CHECK_THROWS_AS(run_timed_scenario(planless, 3), ConfigError);
}
