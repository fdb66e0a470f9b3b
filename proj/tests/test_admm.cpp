#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "gridse/admm.hpp"
#include "oracles.hpp"

using namespace gridse;
using testutil::data_path;

namespace {

struct Fixture {
  NetworkCase nc;
  AdmittanceModel adm;
  AreaPartition part;
  StateVector truth;

  Fixture()
      : nc(load_case(data_path("ieee30.case"))),
        adm(build_admittance(nc)),
        part(load_partition(data_path("ieee30_3areas.part"), nc)),
        truth(truth_state(nc)) {}
};

std::set<int> ids_of(const NetworkCase& nc, const std::vector<int>& idx) {
  std::set<int> out;
  for (int i : idx) out.insert(nc.buses[i].id);
  return out;
}

double sup_err(const StateVector& a, const StateVector& b, int slack) {
  return (pack_state(a, slack) - pack_state(b, slack)).lpNorm<Eigen::Infinity>();
}

}  // namespace

TEST_CASE("area decomposition of ieee30") {
  Fixture f;
  MeasurementSet ms = noiseless_measurements(f.truth, default_legacy_plan(f.nc), f.nc, f.adm);
  std::vector<AreaSubproblem> subs = decompose(f.nc, f.part, ms);
  REQUIRE(subs.size() == 3);

  CHECK(subs[0].interior.size() == 9);
  CHECK(subs[1].interior.size() == 12);
  CHECK(subs[2].interior.size() == 9);
  CHECK(ids_of(f.nc, subs[0].boundary) == std::set<int>{9, 10, 12, 27});
  CHECK(ids_of(f.nc, subs[1].boundary) == std::set<int>{4, 6, 21, 22, 23});
  CHECK(ids_of(f.nc, subs[2].boundary) == std::set<int>{10, 15, 28});

  for (const AreaSubproblem& s : subs) {
    CHECK(s.local_buses.size() == s.interior.size() + s.boundary.size());
    CHECK(std::equal(s.interior.begin(), s.interior.end(), s.local_buses.begin()));
  }

  // every measurement lands in exactly one area, owned by its metered bus
  std::set<int> seen;
  int total = 0;
  for (const AreaSubproblem& s : subs) {
    total += static_cast<int>(s.meas_rows.size());
    for (int r : s.meas_rows) {
      CHECK(seen.insert(r).second);
      CHECK(f.part.area(ms.entries[r].loc1) == s.area_id);
    }
    CHECK(s.meas.count() == static_cast<int>(s.meas_rows.size()));
  }
  CHECK(total == ms.count());
}

TEST_CASE("shared components across the tie lines") {
  Fixture f;
  std::vector<SharedComponent> shared = shared_components(f.nc, f.part);
  CHECK(shared.size() == 22);

  std::map<std::pair<int, int>, int> per_pair;
  int bus10 = 0;
  for (const SharedComponent& c : shared) {
    CHECK(c.areas.size() >= 2);
    CHECK(std::is_sorted(c.areas.begin(), c.areas.end()));
    for (std::size_t i = 0; i < c.areas.size(); ++i)
      for (std::size_t j = i + 1; j < c.areas.size(); ++j)
        per_pair[{c.areas[i], c.areas[j]}]++;
    if (f.nc.buses[c.bus].id == 10) {
      ++bus10;
      CHECK(c.areas == std::vector<int>{1, 2, 3});
    }
  }
  CHECK(bus10 == 2);  // magnitude and angle
  CHECK(per_pair[{1, 2}] == 10);
  CHECK(per_pair[{1, 3}] == 6);
  CHECK(per_pair[{2, 3}] == 10);
}

TEST_CASE("residual helpers") {
  // one shared value, copies 1.1 and 0.9 around a mean of 1.0
  std::vector<std::vector<double>> copies{{1.1, 0.9}};
  std::vector<double> zbar{1.0};
  CHECK(primal_residual(copies, zbar) == doctest::Approx(std::sqrt(0.02)).epsilon(1e-15));
  CHECK(dual_residual(2.0, {1.1}, {1.0}) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(dual_residual(2.0, {1.0}, {1.0}) == 0.0);
}

TEST_CASE("single area reduces to the centralized estimate") {
  Fixture f;
  MeasurementSet ms = generate_measurements(f.truth, pmu_full_plan(f.nc), f.nc, f.adm, 7);
  SEResult gn = gauss_newton_solve(f.nc, f.adm, ms, SEConfig{});

  DistSEResult res = admm_solve(f.nc, f.adm, single_area(f.nc), ms, ADMMConfig{}, f.truth);
  CHECK(res.converged);
  CHECK_FALSE(res.weak_prior_engaged);
  CHECK(sup_err(res.estimate, gn.estimate, f.nc.slack_index()) < 1e-6);
}

TEST_CASE("multi-area consensus matches the centralized estimate") {
  Fixture f;
  MeasurementSet ms = generate_measurements(f.truth, pmu_full_plan(f.nc), f.nc, f.adm, 7);
  SEResult gn = gauss_newton_solve(f.nc, f.adm, ms, SEConfig{});

  DistSEResult res = admm_solve(f.nc, f.adm, f.part, ms, ADMMConfig{}, f.truth);
  CHECK(res.converged);
  CHECK_FALSE(res.diverged);
  CHECK(sup_err(res.estimate, gn.estimate, f.nc.slack_index()) < 1e-5);
  CHECK(static_cast<int>(res.rmse_trace.size()) == res.iterations_used);
  CHECK(res.primal_trace.size() == res.rmse_trace.size());
  CHECK(res.dual_trace.size() == res.rmse_trace.size());
}

TEST_CASE("fixed point is insensitive to the penalty weight") {
  Fixture f;
  MeasurementSet ms = generate_measurements(f.truth, pmu_full_plan(f.nc), f.nc, f.adm, 7);
  auto solve_with = [&](double rho) {
    ADMMConfig cfg;
    cfg.rho = rho;
    DistSEResult r = admm_solve(f.nc, f.adm, f.part, ms, cfg, f.truth);
    REQUIRE(r.converged);
    return r.estimate;
  };
  StateVector a = solve_with(1.0), b = solve_with(100.0);
  CHECK(sup_err(a, b, f.nc.slack_index()) < 1e-5);  // 10x the consensus tolerance
}

TEST_CASE("communication log counts the consensus traffic") {
  Fixture f;
  MeasurementSet ms = generate_measurements(f.truth, pmu_full_plan(f.nc), f.nc, f.adm, 7);
  ADMMConfig cfg;
  cfg.max_iterations = 2;
  cfg.record_comm_log = true;
  DistSEResult res = admm_solve(f.nc, f.adm, f.part, ms, cfg, f.truth);

  // 8 bytes per shared component crossing the pair, each direction, each
  // iteration: pairs (1,2) and (2,3) carry 10 components, (1,3) carries 6
  std::map<std::pair<int, int>, std::size_t> bytes;
  std::set<int> iters;
  for (const CommRecord& c : res.comm_log) {
    iters.insert(c.iteration);
    if (c.iteration != 1) continue;
    bytes[{c.from_area, c.to_area}] = c.bytes_estimate;
  }
  CHECK(iters == std::set<int>{1, 2});
  CHECK(bytes.size() == 6);
  CHECK(bytes[{1, 2}] == 80);
  CHECK(bytes[{2, 1}] == 80);
  CHECK(bytes[{1, 3}] == 48);
  CHECK(bytes[{3, 1}] == 48);
  CHECK(bytes[{2, 3}] == 80);
  CHECK(bytes[{3, 2}] == 80);
}

TEST_CASE("locally unobservable areas fall back to the weak prior") {
  Fixture f;
  // PMU pairs at one bus per area: far too thin to pin the local problems
  MeasurementPlan sparse = build_plan_with_pmus(f.nc, f.part, 1, MeasurementPlan{});
  MeasurementSet ms = generate_measurements(f.truth, sparse, f.nc, f.adm, 2);
  ADMMConfig cfg;
  cfg.max_iterations = 40;
  DistSEResult res = admm_solve(f.nc, f.adm, f.part, ms, cfg, f.truth);
  CHECK(res.weak_prior_engaged);
}
