#include <catch2/catch_amalgamated.hpp>

#include <stdexcept>
#include <vector>

#include "medrobust/diagnostics.hpp"
#include "medrobust/simulation.hpp"

using namespace medrobust;

TEST_CASE("known-truth removal has zero removal bias and shrinking error") {
  DgpConfig cfg;
  cfg.n = 200;
  cfg.t = 4800;
  cfg.seed = 31;
  const SimulatedCohort cohort = gen_cohort(cfg);
  BiasDiagnosticOptions opt;
  opt.intra = IntraFit::known_truth;
  const std::vector<int> grid = {300, 600, 1200, 2400, 4800};
  const BiasDiagnosticTable tab = derived_bias_diagnostic(cohort, grid, opt);

  REQUIRE(tab.rows.size() == grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const BiasDiagnosticRow& r = tab.rows[g];
    REQUIRE(r.t_length == grid[g]);
    REQUIRE(r.subjects_used == cfg.n);
    REQUIRE(r.subjects_dropped == 0);
    // derived and reference residuals are the same matrix here, so the
    // removal part vanishes exactly and the total equals the sampling part
    REQUIRE(r.removal_bias == 0.0);
    REQUIRE(r.total_bias == r.sampling_bias);
  }
  // the per-subject worst error shrinks at every doubling of the length
  for (std::size_t g = 1; g < grid.size(); ++g)
    REQUIRE(tab.rows[g].worst_error_mean < tab.rows[g - 1].worst_error_mean);
  // convergence margin from the shortest to the longest series
  REQUIRE(tab.rows.front().worst_error_mean >=
          2.0 * tab.rows.back().worst_error_mean);
  // the element-wise bias ends well below where it starts
  REQUIRE(tab.rows.back().total_bias < tab.rows.front().total_bias);
}

TEST_CASE("stacked removal beats the linear motion expansion at T=600") {
  DgpConfig cfg;
  cfg.n = 25;
  cfg.t = 600;
  cfg.seed = 77;
  const SimulatedCohort cohort = gen_cohort(cfg);

  BiasDiagnosticOptions lin;
  lin.intra = IntraFit::parametric_12p;
  const BiasDiagnosticTable tl = derived_bias_diagnostic(cohort, {600}, lin);

  BiasDiagnosticOptions ens;
  ens.intra = IntraFit::ensemble;
  ens.seed = 5;
  const BiasDiagnosticTable te = derived_bias_diagnostic(cohort, {600}, ens);

  REQUIRE(te.rows[0].removal_bias < tl.rows[0].removal_bias);
  // the artifact mixes products of the motion channels, which the linear
  // expansion cannot represent, so its removal error stays macroscopic
  REQUIRE(tl.rows[0].removal_bias > 0.3);
  REQUIRE(te.rows[0].removal_bias < 0.1);
}

TEST_CASE("diagnostic rejects cohorts without truth and bad grids") {
  DgpConfig cfg;
  cfg.n = 6;
  cfg.t = 80;
  cfg.seed = 3;
  SimulatedCohort cohort = gen_cohort(cfg);

  SimulatedCohort no_truth = cohort;
  no_truth.truth.clear();
  REQUIRE_THROWS_WITH(derived_bias_diagnostic(no_truth, {60}),
                      Catch::Matchers::ContainsSubstring("not supported"));

  REQUIRE_THROWS_AS(derived_bias_diagnostic(cohort, {}), std::invalid_argument);
  REQUIRE_THROWS_AS(derived_bias_diagnostic(cohort, {200}),
                    std::invalid_argument);  // longer than simulated
  REQUIRE_THROWS_AS(derived_bias_diagnostic(cohort, {20}),
                    std::invalid_argument);  // below the frame minimum
  BiasDiagnosticOptions ens;
  ens.intra = IntraFit::ensemble;
  REQUIRE_THROWS_AS(derived_bias_diagnostic(cohort, {40}, ens),
                    std::invalid_argument);  // ensemble needs 10 frames/fold
}

TEST_CASE("degenerate subjects are dropped and counted") {
  DgpConfig cfg;
  cfg.n = 6;
  cfg.t = 60;
  cfg.seed = 9;
  SimulatedCohort cohort = gen_cohort(cfg);
  // make one subject's response exactly equal to its artifact series, so the
  // truth residuals are identically zero and the correlation is undefined
  const Eigen::VectorXd& artifact = cohort.truth[2].contamination;
  cohort.data.subjects[2].response =
      artifact.transpose().replicate(cohort.data.subjects[2].response.rows(), 1);

  BiasDiagnosticOptions opt;
  opt.intra = IntraFit::known_truth;
  const BiasDiagnosticTable tab = derived_bias_diagnostic(cohort, {60}, opt);
  REQUIRE(tab.rows[0].subjects_used == 5);
  REQUIRE(tab.rows[0].subjects_dropped == 1);
  REQUIRE(tab.warnings.size() == 1);
  REQUIRE_THAT(tab.warnings[0], Catch::Matchers::ContainsSubstring("dropped 1"));
}
