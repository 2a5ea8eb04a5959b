#include <catch2/catch_amalgamated.hpp>

#include "medrobust/intra.hpp"
#include "medrobust/rng.hpp"

using namespace medrobust;

TEST_CASE("expand_12p layout and hand values") {
  Eigen::MatrixXd h(3, 3);
  h << 1, 2, 4,
       0, 0, 0,
       5, 5, 5;
  const auto design = expand_12p(h);
  REQUIRE(design.columns.cols() == 13);
  REQUIRE(design.columns.rows() == 3);
  REQUIRE(design.labels.size() == 13);
  CHECK(design.labels[0] == "intercept");
  CHECK(design.columns.col(0).isOnes());

  // channel 1: main (1,2,4), derivative (0,1,2), squares (1,4,16)/(0,1,4)
  CHECK(design.columns.col(1).transpose() == Eigen::RowVector3d(1, 2, 4));
  CHECK(design.columns.col(4).transpose() == Eigen::RowVector3d(0, 1, 2));
  CHECK(design.columns.col(7).transpose() == Eigen::RowVector3d(1, 4, 16));
  CHECK(design.columns.col(10).transpose() == Eigen::RowVector3d(0, 1, 4));
  CHECK(design.labels[1] == "h1");
  CHECK(design.labels[4] == "dh1");
  CHECK(design.labels[7] == "h1_sq");
  CHECK(design.labels[10] == "dh1_sq");

  // zero channel stays zero in every derived column
  CHECK(design.columns.col(2).isZero());
  CHECK(design.columns.col(5).isZero());
  CHECK(design.columns.col(8).isZero());
  CHECK(design.columns.col(11).isZero());

  // constant channel: zero derivative and zero derivative-square
  CHECK(design.columns.col(6).isZero());
  CHECK(design.columns.col(12).isZero());

  Eigen::MatrixXd wrong(2, 5);
  CHECK_THROWS_AS(expand_12p(wrong), std::invalid_argument);
}

TEST_CASE("expand_full generalizes the channel count") {
  CHECK(expand_full(Eigen::MatrixXd::Random(9, 20)).columns.cols() == 37);
  Eigen::MatrixXd h1 = Eigen::MatrixXd::Constant(1, 6, 2.5);
  const auto d1 = expand_full(h1);
  REQUIRE(d1.columns.cols() == 5);
  CHECK(d1.columns.col(2).isZero());  // derivative of a constant
  CHECK(d1.columns.col(4).isZero());  // its square
  CHECK(expand_full(Eigen::MatrixXd::Random(2, 4)).columns.cols() == 9);
}

TEST_CASE("framewise displacement modes") {
  Eigen::MatrixXd h(3, 2);
  h << 1, 0,
      -2, 0,
      0.5, 0;
  const auto fd = framewise_displacement(h, FdMode::abs_sum);
  CHECK(fd[0] == Catch::Approx(3.5));
  CHECK(fd[1] == 0.0);

  Eigen::MatrixXd g(2, 3);
  g << 1, 1, 4,
       2, 2, 0;
  const auto fdd = framewise_displacement(g, FdMode::diff_abs_sum);
  CHECK(fdd[0] == 0.0);  // leading frame has no difference
  CHECK(fdd[1] == 0.0);  // identical consecutive frames
  CHECK(fdd[2] == Catch::Approx(5.0));
}

TEST_CASE("scrub keeps exactly the frames at or below threshold") {
  const int t = 10;
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, t);
  Eigen::MatrixXd h = Eigen::MatrixXd::Random(3, t);
  Eigen::VectorXd fd = Eigen::VectorXd::Constant(t, 1.0);
  fd[1] = 9.0;  // 1-based frames 2 and 7 exceed
  fd[6] = 9.0;
  const auto s = scrub(x, h, fd, 3.0, 0.35);
  CHECK(s.info.kept_indices == std::vector<int>{0, 2, 3, 4, 5, 7, 8, 9});
  CHECK(s.info.removed_fraction == Catch::Approx(0.2));
  CHECK_FALSE(s.info.excluded);
  CHECK(s.response.cols() == 8);
  CHECK(s.response.col(1) == x.col(2));
  CHECK(s.nuisance.col(5) == h.col(7));

  SECTION("nothing above threshold is an identity") {
    Eigen::VectorXd calm = Eigen::VectorXd::Constant(t, 0.5);
    const auto id = scrub(x, h, calm, 3.0, 0.35);
    CHECK(id.info.removed_fraction == 0.0);
    CHECK_FALSE(id.info.excluded);
    CHECK(id.response == x);
    CHECK(id.nuisance == h);
  }

  SECTION("removing more than the cap excludes the subject") {
    Eigen::VectorXd wild = Eigen::VectorXd::Constant(t, 1.0);
    for (int i = 0; i < 4; ++i) wild[i] = 9.0;  // 40% removed
    const auto ex = scrub(x, h, wild, 3.0, 0.35);
    CHECK(ex.info.removed_fraction == Catch::Approx(0.4));
    CHECK(ex.info.excluded);
  }

  SECTION("boundary frames at the threshold are kept") {
    Eigen::VectorXd edge = Eigen::VectorXd::Constant(t, 3.0);
    const auto keep = scrub(x, h, edge, 3.0, 0.35);
    CHECK(keep.info.removed_fraction == 0.0);
  }
}

TEST_CASE("linear_residuals removes an exactly linear signal") {
  CounterRng rng(31, 0);
  const int t = 120;
  Eigen::MatrixXd h(3, t);
  for (int i = 0; i < t; ++i)
    for (int k = 0; k < 3; ++k) h(k, i) = rng.normal();
  const auto design = expand_12p(h);
  // response is an exact function of the design columns
  Eigen::VectorXd beta = Eigen::VectorXd::LinSpaced(13, -1.0, 1.5);
  Eigen::MatrixXd x(2, t);
  x.row(0) = (design.columns * beta).transpose();
  x.row(1) = (design.columns * beta).transpose() * 2.0;
  const auto res = linear_residuals(x, design);
  CHECK(res.dropped_columns == 0);
  CHECK(res.values.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("linear_residuals recovers coefficients under noise") {
  CounterRng rng(32, 0);
  const int t = 3000;  // per-coefficient noise ~1/sqrt(t); 0.1 is a >5 sigma bound
  Eigen::MatrixXd h(3, t);
  for (int i = 0; i < t; ++i)
    for (int k = 0; k < 3; ++k) h(k, i) = rng.normal();
  const auto design = expand_12p(h);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(13);
  beta << 0.4, 1.0, -0.5, 0.25, 0, 0.8, 0, -0.3, 0.1, 0, 0.2, 0, -0.15;
  Eigen::MatrixXd x(1, t);
  for (int i = 0; i < t; ++i)
    x(0, i) = design.columns.row(i).dot(beta) + rng.normal();
  const auto res = linear_residuals(x, design);
  // implied coefficient error: refit residual against truth signal
  const Eigen::VectorXd fitted =
      x.row(0).transpose() - res.values.row(0).transpose();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design.columns);
  const Eigen::VectorXd beta_hat = qr.solve(fitted);
  CHECK((beta_hat - beta).cwiseAbs().maxCoeff() < 0.1);
}

TEST_CASE("residuals are orthogonal to the design and centered") {
  CounterRng rng(33, 0);
  const int t = 200;
  Eigen::MatrixXd h(3, t);
  for (int i = 0; i < t; ++i)
    for (int k = 0; k < 3; ++k) h(k, i) = rng.normal() + 0.3;
  Eigen::MatrixXd x(3, t);
  for (int v = 0; v < 3; ++v)
    for (int i = 0; i < t; ++i) x(v, i) = rng.normal() + h(0, i) * 0.5;
  const auto design = expand_12p(h);
  const auto res = linear_residuals(x, design);
  for (int v = 0; v < 3; ++v) {
    const double scale = x.row(v).norm();
    const Eigen::VectorXd dots =
        design.columns.transpose() * res.values.row(v).transpose();
    CHECK(dots.cwiseAbs().maxCoeff() < 1e-6 * scale);
    CHECK(std::abs(res.values.row(v).mean()) < 1e-8);
  }
}

TEST_CASE("dependent design columns are dropped with a warning") {
  CounterRng rng(34, 0);
  const int t = 80;
  Eigen::MatrixXd cols(t, 4);
  for (int i = 0; i < t; ++i) {
    cols(i, 0) = 1.0;
    cols(i, 1) = rng.normal();
    cols(i, 2) = rng.normal();
  }
  cols.col(3) = cols.col(1) * 2.0;  // exact duplicate direction
  NuisanceDesign design{cols, {"intercept", "a", "b", "a2"}};
  Eigen::MatrixXd x(1, t);
  for (int i = 0; i < t; ++i) x(0, i) = rng.normal();
  const auto res = linear_residuals(x, design);
  CHECK(res.design_rank == 3);
  CHECK(res.dropped_columns == 1);
  REQUIRE(res.warnings.size() == 1);
  CHECK(res.warnings[0].find("dependent") != std::string::npos);
  const Eigen::VectorXd dots = cols.transpose() * res.values.row(0).transpose();
  CHECK(dots.cwiseAbs().maxCoeff() < 1e-6 * x.row(0).norm());
}

TEST_CASE("linear_residuals validates shapes") {
  Eigen::MatrixXd x(1, 10);
  x.setRandom();
  NuisanceDesign d;
  d.columns = Eigen::MatrixXd::Random(9, 2);
  CHECK_THROWS_AS(linear_residuals(x, d), std::invalid_argument);
  d.columns = Eigen::MatrixXd::Random(10, 10);
  CHECK_THROWS_AS(linear_residuals(x, d), std::invalid_argument);
}

#include "medrobust/simulation.hpp"

namespace {

Eigen::MatrixXd gaussian_series(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  CounterRng rng(seed, 0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("ensemble_features stacks mains and derivatives") {
  Eigen::MatrixXd h(2, 4);
  h << 1, 2, 4, 7,
       0, 1, 1, 0;
  const NuisanceDesign f = ensemble_features(h);
  REQUIRE(f.columns.rows() == 4);
  REQUIRE(f.columns.cols() == 4);
  REQUIRE(f.labels == std::vector<std::string>({"h1", "h2", "dh1", "dh2"}));
  CHECK(f.columns(1, 0) == 2.0);
  CHECK(f.columns(0, 2) == 0.0);   // leading derivative entry
  CHECK(f.columns(3, 2) == 3.0);
}

TEST_CASE("ensemble residuals vanish on exactly linear nuisance structure") {
  const Eigen::Index t = 200;
  const Eigen::MatrixXd h = gaussian_series(3, t, 51);
  const NuisanceDesign feats = ensemble_features(h);
  Eigen::MatrixXd x(2, t);
  x.row(0) = (2.0 * feats.columns.col(0) - feats.columns.col(1)).transpose();
  x.row(1) = (feats.columns.col(3).array() + 5.0).transpose();
  const ResidualSeries res = ensemble_residuals(
      x, feats.columns, {{LearnerKind::mean}, {LearnerKind::linear}}, 5, 3);
  for (Eigen::Index v = 0; v < 2; ++v) {
    REQUIRE(res.values.row(v).norm() <= 1e-4 * x.row(v).norm());
    REQUIRE(std::abs(res.values.row(v).mean()) <= 1e-8);
  }
}

TEST_CASE("ensemble residuals recover noise variance under product contamination") {
  const Eigen::Index t = 600;
  const Eigen::MatrixXd h = gaussian_series(3, t, 52);
  CounterRng rng(53, 0);
  Eigen::RowVectorXd e(t);
  for (Eigen::Index i = 0; i < t; ++i) e(i) = rng.normal();
  Eigen::MatrixXd x(1, t);
  x.row(0) = 0.6 * h.row(0).cwiseProduct(h.row(2)) - 0.8 * h.row(1).cwiseProduct(h.row(2)) + e;
  const NuisanceDesign feats = ensemble_features(h);
  const ResidualSeries res = ensemble_residuals(
      x, feats.columns, {{LearnerKind::mean}, {LearnerKind::interaction_linear}}, 5, 4);
  const double var_e = (e.array() - e.mean()).square().mean();
  const double var_r = res.values.row(0).array().square().mean();
  REQUIRE(var_r == Catch::Approx(var_e).epsilon(0.10));
}

TEST_CASE("ensemble residuals leave unrelated series centered and intact") {
  const Eigen::Index t = 400;
  const Eigen::MatrixXd h = gaussian_series(3, t, 54);
  const Eigen::MatrixXd x = gaussian_series(1, t, 55);
  const NuisanceDesign feats = ensemble_features(h);
  const EnsembleResidualReport rep = ensemble_residuals_detailed(
      x, feats.columns, default_intra_library(), 5, 5);
  REQUIRE(rep.stacks.size() == 1);
  REQUIRE(rep.stacks[0].weights(0) >= 0.5);  // mean learner dominates
  const Eigen::RowVectorXd centered = x.row(0).array() - x.row(0).mean();
  REQUIRE((rep.residuals.values.row(0) - centered).norm() <= 0.2 * centered.norm());
}

TEST_CASE("ensemble residuals drop zero-variance features with a warning") {
  const Eigen::Index t = 150;
  Eigen::MatrixXd feats = gaussian_series(t, 3, 56);
  feats.col(1).setConstant(4.2);
  const Eigen::MatrixXd x = gaussian_series(1, t, 57);
  const ResidualSeries res = ensemble_residuals(
      x, feats, {{LearnerKind::mean}, {LearnerKind::linear}}, 5, 6);
  REQUIRE(res.design_rank == 2);
  REQUIRE(res.dropped_columns == 1);
  bool warned = false;
  for (const auto& w : res.warnings) warned = warned || w.find("zero-variance") != std::string::npos;
  REQUIRE(warned);
}

TEST_CASE("ensemble residuals validate series length against folds") {
  const Eigen::MatrixXd x = gaussian_series(1, 30, 58);
  const Eigen::MatrixXd feats = gaussian_series(30, 2, 59);
  REQUIRE_THROWS_AS(ensemble_residuals(x, feats, {{LearnerKind::mean}}, 5, 1),
                    std::invalid_argument);
}

TEST_CASE("ensemble nuisance fit error shrinks with series length") {
  // Mean-squared contamination-recovery error, maximized over regions and
  // averaged over subjects, should drop by at least 2x from T=300 to T=1200.
  const int n_subjects = 20;
  double err300 = 0.0, err1200 = 0.0;
  for (const int t : {300, 1200}) {
    DgpConfig cfg;
    cfg.n = n_subjects;
    cfg.t = t;
    cfg.seed = 71;
    const SimulatedCohort cohort = gen_cohort(cfg);
    double total = 0.0;
    for (int i = 0; i < n_subjects; ++i) {
      const SubjectRecord& rec = cohort.data.subjects[size_t(i)];
      const Eigen::RowVectorXd truth = cohort.truth[size_t(i)].contamination.transpose();
      const NuisanceDesign feats = ensemble_features(rec.nuisance);
      const ResidualSeries res = ensemble_residuals(
          rec.response, feats.columns, default_intra_library(), 5, mix_seed(72, std::uint64_t(i)));
      double worst = 0.0;
      for (Eigen::Index v = 0; v < rec.response.rows(); ++v) {
        const Eigen::RowVectorXd fhat = rec.response.row(v) - res.values.row(v);
        Eigen::RowVectorXd diff = fhat - truth;
        diff.array() -= diff.mean();
        worst = std::max(worst, diff.array().square().mean());
      }
      total += worst;
    }
    (t == 300 ? err300 : err1200) = total / n_subjects;
  }
  INFO("err300=" << err300 << " err1200=" << err1200);
  REQUIRE(err1200 <= 0.5 * err300);
}
