#pragma once
// Analysis pipelines and the replication runner for the simulation study.
//
// A pipeline couples an intra-subject nuisance-removal stage (how residual
// series are produced before outcome derivation) with an inter-subject
// effect estimator (how the treatment effect on each derived outcome is
// estimated). Five canonical combinations are exposed under fixed display
// labels; `replicate` runs any set of pipelines over independently seeded
// simulated cohorts and reduces the results to bias / SD / MSE / rejection
// metrics with explicit failure and exclusion accounting.

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "medrobust/core.hpp"
#include "medrobust/estimator.hpp"
#include "medrobust/inference.hpp"
#include "medrobust/intra.hpp"
#include "medrobust/learners.hpp"
#include "medrobust/outcomes.hpp"
#include "medrobust/parallel.hpp"
#include "medrobust/rng.hpp"
#include "medrobust/simulation.hpp"
#include "medrobust/stats.hpp"

namespace medrobust {

enum class IntraStage {
  known_truth,        // subtract the stored artifact series (simulated data only)
  motion_12p,         // linear fit on the 12-column motion expansion
  motion_12p_scrub,   // frame censoring by displacement, then the 12p fit
  stacked_ensemble,   // stacked learners on motion features
};

enum class InterStage {
  linear_treat_conf,      // OLS of the outcome on intercept + treatment + confounders
  linear_treat_med_conf,  // the same regression with the mediator added
  aipw_mediation,         // cross-fitted AIPW natural-direct-effect estimator
};

struct MethodPipeline {
  IntraStage intra = IntraStage::motion_12p;
  InterStage inter = InterStage::linear_treat_conf;
  std::string label;
};

// The five canonical rows of the method comparison, under their fixed labels.
inline std::vector<MethodPipeline> canonical_pipelines() {
  return {
      {IntraStage::motion_12p, InterStage::linear_treat_conf, "12p+Linear"},
      {IntraStage::motion_12p, InterStage::linear_treat_med_conf, "12p+Linear M"},
      {IntraStage::motion_12p_scrub, InterStage::linear_treat_conf,
       "12p Scrub+Linear"},
      {IntraStage::motion_12p_scrub, InterStage::linear_treat_med_conf,
       "12p Scrub+Linear M"},
      {IntraStage::stacked_ensemble, InterStage::aipw_mediation, "SL+AIPW"},
  };
}

// Command-line method tokens (snake_case) for the canonical pipelines.
inline MethodPipeline parse_method_token(const std::string& token) {
  const auto all = canonical_pipelines();
  if (token == "12p_linear") return all[0];
  if (token == "12p_linear_m") return all[1];
  if (token == "12p_scrub_linear") return all[2];
  if (token == "12p_scrub_linear_m") return all[3];
  if (token == "sl_aipw") return all[4];
  throw std::invalid_argument(
      "unknown method token '" + token +
      "' (expected one of: 12p_linear, 12p_linear_m, 12p_scrub_linear, "
      "12p_scrub_linear_m, sl_aipw)");
}

struct IntraOptions {
  double scrub_threshold = 3.0;     // displacement cut for frame censoring
  double scrub_max_removed = 0.35;  // subject excluded beyond this fraction
  FdMode fd_mode = FdMode::abs_sum;
  std::vector<LearnerSpec> ensemble_library = default_intra_library();
  int ensemble_folds = 5;
  double clamp_eps = 1e-7;
  std::uint64_t seed = 1;  // stacking seed, salted per subject
};

struct HarnessOptions {
  IntraOptions intra;
  EstimateOptions estimator;  // target forced to the direct effect in pipelines
  double alpha = 0.05;        // two-sided rejection level for the metrics
};

// Derived outcomes for a whole cohort under one removal stage. Rows align
// with the subject order; unusable subjects keep a zero row and are flagged.
struct DerivedCohort {
  DerivedOutcomeMatrix outcomes;
  std::vector<char> usable;
  int excluded = 0;                // newly excluded by this stage
  std::vector<std::string> notes;  // one line per exclusion, with subject id
};

inline DerivedCohort derive_cohort_outcomes(
    const CohortDataset& data, IntraStage stage, const IntraOptions& opt,
    const std::vector<SubjectTruth>* truth = nullptr) {
  const std::size_t n = data.subjects.size();
  if (n == 0) throw std::invalid_argument("derive_cohort_outcomes: empty cohort");
  if (stage == IntraStage::known_truth &&
      (truth == nullptr || truth->size() != n))
    throw std::runtime_error(
        "the known-truth removal stage requires simulated data with stored "
        "artifact series");
  const Eigen::Index v_count = data.subjects.front().response.rows();
  for (const SubjectRecord& s : data.subjects)
    if (s.response.rows() != v_count)
      throw std::invalid_argument(
          "derive_cohort_outcomes: subjects disagree on the region count");
  const auto pairs = pair_index(static_cast<int>(v_count));
  const Eigen::Index j_count = static_cast<Eigen::Index>(pairs.size());

  DerivedCohort out;
  out.outcomes.pairs = pairs;
  out.outcomes.kind = OutcomeKind::fisher_z_corr;
  out.outcomes.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), j_count);
  out.usable.assign(n, 0);
  std::vector<std::string> reasons(n);

  parallel_for(n, [&](std::size_t i) {
    const SubjectRecord& s = data.subjects[i];
    if (!s.usable) {
      reasons[i] = s.id + ": marked unusable upstream";
      return;
    }
    try {
      Eigen::VectorXd derived;
      switch (stage) {
        case IntraStage::known_truth: {
          const Eigen::VectorXd& artifact = (*truth)[i].contamination;
          const Eigen::MatrixXd resid =
              s.response - artifact.transpose().replicate(s.response.rows(), 1);
          derived = derive_fc(resid, opt.clamp_eps);
          break;
        }
        case IntraStage::motion_12p:
          derived = derive_fc(
              linear_residuals(s.response, expand_12p(s.nuisance)).values,
              opt.clamp_eps);
          break;
        case IntraStage::motion_12p_scrub: {
          const Eigen::VectorXd fd =
              framewise_displacement(s.nuisance, opt.fd_mode);
          const ScrubbedSeries kept =
              scrub(s.response, s.nuisance, fd, opt.scrub_threshold,
                    opt.scrub_max_removed);
          if (kept.info.excluded) {
            reasons[i] = s.id + ": scrubbing removed " +
                         std::to_string(kept.info.removed_fraction) +
                         " of the frames";
            return;
          }
          derived = derive_fc(
              linear_residuals(kept.response, expand_12p(kept.nuisance)).values,
              opt.clamp_eps);
          break;
        }
        case IntraStage::stacked_ensemble:
          derived = derive_fc(
              ensemble_residuals(s.response,
                                 ensemble_features(s.nuisance).columns,
                                 opt.ensemble_library, opt.ensemble_folds,
                                 mix_seed(opt.seed, static_cast<std::uint64_t>(i)))
                  .values,
              opt.clamp_eps);
          break;
      }
      out.outcomes.values.row(static_cast<Eigen::Index>(i)) = derived.transpose();
      out.usable[i] = 1;
    } catch (const DegenerateSeriesError& e) {
      reasons[i] = s.id + ": " + e.what();
    } catch (const std::invalid_argument& e) {
      reasons[i] = s.id + ": " + e.what();
    }
  });

  for (std::size_t i = 0; i < n; ++i) {
    if (out.usable[i]) continue;
    ++out.excluded;
    out.notes.push_back(reasons[i].empty() ? data.subjects[i].id + ": excluded"
                                           : reasons[i]);
  }
  return out;
}

// One estimated treatment effect on one derived outcome.
struct OutcomeEffect {
  double estimate = std::numeric_limits<double>::quiet_NaN();
  double se = std::numeric_limits<double>::quiet_NaN();
  double p = std::numeric_limits<double>::quiet_NaN();
};

// OLS of y on [intercept, a, w (, m)]: coefficient on the treatment column
// with its classical homoskedastic standard error and a two-sided normal
// p-value for the zero-effect hypothesis.
inline OutcomeEffect linear_effect(const Eigen::VectorXd& y,
                                   const Eigen::VectorXd& a,
                                   const Eigen::MatrixXd& w,
                                   const Eigen::VectorXd* m = nullptr) {
  const Eigen::Index n = y.size();
  if (a.size() != n || w.rows() != n || (m != nullptr && m->size() != n))
    throw std::invalid_argument("linear_effect: input lengths differ");
  const Eigen::Index d = 2 + w.cols() + (m != nullptr ? 1 : 0);
  if (n < d + 2)
    throw std::invalid_argument("linear_effect: too few subjects for the regression");
  Eigen::MatrixXd x(n, d);
  x.col(0).setOnes();
  x.col(1) = a;
  x.middleCols(2, w.cols()) = w;
  if (m != nullptr) x.col(d - 1) = *m;

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  if (qr.rank() < d)
    throw std::invalid_argument("linear_effect: collinear regression design");
  const Eigen::VectorXd beta = qr.solve(y);
  const double rss = (y - x * beta).squaredNorm();
  const Eigen::MatrixXd xtx_inv =
      (x.transpose() * x).ldlt().solve(Eigen::MatrixXd::Identity(d, d));
  const double sigma2 = rss / static_cast<double>(n - d);
  OutcomeEffect eff;
  eff.estimate = beta[1];
  eff.se = std::sqrt(sigma2 * xtx_inv(1, 1));
  eff.p = two_sided_normal_p(eff.estimate / eff.se);
  return eff;
}

struct PipelineResult {
  std::string label;
  std::vector<OutcomeEffect> effects;  // one per derived outcome
  int used_subjects = 0;
  int excluded_subjects = 0;
  bool failed = false;
  std::string failure;
  std::vector<std::string> warnings;
};

inline PipelineResult run_pipeline(const SimulatedCohort& sim,
                                   const MethodPipeline& pipe,
                                   const HarnessOptions& opt) {
  PipelineResult res;
  res.label = pipe.label;
  try {
    const DerivedCohort derived = derive_cohort_outcomes(
        sim.data, pipe.intra, opt.intra,
        sim.truth.empty() ? nullptr : &sim.truth);
    res.excluded_subjects = derived.excluded;
    for (const std::string& note : derived.notes) res.warnings.push_back(note);

    const std::size_t n = sim.data.subjects.size();
    int arm0 = 0, arm1 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!derived.usable[i]) continue;
      (sim.data.subjects[i].treatment == 1 ? arm1 : arm0) += 1;
    }
    res.used_subjects = arm0 + arm1;
    if (arm0 == 0 || arm1 == 0)
      throw std::runtime_error("a treatment arm is empty after exclusions");

    const Eigen::Index j_count = derived.outcomes.values.cols();
    if (pipe.inter == InterStage::aipw_mediation) {
      CohortDataset slim;  // series are not needed by the effect estimator
      slim.subjects.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        SubjectRecord rec;
        rec.id = sim.data.subjects[i].id;
        rec.treatment = sim.data.subjects[i].treatment;
        rec.confounders = sim.data.subjects[i].confounders;
        rec.mediator = sim.data.subjects[i].mediator;
        rec.usable = derived.usable[i] != 0;
        slim.subjects.push_back(std::move(rec));
      }
      EstimateOptions est = opt.estimator;
      est.target = CausalTarget::nde();
      const EstimateReport report =
          estimate_target(slim, derived.outcomes, est);
      for (const std::string& w : report.warnings) res.warnings.push_back(w);
      const VarianceReport var =
          variance_and_t(report.influence.values, report.estimate);
      const double n_used = static_cast<double>(report.subject_ids.size());
      res.effects.resize(static_cast<std::size_t>(j_count));
      for (Eigen::Index j = 0; j < j_count; ++j) {
        OutcomeEffect& eff = res.effects[static_cast<std::size_t>(j)];
        eff.estimate = report.estimate[j];
        eff.se = std::sqrt(var.variance[j] / n_used);
        eff.p = var.informative[static_cast<std::size_t>(j)]
                    ? two_sided_normal_p(var.t[j])
                    : std::numeric_limits<double>::quiet_NaN();
      }
    } else {
      const int n_used = res.used_subjects;
      Eigen::VectorXd a(n_used), med(n_used);
      const Eigen::Index q = sim.data.subjects.front().confounders.size();
      Eigen::MatrixXd w(n_used, q);
      Eigen::MatrixXd y(n_used, j_count);
      Eigen::Index r = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!derived.usable[i]) continue;
        const SubjectRecord& s = sim.data.subjects[i];
        a[r] = static_cast<double>(s.treatment);
        med[r] = s.mediator;
        w.row(r) = s.confounders.transpose();
        y.row(r) = derived.outcomes.values.row(static_cast<Eigen::Index>(i));
        ++r;
      }
      const Eigen::VectorXd* m_col =
          pipe.inter == InterStage::linear_treat_med_conf ? &med : nullptr;
      res.effects.resize(static_cast<std::size_t>(j_count));
      for (Eigen::Index j = 0; j < j_count; ++j)
        res.effects[static_cast<std::size_t>(j)] =
            linear_effect(y.col(j), a, w, m_col);
    }
  } catch (const std::exception& e) {
    res.failed = true;
    res.failure = e.what();
    res.effects.clear();
  }
  return res;
}

// --- replication runner -------------------------------------------------

struct ReplicationConfig {
  DgpConfig dgp;               // seed field is ignored; per-rep seeds derive
  int reps = 100;              // from base_seed and the replication index
  std::uint64_t base_seed = 1;
  Eigen::VectorXd truth = (Eigen::VectorXd(2) << 0.3, 0.0).finished();
  HarnessOptions options;
};

struct ReplicationRecord {
  int rep = 0;
  std::string label;
  std::vector<OutcomeEffect> effects;
  bool failed = false;
  std::string failure;
  int excluded_subjects = 0;
};

struct MetricsCell {
  std::string label;
  int outcome = 0;  // 0-based derived-outcome index
  double truth = 0.0;
  double bias = 0.0;
  double sd = 0.0;
  double mse = 0.0;
  double rejection_rate = 0.0;  // two-sided test of zero effect
  int replications = 0;         // successful replications included
  int failed = 0;
  long excluded_subjects = 0;   // summed over successful replications
};

struct MetricsTable {
  std::vector<MetricsCell> cells;        // pipeline-major, outcome-minor
  std::vector<ReplicationRecord> records;  // replication-major, pipeline-minor
  std::vector<std::string> failures;     // "rep <r> / <label>: <message>"
};

inline MetricsTable replicate(const ReplicationConfig& cfg,
                              const std::vector<MethodPipeline>& pipelines) {
  if (cfg.reps < 2)
    throw std::invalid_argument("replicate: need at least 2 replications");
  if (pipelines.empty())
    throw std::invalid_argument("replicate: no pipelines given");
  if (cfg.truth.size() < 1)
    throw std::invalid_argument("replicate: empty truth vector");
  if (!(cfg.options.alpha > 0.0 && cfg.options.alpha < 1.0))
    throw std::invalid_argument("replicate: alpha must lie in (0,1)");

  const std::size_t p_count = pipelines.size();
  std::vector<std::vector<PipelineResult>> results(
      static_cast<std::size_t>(cfg.reps));

  parallel_for(static_cast<std::size_t>(cfg.reps), [&](std::size_t r) {
    DgpConfig dgp = cfg.dgp;
    const std::uint64_t rep_seed =
        mix_seed(cfg.base_seed, static_cast<std::uint64_t>(r));
    dgp.seed = rep_seed;
    const SimulatedCohort sim = gen_cohort(dgp);
    std::vector<PipelineResult>& row = results[r];
    row.reserve(p_count);
    for (std::size_t p = 0; p < p_count; ++p) {
      HarnessOptions opt = cfg.options;
      opt.intra.seed = mix_seed(rep_seed, 1000 + static_cast<std::uint64_t>(p));
      opt.estimator.seed =
          mix_seed(rep_seed, 2000 + static_cast<std::uint64_t>(p));
      row.push_back(run_pipeline(sim, pipelines[p], opt));
    }
  });

  MetricsTable table;
  table.records.reserve(static_cast<std::size_t>(cfg.reps) * p_count);
  Eigen::Index j_count = -1;
  for (int r = 0; r < cfg.reps; ++r) {
    for (std::size_t p = 0; p < p_count; ++p) {
      const PipelineResult& res = results[static_cast<std::size_t>(r)][p];
      ReplicationRecord rec;
      rec.rep = r;
      rec.label = res.label;
      rec.effects = res.effects;
      rec.failed = res.failed;
      rec.failure = res.failure;
      rec.excluded_subjects = res.excluded_subjects;
      table.records.push_back(std::move(rec));
      if (res.failed)
        table.failures.push_back("rep " + std::to_string(r) + " / " +
                                 res.label + ": " + res.failure);
      else if (j_count < 0)
        j_count = static_cast<Eigen::Index>(res.effects.size());
    }
  }
  if (j_count < 0)
    throw std::runtime_error("replicate: every replication failed");
  if (cfg.truth.size() > j_count)
    throw std::invalid_argument(
        "replicate: truth vector longer than the derived-outcome count");

  for (std::size_t p = 0; p < p_count; ++p) {
    std::vector<const PipelineResult*> ok;
    int failed = 0;
    long excluded = 0;
    for (int r = 0; r < cfg.reps; ++r) {
      const PipelineResult& res = results[static_cast<std::size_t>(r)][p];
      if (res.failed) {
        ++failed;
        continue;
      }
      ok.push_back(&res);
      excluded += res.excluded_subjects;
    }
    for (Eigen::Index j = 0; j < cfg.truth.size(); ++j) {
      MetricsCell cell;
      cell.label = pipelines[p].label;
      cell.outcome = static_cast<int>(j);
      cell.truth = cfg.truth[j];
      cell.replications = static_cast<int>(ok.size());
      cell.failed = failed;
      cell.excluded_subjects = excluded;
      if (ok.size() >= 2) {
        const double rn = static_cast<double>(ok.size());
        double mean = 0.0, mse = 0.0;
        int rejections = 0;
        for (const PipelineResult* res : ok) {
          const OutcomeEffect& eff = res->effects[static_cast<std::size_t>(j)];
          mean += eff.estimate;
          const double dev = eff.estimate - cfg.truth[j];
          mse += dev * dev;
          if (eff.p < cfg.options.alpha) ++rejections;  // NaN never rejects
        }
        mean /= rn;
        mse /= rn;
        double ss = 0.0;
        for (const PipelineResult* res : ok) {
          const double d =
              res->effects[static_cast<std::size_t>(j)].estimate - mean;
          ss += d * d;
        }
        cell.bias = mean - cfg.truth[j];
        cell.sd = std::sqrt(ss / (rn - 1.0));
        cell.mse = mse;
        cell.rejection_rate = static_cast<double>(rejections) / rn;
      } else {
        cell.bias = cell.sd = cell.mse = cell.rejection_rate =
            std::numeric_limits<double>::quiet_NaN();
      }
      table.cells.push_back(std::move(cell));
    }
  }
  return table;
}

}  // namespace medrobust
