#pragma once
// Bias diagnostics for derived outcomes on simulated cohorts.
//
// The generator keeps each subject's ground truth (target outcome values and
// the exact artifact series mixed into the responses), which lets us compare
// three versions of the derived outcome vector at any series length:
//
//   derived   — outcome functional applied to residuals from a FITTED
//               nuisance-removal step (the production path),
//   reference — the same functional applied to residuals obtained with the
//               TRUE artifact series subtracted,
//   truth     — the outcome values the generator targeted.
//
// The aggregate error (derived − truth) then splits exactly into a
// removal part (derived − reference: error of the fitted removal step) and a
// sampling part (reference − truth: finite-length error of the outcome
// functional itself). Only simulated cohorts carry the inputs needed here;
// calling this on data without stored truth is an error.

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "medrobust/core.hpp"
#include "medrobust/intra.hpp"
#include "medrobust/outcomes.hpp"
#include "medrobust/parallel.hpp"
#include "medrobust/rng.hpp"
#include "medrobust/simulation.hpp"

namespace medrobust {

// Which nuisance-removal step the "derived" column uses.
enum class IntraFit {
  known_truth,     // subtract the stored artifact series (no fitting)
  parametric_12p,  // linear fit on the 12-column motion expansion
  ensemble,        // stacked learners on motion features
};

inline std::string intra_fit_label(IntraFit kind) {
  switch (kind) {
    case IntraFit::known_truth: return "known-truth";
    case IntraFit::parametric_12p: return "12p-linear";
    case IntraFit::ensemble: return "ensemble";
  }
  throw std::logic_error("intra_fit_label: unknown kind");
}

struct BiasDiagnosticOptions {
  IntraFit intra = IntraFit::parametric_12p;
  std::vector<LearnerSpec> ensemble_library = default_intra_library();
  int ensemble_folds = 5;
  std::uint64_t seed = 1;
  double clamp_eps = 1e-7;
};

struct BiasDiagnosticRow {
  int t_length = 0;
  // max over outcomes of |mean over subjects| — element-wise bias scale.
  double total_bias = 0.0;     // derived vs truth
  double removal_bias = 0.0;   // derived vs reference (fitted-removal error)
  double sampling_bias = 0.0;  // reference vs truth (finite-length error)
  // mean over subjects of the per-subject worst absolute deviation.
  double worst_error_mean = 0.0;
  int subjects_used = 0;
  int subjects_dropped = 0;
};

struct BiasDiagnosticTable {
  std::vector<BiasDiagnosticRow> rows;  // one per grid length, input order
  std::vector<std::string> warnings;
};

namespace detail {

// Residuals after subtracting the stored scalar artifact from every region.
inline Eigen::MatrixXd truth_residuals(const Eigen::MatrixXd& x,
                                       const Eigen::VectorXd& artifact) {
  return x - artifact.transpose().replicate(x.rows(), 1);
}

}  // namespace detail

inline BiasDiagnosticTable derived_bias_diagnostic(
    const SimulatedCohort& cohort, const std::vector<int>& t_grid,
    const BiasDiagnosticOptions& opt = {}) {
  const std::size_t n = cohort.data.subjects.size();
  if (n == 0) throw std::invalid_argument("bias diagnostic: empty cohort");
  if (cohort.truth.size() != n)
    throw std::runtime_error(
        "bias diagnostic requires simulated data with stored ground truth; "
        "cohorts without truth records are not supported");
  if (t_grid.empty())
    throw std::invalid_argument("bias diagnostic: empty length grid");
  const int min_t =
      opt.intra == IntraFit::ensemble ? 10 * opt.ensemble_folds : 30;
  for (int t : t_grid) {
    if (t < min_t)
      throw std::invalid_argument(
          "bias diagnostic: grid length below the minimum of " +
          std::to_string(min_t) + " frames for this removal method");
    if (t > cohort.config.t)
      throw std::invalid_argument(
          "bias diagnostic: grid length exceeds the simulated series length");
  }
  const int v_count = static_cast<int>(cohort.data.subjects.front().response.rows());
  const auto pairs = pair_index(v_count);
  const Eigen::Index j_count = static_cast<Eigen::Index>(pairs.size());
  for (const SubjectRecord& s : cohort.data.subjects)
    if (s.response.rows() != v_count)
      throw std::invalid_argument(
          "bias diagnostic: subjects disagree on the region count");
  for (const SubjectTruth& tr : cohort.truth) {
    if (tr.region_outcomes.size() != j_count)
      throw std::runtime_error(
          "bias diagnostic: stored truth does not cover every outcome pair");
    if (tr.contamination.size() != cohort.config.t)
      throw std::runtime_error(
          "bias diagnostic: stored artifact series has the wrong length");
  }

  BiasDiagnosticTable table;
  table.rows.reserve(t_grid.size());
  for (std::size_t g = 0; g < t_grid.size(); ++g) {
    const int t = t_grid[g];
    Eigen::MatrixXd derived(static_cast<Eigen::Index>(n), j_count);
    Eigen::MatrixXd reference(static_cast<Eigen::Index>(n), j_count);
    std::vector<char> usable(n, 0);
    parallel_for(n, [&](std::size_t i) {
      const SubjectRecord& subj = cohort.data.subjects[i];
      const Eigen::MatrixXd x = subj.response.leftCols(t);
      const Eigen::MatrixXd truth_resid =
          detail::truth_residuals(x, cohort.truth[i].contamination.head(t));
      try {
        const Eigen::VectorXd ref = derive_fc(truth_resid, opt.clamp_eps);
        Eigen::VectorXd dev;
        switch (opt.intra) {
          case IntraFit::known_truth:
            dev = ref;  // same residual matrix: removal error identically zero
            break;
          case IntraFit::parametric_12p: {
            const Eigen::MatrixXd h = subj.nuisance.leftCols(t);
            dev = derive_fc(linear_residuals(x, expand_12p(h)).values,
                            opt.clamp_eps);
            break;
          }
          case IntraFit::ensemble: {
            const Eigen::MatrixXd h = subj.nuisance.leftCols(t);
            const ResidualSeries resid = ensemble_residuals(
                x, ensemble_features(h).columns, opt.ensemble_library,
                opt.ensemble_folds,
                mix_seed(opt.seed, static_cast<std::uint64_t>(
                                       g * n + static_cast<std::size_t>(i))));
            dev = derive_fc(resid.values, opt.clamp_eps);
            break;
          }
        }
        derived.row(static_cast<Eigen::Index>(i)) = dev.transpose();
        reference.row(static_cast<Eigen::Index>(i)) = ref.transpose();
        usable[i] = 1;
      } catch (const DegenerateSeriesError&) {
        usable[i] = 0;  // zero-variance residual row at this length
      }
    });

    BiasDiagnosticRow row;
    row.t_length = t;
    Eigen::VectorXd sum_derived = Eigen::VectorXd::Zero(j_count);
    Eigen::VectorXd sum_reference = Eigen::VectorXd::Zero(j_count);
    Eigen::VectorXd sum_truth = Eigen::VectorXd::Zero(j_count);
    double sum_worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!usable[i]) {
        ++row.subjects_dropped;
        continue;
      }
      const Eigen::Index r = static_cast<Eigen::Index>(i);
      sum_derived += derived.row(r).transpose();
      sum_reference += reference.row(r).transpose();
      sum_truth += cohort.truth[i].region_outcomes;
      sum_worst += (derived.row(r).transpose() - cohort.truth[i].region_outcomes)
                       .cwiseAbs()
                       .maxCoeff();
      ++row.subjects_used;
    }
    if (row.subjects_used == 0)
      throw std::runtime_error(
          "bias diagnostic: every subject was degenerate at length " +
          std::to_string(t));
    if (row.subjects_dropped > 0)
      table.warnings.push_back("length " + std::to_string(t) + ": dropped " +
                               std::to_string(row.subjects_dropped) +
                               " degenerate subjects");
    const double m = static_cast<double>(row.subjects_used);
    row.total_bias = ((sum_derived - sum_truth) / m).cwiseAbs().maxCoeff();
    row.removal_bias = ((sum_derived - sum_reference) / m).cwiseAbs().maxCoeff();
    row.sampling_bias = ((sum_reference - sum_truth) / m).cwiseAbs().maxCoeff();
    row.worst_error_mean = sum_worst / m;
    table.rows.push_back(row);
  }
  return table;
}

}  // namespace medrobust
