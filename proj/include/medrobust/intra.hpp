#pragma once

// Intra-subject processing: nuisance design expansion, framewise
// displacement, scrubbing, and per-region nuisance removal by least
// squares.  Everything here operates on one subject's series at a time;
// cross-subject machinery lives elsewhere.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "medrobust/learners.hpp"

namespace medrobust {

// Time-major design matrix (T x d) expanded from a p x T nuisance series.
struct NuisanceDesign {
  Eigen::MatrixXd columns;
  std::vector<std::string> labels;
};

// First differences along time with a zero leading column, same shape.
inline Eigen::MatrixXd first_differences(const Eigen::MatrixXd& series) {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(series.rows(), series.cols());
  if (series.cols() > 1)
    d.rightCols(series.cols() - 1) =
        series.rightCols(series.cols() - 1) - series.leftCols(series.cols() - 1);
  return d;
}

namespace detail {

// intercept + mains + derivatives + squared mains + squared derivatives
inline NuisanceDesign expand_quadratic(const Eigen::MatrixXd& h) {
  const auto p = h.rows();
  const auto t = h.cols();
  const Eigen::MatrixXd dh = first_differences(h);
  NuisanceDesign design;
  design.columns.resize(t, 1 + 4 * p);
  design.columns.col(0).setOnes();
  design.labels.push_back("intercept");
  for (int k = 0; k < p; ++k) {
    design.columns.col(1 + k) = h.row(k).transpose();
    design.labels.push_back("h" + std::to_string(k + 1));
  }
  for (int k = 0; k < p; ++k) {
    design.columns.col(1 + p + k) = dh.row(k).transpose();
    design.labels.push_back("dh" + std::to_string(k + 1));
  }
  for (int k = 0; k < p; ++k) {
    design.columns.col(1 + 2 * p + k) = h.row(k).transpose().array().square();
    design.labels.push_back("h" + std::to_string(k + 1) + "_sq");
  }
  for (int k = 0; k < p; ++k) {
    design.columns.col(1 + 3 * p + k) = dh.row(k).transpose().array().square();
    design.labels.push_back("dh" + std::to_string(k + 1) + "_sq");
  }
  return design;
}

}  // namespace detail

// The 12-regressor motion model (plus intercept): requires exactly 3
// nuisance channels and yields 13 columns.
inline NuisanceDesign expand_12p(const Eigen::MatrixXd& h) {
  if (h.rows() != 3)
    throw std::invalid_argument("expand_12p: needs exactly 3 nuisance channels");
  if (h.cols() < 2)
    throw std::invalid_argument("expand_12p: series too short");
  return detail::expand_quadratic(h);
}

// Same expansion for any channel count: 1 + 4p columns.
inline NuisanceDesign expand_full(const Eigen::MatrixXd& h) {
  if (h.rows() < 1)
    throw std::invalid_argument("expand_full: needs at least 1 nuisance channel");
  if (h.cols() < 2)
    throw std::invalid_argument("expand_full: series too short");
  return detail::expand_quadratic(h);
}

enum class FdMode {
  abs_sum,       // per-frame sum of |channel| values
  diff_abs_sum,  // per-frame sum of |first difference|, zero at t=0
};

inline Eigen::VectorXd framewise_displacement(const Eigen::MatrixXd& h, FdMode mode) {
  if (h.rows() < 1 || h.cols() < 1)
    throw std::invalid_argument("framewise_displacement: empty series");
  if (mode == FdMode::abs_sum) return h.cwiseAbs().colwise().sum().transpose();
  return first_differences(h).cwiseAbs().colwise().sum().transpose();
}

struct ScrubResult {
  std::vector<int> kept_indices;  // 0-based frame positions retained
  double removed_fraction = 0.0;
  bool excluded = false;  // subject removed when too much of the series is lost
};

struct ScrubbedSeries {
  Eigen::MatrixXd response;
  Eigen::MatrixXd nuisance;
  ScrubResult info;
};

// Keeps exactly the frames with fd <= threshold; flags the subject as
// excluded when the removed fraction exceeds max_removed_frac.
inline ScrubbedSeries scrub(const Eigen::MatrixXd& x, const Eigen::MatrixXd& h,
                            const Eigen::VectorXd& fd, double threshold,
                            double max_removed_frac) {
  const auto t = x.cols();
  if (h.cols() != t || fd.size() != t)
    throw std::invalid_argument("scrub: response, nuisance, fd lengths differ");
  if (!(threshold > 0.0))
    throw std::invalid_argument("scrub: threshold must be positive");
  ScrubbedSeries out;
  out.info.kept_indices.reserve(static_cast<std::size_t>(t));
  for (int i = 0; i < t; ++i)
    if (fd[i] <= threshold) out.info.kept_indices.push_back(i);
  const auto kept = static_cast<Eigen::Index>(out.info.kept_indices.size());
  out.info.removed_fraction =
      static_cast<double>(t - kept) / static_cast<double>(t);
  out.info.excluded = out.info.removed_fraction > max_removed_frac;
  out.response.resize(x.rows(), kept);
  out.nuisance.resize(h.rows(), kept);
  for (Eigen::Index i = 0; i < kept; ++i) {
    out.response.col(i) = x.col(out.info.kept_indices[static_cast<std::size_t>(i)]);
    out.nuisance.col(i) = h.col(out.info.kept_indices[static_cast<std::size_t>(i)]);
  }
  return out;
}

// Per-region residual series after nuisance removal.
struct ResidualSeries {
  Eigen::MatrixXd values;  // V x T'
  int design_rank = 0;
  int dropped_columns = 0;
  std::vector<std::string> warnings;
};

// Ordinary least squares of every response row on the design, via a
// rank-revealing factorization; linearly dependent columns are dropped
// (relative pivot threshold 1e-10) with a warning.
inline ResidualSeries linear_residuals(const Eigen::MatrixXd& x,
                                       const NuisanceDesign& design) {
  const auto t = x.cols();
  const auto d = design.columns.cols();
  if (design.columns.rows() != t)
    throw std::invalid_argument("linear_residuals: design length differs from series");
  if (t <= d)
    throw std::invalid_argument("linear_residuals: series shorter than design width");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design.columns);
  qr.setThreshold(1e-10);
  ResidualSeries out;
  out.design_rank = static_cast<int>(qr.rank());
  out.dropped_columns = static_cast<int>(d) - out.design_rank;
  if (out.dropped_columns > 0)
    out.warnings.push_back("dropped " + std::to_string(out.dropped_columns) +
                           " linearly dependent design columns");
  out.values.resize(x.rows(), t);
  for (Eigen::Index v = 0; v < x.rows(); ++v) {
    const Eigen::VectorXd beta = qr.solve(x.row(v).transpose());
    out.values.row(v) =
        (x.row(v).transpose() - design.columns * beta).transpose();
  }
  return out;
}

// Feature matrix for ensemble nuisance regression: main terms plus their
// first-difference derivatives (T x 2p), no intercept column (every learner
// carries its own).
inline NuisanceDesign ensemble_features(const Eigen::MatrixXd& h) {
  const auto p = h.rows();
  const auto t = h.cols();
  const Eigen::MatrixXd dh = first_differences(h);
  NuisanceDesign design;
  design.columns.resize(t, 2 * p);
  for (int k = 0; k < p; ++k) {
    design.columns.col(k) = h.row(k).transpose();
    design.labels.push_back("h" + std::to_string(k + 1));
  }
  for (int k = 0; k < p; ++k) {
    design.columns.col(p + k) = dh.row(k).transpose();
    design.labels.push_back("dh" + std::to_string(k + 1));
  }
  return design;
}

struct EnsembleResidualReport {
  ResidualSeries residuals;
  std::vector<StackedModel> stacks;  // one per response row
};

// Canonical learner library for intra-subject nuisance regression: the
// interaction learner captures smooth nuisance products, the bagged trees
// capture threshold effects.
inline std::vector<LearnerSpec> default_intra_library() {
  std::vector<LearnerSpec> lib;
  lib.push_back({LearnerKind::mean});
  lib.push_back({LearnerKind::linear});
  lib.push_back({LearnerKind::interaction_linear});
  lib.push_back({LearnerKind::bagged_tree});
  return lib;
}

// Stacked-ensemble nuisance removal: each response row is regressed on the
// features with cross-validated stacking over contiguous time blocks (serial
// dependence makes shuffled folds leak), and the in-sample stacked prediction
// is subtracted. Residual rows are recentered afterwards: learners fit on
// bootstrap subsamples need not leave exactly mean-zero in-sample residuals,
// and the downstream correlations are translation invariant.
inline EnsembleResidualReport ensemble_residuals_detailed(
    const Eigen::MatrixXd& x, const Eigen::MatrixXd& features,
    const std::vector<LearnerSpec>& library, int folds, std::uint64_t seed) {
  const auto t = x.cols();
  if (features.rows() != t)
    throw std::invalid_argument("ensemble_residuals: feature length differs from series");
  if (folds < 2) throw std::invalid_argument("ensemble_residuals: need at least 2 folds");
  if (t < 10 * static_cast<Eigen::Index>(folds))
    throw std::invalid_argument("ensemble_residuals: series shorter than 10 time points per fold");

  EnsembleResidualReport report;
  ResidualSeries& out = report.residuals;
  std::vector<Eigen::Index> kept;
  for (Eigen::Index k = 0; k < features.cols(); ++k) {
    if (features.col(k).maxCoeff() - features.col(k).minCoeff() > 1e-12)
      kept.push_back(k);
  }
  if (kept.size() < static_cast<size_t>(features.cols()))
    out.warnings.push_back("dropped " +
                           std::to_string(features.cols() - static_cast<Eigen::Index>(kept.size())) +
                           " zero-variance feature columns");
  out.design_rank = static_cast<int>(kept.size());
  out.dropped_columns = static_cast<int>(features.cols()) - out.design_rank;
  out.values.resize(x.rows(), t);

  if (kept.empty()) {
    out.warnings.push_back("no usable features; residuals are centered responses");
    for (Eigen::Index v = 0; v < x.rows(); ++v)
      out.values.row(v) = x.row(v).array() - x.row(v).mean();
    return report;
  }
  Eigen::MatrixXd f(t, static_cast<Eigen::Index>(kept.size()));
  for (size_t k = 0; k < kept.size(); ++k) f.col(static_cast<Eigen::Index>(k)) = features.col(kept[k]);

  for (Eigen::Index v = 0; v < x.rows(); ++v) {
    StackedModel stack = cv_stack(library, f, x.row(v).transpose(), folds,
                                  mix_seed(seed, static_cast<std::uint64_t>(v)), Task::regression,
                                  FoldScheme::contiguous);
    const Eigen::VectorXd fitted = stack.predict(f);
    Eigen::RowVectorXd resid = x.row(v) - fitted.transpose();
    resid.array() -= resid.mean();
    out.values.row(v) = resid;
    for (const std::string& w : stack.warnings) out.warnings.push_back(w);
    report.stacks.push_back(std::move(stack));
  }
  return report;
}

inline ResidualSeries ensemble_residuals(const Eigen::MatrixXd& x, const Eigen::MatrixXd& features,
                                         const std::vector<LearnerSpec>& library, int folds,
                                         std::uint64_t seed) {
  return ensemble_residuals_detailed(x, features, library, folds, seed).residuals;
}

}  // namespace medrobust
