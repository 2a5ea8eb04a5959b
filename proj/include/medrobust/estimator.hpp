#pragma once

// Cross-fitted nuisance estimation and the multiply robust AIPW estimator of
// the counterfactual means psi(a,a') and their contrasts (NDE, NIE, ATE),
// with per-subject influence values.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "medrobust/core.hpp"
#include "medrobust/learners.hpp"
#include "medrobust/rng.hpp"

namespace medrobust {

enum class TargetKind { psi, nde, nie, ate };

struct CausalTarget {
  TargetKind kind = TargetKind::nde;
  int a = 1;        // used by psi targets only
  int a_prime = 0;

  static CausalTarget psi(int a, int a_prime) {
    if ((a != 0 && a != 1) || (a_prime != 0 && a_prime != 1))
      throw std::invalid_argument("psi target: treatment levels must be 0 or 1");
    return {TargetKind::psi, a, a_prime};
  }
  static CausalTarget nde() { return {TargetKind::nde, 1, 0}; }
  static CausalTarget nie() { return {TargetKind::nie, 1, 1}; }
  static CausalTarget ate() { return {TargetKind::ate, 1, 1}; }

  std::string label() const {
    switch (kind) {
      case TargetKind::psi:
        return "psi(" + std::to_string(a) + "," + std::to_string(a_prime) + ")";
      case TargetKind::nde: return "nde";
      case TargetKind::nie: return "nie";
      case TargetKind::ate: return "ate";
    }
    throw std::logic_error("unknown target kind");
  }
};

// Accepts "nde", "nie", "ate", and "psi:a:a'" with a, a' in {0,1}.
inline CausalTarget parse_target(const std::string& text) {
  if (text == "nde") return CausalTarget::nde();
  if (text == "nie") return CausalTarget::nie();
  if (text == "ate") return CausalTarget::ate();
  if (text.rfind("psi:", 0) == 0 && text.size() == 7 && text[5] == ':') {
    const char ca = text[4];
    const char cap = text[6];
    if ((ca == '0' || ca == '1') && (cap == '0' || cap == '1'))
      return CausalTarget::psi(ca - '0', cap - '0');
  }
  throw std::invalid_argument("unknown target '" + text + "' (expected nde, nie, ate, or psi:a:a')");
}

struct CrossFitPlan {
  int folds = 5;               // effective fold count (may be reduced)
  std::vector<int> fold_of;    // per subject position
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

// Treatment-stratified fold assignment: within each arm, positions are
// shuffled and dealt round-robin; the control arm's deal is rotated so the
// two arms' remainder folds do not pile onto the same folds, keeping total
// fold sizes within one of each other.
inline CrossFitPlan make_folds(Eigen::Index n, int folds, const Eigen::VectorXd& treatment,
                               std::uint64_t seed) {
  if (treatment.size() != n) throw std::invalid_argument("make_folds: treatment length != n");
  std::vector<std::uint64_t> arm1, arm0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (treatment(i) == 1.0)
      arm1.push_back(std::uint64_t(i));
    else if (treatment(i) == 0.0)
      arm0.push_back(std::uint64_t(i));
    else
      throw std::invalid_argument("make_folds: treatment values must be 0 or 1");
  }
  if (arm1.empty() || arm0.empty()) throw std::invalid_argument("make_folds: a treatment arm is empty");

  CrossFitPlan plan;
  plan.seed = seed;
  plan.folds = folds;
  const int smallest_arm = int(std::min(arm1.size(), arm0.size()));
  if (plan.folds > smallest_arm) {
    plan.folds = smallest_arm;
    plan.warnings.push_back("fold count reduced to " + std::to_string(plan.folds) +
                            " (an arm has only that many subjects)");
  }
  if (plan.folds < 2) throw std::invalid_argument("make_folds: need at least 2 subjects per arm");
  if (n < 2 * Eigen::Index(plan.folds)) throw std::invalid_argument("make_folds: need at least 2K subjects");

  CounterRng rng(seed, 0);
  shuffle(arm1, rng);
  shuffle(arm0, rng);
  plan.fold_of.assign(size_t(n), 0);
  const int k = plan.folds;
  const int r1 = int(arm1.size()) % k;
  for (size_t pos = 0; pos < arm1.size(); ++pos) plan.fold_of[size_t(arm1[pos])] = int(pos % size_t(k));
  for (size_t pos = 0; pos < arm0.size(); ++pos)
    plan.fold_of[size_t(arm0[pos])] = int((pos + size_t(r1)) % size_t(k));
  return plan;
}

// Per-fold nuisance models: treatment propensities given W and given (M, W),
// a per-outcome regression of Yhat_j on (A, M, W), and per (j, a) the
// sequential regression of the pseudo-outcome b_j(M_i, a, W_i) on (A, W).
struct NuisanceFits {
  StackedModel prop_w;
  StackedModel prop_mw;
  std::vector<StackedModel> outcome_models;                // per j
  std::array<std::vector<StackedModel>, 2> seqreg_models;  // [a][j]
  std::vector<std::string> warnings;
};

struct StackOptions {
  std::vector<LearnerSpec> regression_library = default_library(Task::regression);
  std::vector<LearnerSpec> binary_library = default_library(Task::binary_prob);
  int stack_folds = 5;
};

namespace detail {

inline Eigen::MatrixXd bind_cols(std::initializer_list<const Eigen::MatrixXd*> parts) {
  Eigen::Index cols = 0;
  Eigen::Index rows = -1;
  for (const auto* p : parts) {
    cols += p->cols();
    rows = p->rows();
  }
  Eigen::MatrixXd out(rows, cols);
  Eigen::Index at = 0;
  for (const auto* p : parts) {
    out.middleCols(at, p->cols()) = *p;
    at += p->cols();
  }
  return out;
}

inline StackedModel fit_component(const std::vector<LearnerSpec>& lib, const Eigen::MatrixXd& x,
                                  const Eigen::VectorXd& y, int folds, std::uint64_t seed, Task task,
                                  const std::string& component) {
  try {
    return cv_stack(lib, x, y, folds, seed, task);
  } catch (const std::exception& e) {
    throw std::runtime_error("nuisance fit failed (" + component + "): " + e.what());
  }
}

}  // namespace detail

inline NuisanceFits fit_nuisances(const Eigen::MatrixXd& w, const Eigen::VectorXd& a,
                                  const Eigen::VectorXd& m, const Eigen::MatrixXd& yhat,
                                  const StackOptions& so, std::uint64_t seed) {
  const Eigen::Index n = w.rows();
  if (a.size() != n || m.size() != n || yhat.rows() != n)
    throw std::invalid_argument("fit_nuisances: mismatched row counts");
  if (!yhat.allFinite()) throw std::invalid_argument("fit_nuisances: non-finite derived outcomes");
  const Eigen::Index j_count = yhat.cols();

  const Eigen::MatrixXd m_col = m;
  const Eigen::MatrixXd a_col = a;
  const Eigen::MatrixXd x_mw = detail::bind_cols({&m_col, &w});
  const Eigen::MatrixXd x_amw = detail::bind_cols({&a_col, &m_col, &w});
  const Eigen::MatrixXd x_aw = detail::bind_cols({&a_col, &w});

  NuisanceFits fits;
  std::uint64_t salt = 0;
  fits.prop_w = detail::fit_component(so.binary_library, w, a, so.stack_folds,
                                      mix_seed(seed, salt++), Task::binary_prob, "prop_w");
  fits.prop_mw = detail::fit_component(so.binary_library, x_mw, a, so.stack_folds,
                                       mix_seed(seed, salt++), Task::binary_prob, "prop_mw");

  fits.outcome_models.reserve(size_t(j_count));
  for (Eigen::Index j = 0; j < j_count; ++j) {
    fits.outcome_models.push_back(detail::fit_component(
        so.regression_library, x_amw, yhat.col(j), so.stack_folds, mix_seed(seed, salt++),
        Task::regression, "outcome model j=" + std::to_string(j)));
  }
  for (int av = 0; av <= 1; ++av) {
    fits.seqreg_models[size_t(av)].reserve(size_t(j_count));
    Eigen::MatrixXd x_pseudo = x_amw;
    x_pseudo.col(0).setConstant(double(av));
    for (Eigen::Index j = 0; j < j_count; ++j) {
      const Eigen::VectorXd pseudo = fits.outcome_models[size_t(j)].predict(x_pseudo);
      fits.seqreg_models[size_t(av)].push_back(detail::fit_component(
          so.regression_library, x_aw, pseudo, so.stack_folds, mix_seed(seed, salt++),
          Task::regression,
          "sequential model j=" + std::to_string(j) + ",a=" + std::to_string(av)));
    }
  }
  for (const auto& wmsg : fits.prop_w.warnings) fits.warnings.push_back("prop_w: " + wmsg);
  for (const auto& wmsg : fits.prop_mw.warnings) fits.warnings.push_back("prop_mw: " + wmsg);
  return fits;
}

// Cross-fitted nuisance evaluations for every subject, each produced by the
// fold model that did not train on that subject.
struct CrossFitNuisances {
  Eigen::VectorXd pw;                  // P(A=1 | W_i)
  Eigen::VectorXd pmw;                 // P(A=1 | M_i, W_i)
  std::array<Eigen::MatrixXd, 2> b;    // [a]: n x J, b_j(M_i, a, W_i)
  std::array<Eigen::MatrixXd, 4> xi;   // [2a+a']: n x J, xi_{a,a',j}(W_i)
  CrossFitPlan plan;
  std::vector<std::string> warnings;
};

inline CrossFitNuisances cross_fit_nuisances(const Eigen::MatrixXd& w, const Eigen::VectorXd& a,
                                             const Eigen::VectorXd& m, const Eigen::MatrixXd& yhat,
                                             const CrossFitPlan& plan, const StackOptions& so,
                                             std::uint64_t seed) {
  const Eigen::Index n = w.rows();
  const Eigen::Index j_count = yhat.cols();
  if (Eigen::Index(plan.fold_of.size()) != n)
    throw std::invalid_argument("cross_fit_nuisances: fold plan does not cover the subjects");
  for (int f : plan.fold_of) {
    if (f < 0 || f >= plan.folds)
      throw std::invalid_argument("cross_fit_nuisances: fold plan references a missing fold model");
  }
  CrossFitNuisances out;
  out.plan = plan;
  out.pw.resize(n);
  out.pmw.resize(n);
  for (int av = 0; av <= 1; ++av) out.b[size_t(av)].resize(n, j_count);
  for (int s = 0; s < 4; ++s) out.xi[size_t(s)].resize(n, j_count);

  for (int k = 0; k < plan.folds; ++k) {
    std::vector<Eigen::Index> train, test;
    for (Eigen::Index i = 0; i < n; ++i) (plan.fold_of[size_t(i)] == k ? test : train).push_back(i);
    if (test.empty()) continue;
    Eigen::MatrixXd w_tr(Eigen::Index(train.size()), w.cols());
    Eigen::VectorXd a_tr(Eigen::Index(train.size())), m_tr(Eigen::Index(train.size()));
    Eigen::MatrixXd y_tr(Eigen::Index(train.size()), j_count);
    for (size_t r = 0; r < train.size(); ++r) {
      w_tr.row(Eigen::Index(r)) = w.row(train[r]);
      a_tr(Eigen::Index(r)) = a(train[r]);
      m_tr(Eigen::Index(r)) = m(train[r]);
      y_tr.row(Eigen::Index(r)) = yhat.row(train[r]);
    }
    bool both_arms = false;
    for (size_t r = 1; r < train.size(); ++r) both_arms = both_arms || a_tr(Eigen::Index(r)) != a_tr(0);
    if (!both_arms) throw std::runtime_error("cross_fit_nuisances: a training split lost a treatment arm");

    const NuisanceFits fits = fit_nuisances(w_tr, a_tr, m_tr, y_tr, so, mix_seed(seed, std::uint64_t(k)));
    for (const auto& msg : fits.warnings) out.warnings.push_back("fold " + std::to_string(k) + ": " + msg);

    Eigen::MatrixXd w_te(Eigen::Index(test.size()), w.cols());
    Eigen::VectorXd m_te(Eigen::Index(test.size()));
    for (size_t r = 0; r < test.size(); ++r) {
      w_te.row(Eigen::Index(r)) = w.row(test[r]);
      m_te(Eigen::Index(r)) = m(test[r]);
    }
    const Eigen::MatrixXd m_te_col = m_te;
    const Eigen::MatrixXd pw_te = detail::bind_cols({&w_te});
    const Eigen::VectorXd pw_pred = fits.prop_w.predict(pw_te);
    const Eigen::MatrixXd x_mw_te = detail::bind_cols({&m_te_col, &w_te});
    const Eigen::VectorXd pmw_pred = fits.prop_mw.predict(x_mw_te);
    for (size_t r = 0; r < test.size(); ++r) {
      out.pw(test[r]) = pw_pred(Eigen::Index(r));
      out.pmw(test[r]) = pmw_pred(Eigen::Index(r));
    }
    for (int av = 0; av <= 1; ++av) {
      Eigen::MatrixXd x_b(Eigen::Index(test.size()), 2 + w.cols());
      x_b.col(0).setConstant(double(av));
      x_b.col(1) = m_te;
      x_b.rightCols(w.cols()) = w_te;
      for (Eigen::Index j = 0; j < j_count; ++j) {
        const Eigen::VectorXd pred = fits.outcome_models[size_t(j)].predict(x_b);
        for (size_t r = 0; r < test.size(); ++r) out.b[size_t(av)](test[r], j) = pred(Eigen::Index(r));
      }
      for (int apv = 0; apv <= 1; ++apv) {
        Eigen::MatrixXd x_xi(Eigen::Index(test.size()), 1 + w.cols());
        x_xi.col(0).setConstant(double(apv));
        x_xi.rightCols(w.cols()) = w_te;
        for (Eigen::Index j = 0; j < j_count; ++j) {
          const Eigen::VectorXd pred = fits.seqreg_models[size_t(av)][size_t(j)].predict(x_xi);
          for (size_t r = 0; r < test.size(); ++r)
            out.xi[size_t(2 * av + apv)](test[r], j) = pred(Eigen::Index(r));
        }
      }
    }
  }
  return out;
}

struct PsiEstimate {
  Eigen::VectorXd psi;          // per outcome j
  Eigen::MatrixXd uncentered;   // n x J influence terms before centering
  long clip_evaluations = 0;
  long clip_hits = 0;
};

// The AIPW estimator of psi(a,a') for every outcome column. Each propensity
// factor is clipped before any ratio is formed, so with a == a' the
// mediator-density ratio cancels to exactly 1 and the expression reduces to
// the standard AIPW estimator of E[Y(a)].
inline PsiEstimate aipw_psi(int a, int a_prime, const Eigen::MatrixXd& yhat,
                            const Eigen::VectorXd& treatment, const CrossFitNuisances& nuis) {
  if ((a != 0 && a != 1) || (a_prime != 0 && a_prime != 1))
    throw std::invalid_argument("aipw_psi: treatment levels must be 0 or 1");
  const Eigen::Index n = yhat.rows();
  const Eigen::Index j_count = yhat.cols();
  if (treatment.size() != n || nuis.pw.size() != n)
    throw std::invalid_argument("aipw_psi: mismatched row counts");

  PsiEstimate est;
  est.uncentered.resize(n, j_count);
  const auto clip = [&est](double p) {
    ++est.clip_evaluations;
    if (p < kClipEps) {
      ++est.clip_hits;
      return kClipEps;
    }
    if (p > 1.0 - kClipEps) {
      ++est.clip_hits;
      return 1.0 - kClipEps;
    }
    return p;
  };
  const Eigen::MatrixXd& b_a = nuis.b[size_t(a)];
  const Eigen::MatrixXd& xi_aap = nuis.xi[size_t(2 * a + a_prime)];
  for (Eigen::Index i = 0; i < n; ++i) {
    const double pw1 = nuis.pw(i);
    const double pmw1 = nuis.pmw(i);
    const double pw_a = clip(a == 1 ? pw1 : 1.0 - pw1);
    const double pw_ap = clip(a_prime == 1 ? pw1 : 1.0 - pw1);
    const double pmw_a = clip(a == 1 ? pmw1 : 1.0 - pmw1);
    const double pmw_ap = clip(a_prime == 1 ? pmw1 : 1.0 - pmw1);
    const double ind_a = treatment(i) == double(a) ? 1.0 : 0.0;
    const double ind_ap = treatment(i) == double(a_prime) ? 1.0 : 0.0;
    const double ratio = (pmw_ap * pw_a) / (pmw_a * pw_ap);
    const double w_out = ind_a / pw_a * ratio;
    const double w_med = ind_ap / pw_ap;
    for (Eigen::Index j = 0; j < j_count; ++j) {
      const double bij = b_a(i, j);
      const double xij = xi_aap(i, j);
      est.uncentered(i, j) = w_out * (yhat(i, j) - bij) + w_med * (bij - xij) + xij;
    }
  }
  est.psi = est.uncentered.colwise().mean();
  return est;
}

struct InfluenceMatrix {
  Eigen::MatrixXd values;                      // n x J, centered per column
  CausalTarget target;
  std::array<Eigen::VectorXd, 4> psi_components;  // [2a+a'] point estimates per j
};

struct EstimateOptions {
  CausalTarget target = CausalTarget::nde();
  int folds = 5;
  int stack_folds = 5;
  std::uint64_t seed = 1;
  StackOptions stacks;
};

struct EstimateReport {
  CausalTarget target;
  Eigen::VectorXd estimate;       // per outcome j
  InfluenceMatrix influence;      // rows ordered like subject_ids
  std::vector<std::string> subject_ids;
  CrossFitPlan plan;
  long clip_evaluations = 0;
  long clip_hits = 0;
  std::vector<std::string> warnings;
};

namespace detail {

// Combines the four uncentered term matrices into the target's point
// estimate and exactly centered influence columns. The ATE is assembled as
// NDE + NIE so the telescoping identity holds exactly in floating point.
inline void assemble_target(const CausalTarget& target, const std::array<PsiEstimate, 4>& parts,
                            Eigen::VectorXd& estimate, Eigen::MatrixXd& influence) {
  const auto slot = [](int a, int ap) { return size_t(2 * a + ap); };
  // Contrast estimates are differences of the stored psi component means,
  // and the ATE is assembled as NDE + NIE, so the telescoping identity and
  // component consistency hold exactly in floating point. Column means after
  // centering land at the machine-epsilon level.
  const auto contrast = [&](size_t hi, size_t lo) {
    estimate = parts[hi].psi - parts[lo].psi;
    influence = parts[hi].uncentered - parts[lo].uncentered;
    influence.rowwise() -= estimate.transpose();
  };
  switch (target.kind) {
    case TargetKind::psi: {
      const PsiEstimate& part = parts[slot(target.a, target.a_prime)];
      estimate = part.psi;
      influence = part.uncentered.rowwise() - part.psi.transpose();
      return;
    }
    case TargetKind::nde:
      contrast(slot(1, 0), slot(0, 0));
      return;
    case TargetKind::nie:
      contrast(slot(1, 1), slot(1, 0));
      return;
    case TargetKind::ate: {
      Eigen::VectorXd est_nde, est_nie;
      Eigen::MatrixXd inf_nde, inf_nie;
      assemble_target(CausalTarget::nde(), parts, est_nde, inf_nde);
      assemble_target(CausalTarget::nie(), parts, est_nie, inf_nie);
      estimate = est_nde + est_nie;
      influence = inf_nde + inf_nie;
      return;
    }
  }
  throw std::logic_error("unknown target kind");
}

}  // namespace detail

inline EstimateReport estimate_target(const CohortDataset& data, const DerivedOutcomeMatrix& yhat,
                                      const EstimateOptions& opt) {
  // Estimation needs only (id, treatment, mediator, confounders) plus the
  // derived outcomes, so raw-series requirements are not imposed here.
  if (yhat.values.rows() != Eigen::Index(data.subjects.size()))
    throw std::invalid_argument("estimate_target: derived outcomes do not match the cohort");
  const Eigen::Index q_all =
      data.subjects.empty() ? 0 : data.subjects.front().confounders.size();
  for (const auto& s : data.subjects) {
    if (s.treatment != 0 && s.treatment != 1)
      throw std::invalid_argument("estimate_target: subject " + s.id + ": treatment not in {0,1}");
    if (!std::isfinite(s.mediator))
      throw std::invalid_argument("estimate_target: subject " + s.id + ": non-finite mediator");
    if (!s.confounders.allFinite() || s.confounders.size() != q_all)
      throw std::invalid_argument("estimate_target: subject " + s.id + ": bad confounders");
  }

  // Canonical subject order (sorted by id) makes every downstream fit and
  // sum independent of the caller's row order.
  std::vector<Eigen::Index> usable;
  for (Eigen::Index i = 0; i < Eigen::Index(data.subjects.size()); ++i) {
    if (data.subjects[size_t(i)].usable) usable.push_back(i);
  }
  std::sort(usable.begin(), usable.end(), [&](Eigen::Index x, Eigen::Index y) {
    return data.subjects[size_t(x)].id < data.subjects[size_t(y)].id;
  });
  for (size_t r = 1; r < usable.size(); ++r) {
    if (data.subjects[size_t(usable[r - 1])].id == data.subjects[size_t(usable[r])].id)
      throw std::invalid_argument("estimate_target: duplicate subject id " +
                                  data.subjects[size_t(usable[r])].id);
  }
  const Eigen::Index n = Eigen::Index(usable.size());
  if (n < 4) throw std::invalid_argument("estimate_target: fewer than 4 usable subjects");
  const Eigen::Index q = data.subjects[size_t(usable[0])].confounders.size();
  const Eigen::Index j_count = yhat.values.cols();

  Eigen::MatrixXd w(n, q), y(n, j_count);
  Eigen::VectorXd a(n), m(n);
  EstimateReport report;
  report.target = opt.target;
  report.subject_ids.reserve(size_t(n));
  for (Eigen::Index r = 0; r < n; ++r) {
    const SubjectRecord& rec = data.subjects[size_t(usable[size_t(r)])];
    w.row(r) = rec.confounders.transpose();
    a(r) = rec.treatment;
    m(r) = rec.mediator;
    y.row(r) = yhat.values.row(usable[size_t(r)]);
    report.subject_ids.push_back(rec.id);
  }

  const CrossFitPlan plan = make_folds(n, opt.folds, a, opt.seed);
  StackOptions so = opt.stacks;
  so.stack_folds = opt.stack_folds;
  const CrossFitNuisances nuis = cross_fit_nuisances(w, a, m, y, plan, so, mix_seed(opt.seed, 0x4649u));
  report.plan = plan;
  report.warnings = nuis.warnings;
  for (const auto& msg : plan.warnings) report.warnings.push_back(msg);

  std::array<PsiEstimate, 4> parts;
  for (int av = 0; av <= 1; ++av) {
    for (int apv = 0; apv <= 1; ++apv) {
      parts[size_t(2 * av + apv)] = aipw_psi(av, apv, y, a, nuis);
      report.clip_evaluations += parts[size_t(2 * av + apv)].clip_evaluations;
      report.clip_hits += parts[size_t(2 * av + apv)].clip_hits;
    }
  }
  report.influence.target = opt.target;
  for (int s = 0; s < 4; ++s) report.influence.psi_components[size_t(s)] = parts[size_t(s)].psi;
  detail::assemble_target(opt.target, parts, report.estimate, report.influence.values);
  return report;
}

}  // namespace medrobust
