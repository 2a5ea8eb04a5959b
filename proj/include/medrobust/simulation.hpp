#pragma once

// Synthetic cohort generator.  A latent motion level drives both the
// measured nuisance series and (through the mediator) the outcomes, the
// response series carries a motion-artifact contamination shared across
// regions, and region-pair correlations are tied to subject-level
// outcome variables through a one-factor structure.
//
// Draw order per subject is frozen (confounders, arm, motion noise,
// mediator noise, two outcome noises, then the nuisance series, then the
// innovation series); each subject reads an independent counter stream,
// so cohorts are bit-reproducible for any worker count.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "medrobust/core.hpp"
#include "medrobust/estimator.hpp"
#include "medrobust/parallel.hpp"
#include "medrobust/rng.hpp"

namespace medrobust {

struct DgpConfig {
  int n = 150;             // subjects
  int t = 300;             // series length
  double rho = 0.3;        // innovation carry-over between adjacent frames
  double fd_spike_threshold = 2.0;  // displacement level that switches on the spike term
  std::uint64_t seed = 1;
  // Noise scale parameters below are standard deviations; setting
  // noise_scales_are_variances reinterprets them as variances.
  bool noise_scales_are_variances = false;
  double noise_motion = 0.4;    // latent motion noise
  double noise_mediator = 0.1;  // mediator measurement noise
  double noise_outcome = 0.5;   // outcome noise (each region outcome)
};

namespace detail {

inline double noise_sd(double scale, bool scales_are_variances) {
  return scales_are_variances ? std::sqrt(scale) : scale;
}

inline Eigen::Matrix3d power_covariance(double base) {
  Eigen::Matrix3d s;
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) s(i, k) = std::pow(base, std::abs(i - k));
  return s;
}

}  // namespace detail

// Subject-level variables only (no series); the draws are a prefix of the
// full per-subject stream, so cohort generation agrees with this sampler.
struct SubjectLevelDraw {
  Eigen::Vector3d w;
  int a = 0;
  double u = 0.0;   // latent motion level
  double m = 0.0;   // measured mediator
  double y1 = 0.0;  // outcome tied to region pair (1,2)
  double y2 = 0.0;  // outcome tied to region pair (1,3)
};

inline double treatment_propensity(const Eigen::VectorXd& w) {
  return 1.0 / (1.0 + std::exp(-0.2 + 0.4 * w.sum()));
}

inline SubjectLevelDraw sample_subject_level(const DgpConfig& cfg, CounterRng& rng) {
  static const Eigen::Matrix3d l_w =
      Eigen::Matrix3d(detail::power_covariance(0.5).llt().matrixL());
  SubjectLevelDraw d;
  d.w = l_w * rng.normal_vector(3);
  d.a = rng.bernoulli(treatment_propensity(d.w)) ? 1 : 0;
  const double s = d.w.sum();
  d.u = 0.5 + 0.5 * d.a + 0.1 * s +
        detail::noise_sd(cfg.noise_motion, cfg.noise_scales_are_variances) * rng.normal();
  d.m = d.u + detail::noise_sd(cfg.noise_mediator, cfg.noise_scales_are_variances) * rng.normal();
  const double sd_y = detail::noise_sd(cfg.noise_outcome, cfg.noise_scales_are_variances);
  d.y1 = 0.1 + 0.6 * d.a + d.m - 0.6 * d.a * d.m + 0.1 * s + sd_y * rng.normal();
  d.y2 = 0.1 + 0.2 * d.a - 0.4 * d.a * d.m + 0.1 * s + sd_y * rng.normal();
  return d;
}

// Ground truth retained next to each simulated subject.
struct SubjectTruth {
  double u = 0.0;                    // latent motion level
  Eigen::Vector3d region_outcomes;   // per pair: y1, y2, and the implied pair (2,3) value
  Eigen::VectorXd contamination;     // scalar artifact series added to every region
};

struct SimulatedCohort {
  CohortDataset data;
  std::vector<SubjectTruth> truth;
  DgpConfig config;
};

inline SimulatedCohort gen_cohort(const DgpConfig& cfg) {
  if (cfg.n < 1) throw std::invalid_argument("gen_cohort: n must be positive");
  if (cfg.t < 3) throw std::invalid_argument("gen_cohort: need at least 3 frames");
  if (!(cfg.rho > -1.0 && cfg.rho < 1.0))
    throw std::invalid_argument("gen_cohort: rho must lie in (-1,1)");
  SimulatedCohort out;
  out.config = cfg;
  out.data.subjects.resize(static_cast<std::size_t>(cfg.n));
  out.truth.resize(static_cast<std::size_t>(cfg.n));
  const Eigen::Matrix3d l_h =
      Eigen::Matrix3d(detail::power_covariance(0.3).llt().matrixL());
  const int width = static_cast<int>(std::to_string(cfg.n).size());

  parallel_for(static_cast<std::size_t>(cfg.n), [&](std::size_t i) {
    CounterRng rng(cfg.seed, static_cast<std::uint64_t>(i));
    const SubjectLevelDraw d = sample_subject_level(cfg, rng);
    SubjectRecord subj;
    std::string num = std::to_string(i + 1);
    subj.id = "s" + std::string(static_cast<std::size_t>(width) - num.size(), '0') + num;
    subj.treatment = d.a;
    subj.confounders = d.w;
    subj.mediator = d.m;

    // measured nuisance series: independent frames around the motion level
    Eigen::MatrixXd h(3, cfg.t);
    for (int t = 0; t < cfg.t; ++t)
      h.col(t) = Eigen::Vector3d::Constant(d.u / 3.0) + l_h * rng.normal_vector(3);

    // artifact shared by all regions, with a spike term on high-motion frames
    Eigen::VectorXd contamination(cfg.t);
    for (int t = 0; t < cfg.t; ++t) {
      const double fd = h.col(t).cwiseAbs().sum();
      contamination[t] = 0.6 * h(0, t) * h(2, t) - 0.8 * h(1, t) * h(2, t) +
                         (fd > cfg.fd_spike_threshold ? 0.8 * h(0, t) * h(1, t) : 0.0);
    }

    // innovations with a one-factor correlation tied to the outcomes
    const double g1 = std::tanh(d.y1);
    const double g2 = std::tanh(d.y2);
    Eigen::MatrixXd innovations(3, cfg.t);
    for (int t = 0; t < cfg.t; ++t) {
      const double z0 = rng.normal();
      const double z1 = rng.normal();
      const double z2 = rng.normal();
      innovations(0, t) = z0;
      innovations(1, t) = g1 * z0 + std::sqrt(1.0 - g1 * g1) * z1;
      innovations(2, t) = g2 * z0 + std::sqrt(1.0 - g2 * g2) * z2;
    }

    // response: carry-over mix of adjacent innovations plus the artifact
    Eigen::MatrixXd x(3, cfg.t);
    const double mix = std::sqrt(1.0 - cfg.rho * cfg.rho);
    x.col(0) = innovations.col(0).array() + contamination[0];
    for (int t = 1; t < cfg.t; ++t)
      x.col(t) = cfg.rho * innovations.col(t - 1) + mix * innovations.col(t) +
                 Eigen::Vector3d::Constant(contamination[t]);

    subj.response = std::move(x);
    subj.nuisance = std::move(h);
    out.data.subjects[i] = std::move(subj);
    SubjectTruth truth;
    truth.u = d.u;
    truth.region_outcomes =
        Eigen::Vector3d(d.y1, d.y2, std::atanh(g1 * g2));
    truth.contamination = std::move(contamination);
    out.truth[i] = std::move(truth);
  });
  return out;
}

// ---------------------------------------------------------------------
// Closed-form nuisances and targets implied by the generator; used for
// calibration checks with directly observed outcomes.

struct OracleDgp {
  DgpConfig cfg;

  double mediator_sd() const {
    const double su = detail::noise_sd(cfg.noise_motion, cfg.noise_scales_are_variances);
    const double sm = detail::noise_sd(cfg.noise_mediator, cfg.noise_scales_are_variances);
    return std::sqrt(su * su + sm * sm);
  }

  double mediator_mean(int a, const Eigen::VectorXd& w) const {
    return 0.5 + 0.5 * a + 0.1 * w.sum();
  }

  // P(A=1 | W=w)
  double prop_w(const Eigen::VectorXd& w) const { return treatment_propensity(w); }

  // P(A=1 | M=m, W=w), via the normal mediator densities of the two arms
  double prop_mw(double m, const Eigen::VectorXd& w) const {
    const double p1 = prop_w(w);
    const double sd = mediator_sd();
    const double d1 = (m - mediator_mean(1, w)) / sd;
    const double d0 = (m - mediator_mean(0, w)) / sd;
    // log odds = logit(p1) + log phi(d1) - log phi(d0)
    const double logit = std::log(p1 / (1.0 - p1)) + 0.5 * (d0 * d0 - d1 * d1);
    return 1.0 / (1.0 + std::exp(-logit));
  }

  // E[Y_j | A=a, M=m, W=w] for the two directly modeled region pairs
  double outcome_mean(int j, double m, int a, const Eigen::VectorXd& w) const {
    const double s = w.sum();
    if (j == 0) return 0.1 + 0.6 * a + m - 0.6 * a * m + 0.1 * s;
    if (j == 1) return 0.1 + 0.2 * a - 0.4 * a * m + 0.1 * s;
    throw std::invalid_argument("outcome_mean: closed form only for pairs 0 and 1");
  }

  // E[ outcome_mean(j, M, a, w) | A=a', W=w ]
  double sequential_mean(int j, int a, int a_prime, const Eigen::VectorXd& w) const {
    return outcome_mean(j, mediator_mean(a_prime, w), a, w);  // linear in m
  }

  // marginal cross-world means and the usual contrasts
  double psi(int j, int a, int a_prime) const {
    const double em = 0.5 + 0.5 * a_prime;  // E[M(a')] since confounders are centered
    if (j == 0) return 0.1 + 0.6 * a + (1.0 - 0.6 * a) * em;
    if (j == 1) return 0.1 + 0.2 * a - 0.4 * a * em;
    throw std::invalid_argument("psi: closed form only for pairs 0 and 1");
  }
  double nde(int j) const { return psi(j, 1, 0) - psi(j, 0, 0); }
  double nie(int j) const { return psi(j, 1, 1) - psi(j, 1, 0); }
  double ate(int j) const { return psi(j, 1, 1) - psi(j, 0, 0); }
};

// Subject-level cohort with directly observed region-pair outcomes and no
// series; used by calibration and robustness studies that bypass the
// intra-subject processing stage. Subject i consumes the same leading draws
// as gen_cohort at the same seed.
struct SubjectLevelCohort {
  CohortDataset data;             // response/nuisance matrices left empty
  DerivedOutcomeMatrix outcomes;  // n x 2 observed (y1, y2)
};

inline SubjectLevelCohort sample_subject_cohort(const DgpConfig& cfg) {
  if (cfg.n < 1) throw std::invalid_argument("sample_subject_cohort: n must be positive");
  SubjectLevelCohort out;
  out.data.subjects.resize(static_cast<std::size_t>(cfg.n));
  out.outcomes.values.resize(cfg.n, 2);
  out.outcomes.pairs = {PairIndex{0, 0, 1}, PairIndex{1, 0, 2}};
  out.outcomes.kind = OutcomeKind::fisher_z_corr;
  const int width = static_cast<int>(std::to_string(cfg.n).size());
  for (int i = 0; i < cfg.n; ++i) {
    CounterRng rng(cfg.seed, static_cast<std::uint64_t>(i));
    const SubjectLevelDraw d = sample_subject_level(cfg, rng);
    SubjectRecord& subj = out.data.subjects[static_cast<std::size_t>(i)];
    std::string num = std::to_string(i + 1);
    subj.id = "s" + std::string(static_cast<std::size_t>(width) - num.size(), '0') + num;
    subj.treatment = d.a;
    subj.confounders = d.w;
    subj.mediator = d.m;
    out.outcomes.values(i, 0) = d.y1;
    out.outcomes.values(i, 1) = d.y2;
  }
  return out;
}

// Closed-form nuisance evaluations for every subject of a cohort, in the
// same layout the cross-fitted path produces, so the AIPW core can run on
// exactly known components.
inline CrossFitNuisances oracle_nuisance_arrays(const CohortDataset& data, const OracleDgp& oracle) {
  const Eigen::Index n = Eigen::Index(data.subjects.size());
  CrossFitNuisances out;
  out.pw.resize(n);
  out.pmw.resize(n);
  for (int av = 0; av <= 1; ++av) out.b[static_cast<std::size_t>(av)].resize(n, 2);
  for (int s = 0; s < 4; ++s) out.xi[static_cast<std::size_t>(s)].resize(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const SubjectRecord& subj = data.subjects[static_cast<std::size_t>(i)];
    out.pw(i) = oracle.prop_w(subj.confounders);
    out.pmw(i) = oracle.prop_mw(subj.mediator, subj.confounders);
    for (int av = 0; av <= 1; ++av) {
      for (int j = 0; j < 2; ++j) {
        out.b[static_cast<std::size_t>(av)](i, j) = oracle.outcome_mean(j, subj.mediator, av, subj.confounders);
        for (int apv = 0; apv <= 1; ++apv)
          out.xi[static_cast<std::size_t>(2 * av + apv)](i, j) =
              oracle.sequential_mean(j, av, apv, subj.confounders);
      }
    }
  }
  return out;
}

}  // namespace medrobust
