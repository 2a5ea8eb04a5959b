#pragma once

// Influence-based inference: per-outcome variances, t statistics, pointwise
// and simultaneous confidence intervals via a Gaussian multiplier bootstrap,
// and the step-down false-discovery-proportion exceedance procedure with
// augmentation.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "medrobust/parallel.hpp"
#include "medrobust/rng.hpp"
#include "medrobust/stats.hpp"

namespace medrobust {

struct VarianceReport {
  Eigen::VectorXd variance;       // mean of squared influence values per column
  Eigen::VectorXd t;              // sqrt(n) * estimate / sd; NaN where sd = 0
  std::vector<bool> informative;  // sd > 0
};

inline VarianceReport variance_and_t(const Eigen::MatrixXd& influence,
                                     const Eigen::VectorXd& estimate) {
  const Eigen::Index n = influence.rows();
  const Eigen::Index j_count = influence.cols();
  if (n < 2) throw std::invalid_argument("variance_and_t: need at least 2 subjects");
  if (estimate.size() != j_count)
    throw std::invalid_argument("variance_and_t: estimate length does not match influence columns");
  VarianceReport rep;
  rep.variance = influence.array().square().colwise().mean();
  rep.t.resize(j_count);
  rep.informative.assign(size_t(j_count), true);
  const double root_n = std::sqrt(double(n));
  for (Eigen::Index j = 0; j < j_count; ++j) {
    const double sd = std::sqrt(rep.variance(j));
    if (sd > 0.0) {
      rep.t(j) = root_n * estimate(j) / sd;
    } else {
      rep.t(j) = std::numeric_limits<double>::quiet_NaN();
      rep.informative[size_t(j)] = false;
    }
  }
  return rep;
}

// tau_j +/- z_{1-alpha/2} * sd_j / sqrt(n), one row per outcome.
inline Eigen::MatrixXd pointwise_ci(const Eigen::VectorXd& estimate, const Eigen::VectorXd& variance,
                                    Eigen::Index n, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("pointwise_ci: alpha must lie in (0,1)");
  const double z = normal_quantile(1.0 - alpha / 2.0);
  Eigen::MatrixXd ci(estimate.size(), 2);
  for (Eigen::Index j = 0; j < estimate.size(); ++j) {
    const double half = z * std::sqrt(variance(j) / double(n));
    ci(j, 0) = estimate(j) - half;
    ci(j, 1) = estimate(j) + half;
  }
  return ci;
}

// Indices whose variance clears the screen threshold. Simultaneous inference
// needs at least one informative outcome, so an empty result aborts.
inline std::vector<int> screen_informative(const Eigen::VectorXd& variance, double c0) {
  if (!(c0 >= 0.0)) throw std::invalid_argument("screen_informative: threshold must be >= 0");
  std::vector<int> keep;
  for (Eigen::Index j = 0; j < variance.size(); ++j) {
    if (variance(j) >= c0) keep.push_back(int(j));
  }
  if (keep.empty())
    throw std::runtime_error(
        "screen_informative: no outcome passes the variance screen; simultaneous inference "
        "requires a non-empty informative set");
  return keep;
}

struct BootstrapMax {
  std::vector<double> draws;  // one max-|z| statistic per bootstrap replicate

  double quantile(double level) const { return empirical_quantile(draws, level); }
};

// Gaussian multiplier bootstrap of the maximum studentized column statistic
// over the given subset: for each replicate, z_j = (1/sqrt(n)) sum_i g_i
// eta_ij / sd_j with fresh standard-normal multipliers g. Zero-variance
// columns contribute 0. Each replicate reads its own counter stream, so
// results do not depend on the worker count.
inline BootstrapMax multiplier_bootstrap_max(const Eigen::MatrixXd& influence,
                                             const std::vector<int>& subset,
                                             const Eigen::VectorXd& variance, int b_draws,
                                             std::uint64_t seed) {
  if (subset.empty()) throw std::invalid_argument("multiplier_bootstrap_max: empty subset");
  if (b_draws < 200) throw std::invalid_argument("multiplier_bootstrap_max: need at least 200 draws");
  const Eigen::Index n = influence.rows();
  Eigen::MatrixXd cols(n, Eigen::Index(subset.size()));
  for (size_t s = 0; s < subset.size(); ++s) {
    const int j = subset[s];
    if (j < 0 || j >= influence.cols())
      throw std::invalid_argument("multiplier_bootstrap_max: subset index out of range");
    const double sd = std::sqrt(variance(j));
    if (sd > 0.0)
      cols.col(Eigen::Index(s)) = influence.col(j) / sd;
    else
      cols.col(Eigen::Index(s)).setZero();
  }
  BootstrapMax out;
  out.draws.assign(size_t(b_draws), 0.0);
  const double scale = 1.0 / std::sqrt(double(n));
  parallel_for(size_t(b_draws), [&](size_t b) {
    CounterRng rng(seed, std::uint64_t(b));
    Eigen::VectorXd g(n);
    for (Eigen::Index i = 0; i < n; ++i) g(i) = rng.normal();
    out.draws[b] = scale * (cols.transpose() * g).cwiseAbs().maxCoeff();
  });
  return out;
}

// tau_j +/- z_max * sd_j / sqrt(n), one row per outcome.
inline Eigen::MatrixXd simultaneous_ci(const Eigen::VectorXd& estimate, const Eigen::VectorXd& variance,
                                       double z_max, Eigen::Index n) {
  Eigen::MatrixXd ci(estimate.size(), 2);
  for (Eigen::Index j = 0; j < estimate.size(); ++j) {
    const double half = z_max * std::sqrt(variance(j) / double(n));
    ci(j, 0) = estimate(j) - half;
    ci(j, 1) = estimate(j) + half;
  }
  return ci;
}

struct FdpConfig {
  double c = 0.1;       // tolerated false-discovery proportion
  double alpha = 0.05;  // exceedance level
  double c0 = 1e-6;     // variance screen threshold (variance scale)
  int b_draws = 1000;
  std::uint64_t seed = 1;
};

inline void validate(const FdpConfig& cfg) {
  if (!(cfg.c > 0.0 && cfg.c < 1.0)) throw std::invalid_argument("fdp config: c must lie in (0,1)");
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0))
    throw std::invalid_argument("fdp config: alpha must lie in (0,1)");
  if (!(cfg.c0 >= 0.0)) throw std::invalid_argument("fdp config: c0 must be >= 0");
  if (cfg.b_draws < 200) throw std::invalid_argument("fdp config: need at least 200 bootstrap draws");
}

struct StepdownStep {
  double kappa = 0.0;       // max |t| over the surviving set
  double z_max = 0.0;       // bootstrap critical value for that set
  int removed = -1;         // index moved to the discovery set; -1 on the stopping step
  int surviving = 0;        // |S| when the step ran
};

struct FdpResult {
  std::vector<int> discoveries;   // step-down discoveries plus augmentation
  std::vector<int> stepdown_set;  // discoveries before augmentation, in removal order
  std::vector<int> augmented;     // indices added by augmentation
  std::vector<StepdownStep> trace;
  std::vector<std::string> warnings;
};

// Step-down procedure with augmentation. Each iteration re-draws fresh
// multipliers (seed offset by the iteration index), removes the largest
// studentized statistic while it exceeds the bootstrap critical value of the
// surviving set, then augments with the next floor(|omega|*c/(1-c)) largest
// statistics.
inline FdpResult stepdown_fdpex(const Eigen::MatrixXd& influence, const Eigen::VectorXd& estimate,
                                const FdpConfig& cfg) {
  validate(cfg);
  FdpResult out;
  if (double(cfg.b_draws) * cfg.alpha < 10.0)
    out.warnings.push_back("bootstrap draw count is small for the requested level; the critical "
                           "value is resolved by fewer than 10 tail draws");
  const VarianceReport var = variance_and_t(influence, estimate);
  std::vector<int> surviving = screen_informative(var.variance, cfg.c0);

  const auto abs_t = [&](int j) {
    const double v = std::abs(var.t(j));
    return std::isfinite(v) ? v : 0.0;  // zero-variance columns can never be rejected
  };
  std::uint64_t iteration = 0;
  while (!surviving.empty()) {
    StepdownStep step;
    step.surviving = int(surviving.size());
    int arg = surviving.front();
    for (int j : surviving) {
      if (abs_t(j) > abs_t(arg)) arg = j;  // ties keep the smallest index
    }
    step.kappa = abs_t(arg);
    const BootstrapMax boot =
        multiplier_bootstrap_max(influence, surviving, var.variance, cfg.b_draws, cfg.seed + iteration);
    step.z_max = boot.quantile(1.0 - cfg.alpha);
    if (step.kappa > step.z_max) {
      step.removed = arg;
      out.stepdown_set.push_back(arg);
      surviving.erase(std::find(surviving.begin(), surviving.end(), arg));
      out.trace.push_back(step);
      ++iteration;
    } else {
      out.trace.push_back(step);
      break;
    }
  }

  out.discoveries = out.stepdown_set;
  const size_t add = size_t(std::floor(double(out.stepdown_set.size()) * cfg.c / (1.0 - cfg.c)));
  if (add > 0 && !surviving.empty()) {
    std::vector<int> rest = surviving;
    std::sort(rest.begin(), rest.end(), [&](int x, int y) {
      if (abs_t(x) != abs_t(y)) return abs_t(x) > abs_t(y);
      return x < y;
    });
    for (size_t r = 0; r < std::min(add, rest.size()); ++r) {
      out.augmented.push_back(rest[r]);
      out.discoveries.push_back(rest[r]);
    }
  }
  return out;
}

// Benjamini-Hochberg rejection flags at level q. Comparator utility only;
// no error-control guarantee is claimed for it here.
inline std::vector<bool> bh_reject(const std::vector<double>& p_values, double q) {
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("bh_reject: q must lie in (0,1)");
  const size_t m = p_values.size();
  std::vector<size_t> order(m);
  for (size_t i = 0; i < m; ++i) {
    if (!(p_values[i] >= 0.0 && p_values[i] <= 1.0))
      throw std::invalid_argument("bh_reject: p-values must lie in [0,1]");
    order[i] = i;
  }
  std::sort(order.begin(), order.end(), [&](size_t x, size_t y) { return p_values[x] < p_values[y]; });
  double threshold = -1.0;
  for (size_t k = m; k >= 1; --k) {
    if (p_values[order[k - 1]] <= q * double(k) / double(m)) {
      threshold = p_values[order[k - 1]];
      break;
    }
  }
  std::vector<bool> reject(m, false);
  if (threshold >= 0.0) {
    for (size_t i = 0; i < m; ++i) reject[i] = p_values[i] <= threshold;
  }
  return reject;
}

struct TestReport {
  Eigen::VectorXd estimate;
  Eigen::VectorXd variance;
  Eigen::VectorXd t;
  Eigen::MatrixXd pointwise;     // J x 2
  Eigen::MatrixXd simultaneous;  // J x 2; NaN rows outside the informative set
  double z_max = 0.0;
  double alpha = 0.05;
  std::vector<bool> informative;
  std::vector<bool> discovered;
  std::vector<std::string> warnings;
};

// One-stop inference summary: variances, t statistics, pointwise and
// simultaneous intervals on the screened set, and the discovery flags from
// the step-down procedure.
// `ci_alpha` sets the pointwise/simultaneous interval level; cfg.alpha is the
// exceedance level of the step-down discovery procedure.
inline TestReport run_inference(const Eigen::MatrixXd& influence, const Eigen::VectorXd& estimate,
                                const FdpConfig& cfg, double ci_alpha) {
  validate(cfg);
  if (!(ci_alpha > 0.0 && ci_alpha < 1.0))
    throw std::invalid_argument("run_inference: interval alpha must lie in (0,1)");
  TestReport rep;
  rep.estimate = estimate;
  rep.alpha = ci_alpha;
  const VarianceReport var = variance_and_t(influence, estimate);
  rep.variance = var.variance;
  rep.t = var.t;
  rep.pointwise = pointwise_ci(estimate, var.variance, influence.rows(), ci_alpha);
  const std::vector<int> screened = screen_informative(var.variance, cfg.c0);
  rep.informative.assign(size_t(estimate.size()), false);
  for (int j : screened) rep.informative[size_t(j)] = true;
  const BootstrapMax boot =
      multiplier_bootstrap_max(influence, screened, var.variance, cfg.b_draws, cfg.seed);
  rep.z_max = boot.quantile(1.0 - ci_alpha);
  rep.simultaneous = simultaneous_ci(estimate, var.variance, rep.z_max, influence.rows());
  for (Eigen::Index j = 0; j < estimate.size(); ++j) {
    if (!rep.informative[size_t(j)]) {
      rep.simultaneous(j, 0) = std::numeric_limits<double>::quiet_NaN();
      rep.simultaneous(j, 1) = std::numeric_limits<double>::quiet_NaN();
    }
  }
  const FdpResult fdp = stepdown_fdpex(influence, estimate, cfg);
  rep.discovered.assign(size_t(estimate.size()), false);
  for (int j : fdp.discoveries) rep.discovered[size_t(j)] = true;
  rep.warnings = fdp.warnings;
  return rep;
}

inline TestReport run_inference(const Eigen::MatrixXd& influence, const Eigen::VectorXd& estimate,
                                const FdpConfig& cfg) {
  return run_inference(influence, estimate, cfg, cfg.alpha);
}

}  // namespace medrobust
