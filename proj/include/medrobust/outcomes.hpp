#pragma once

// Derived outcomes computed from residual series: pairwise correlations
// on the variance-stabilized (inverse hyperbolic tangent) scale, and raw
// cross products.

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "medrobust/core.hpp"

namespace medrobust {

// A series with (numerically) zero variance cannot be correlated; the
// caller decides whether this drops the subject or aborts the run.
struct DegenerateSeriesError : std::runtime_error {
  explicit DegenerateSeriesError(const std::string& what)
      : std::runtime_error(what) {}
};

inline double pearson_corr(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const auto t = x.size();
  if (y.size() != t)
    throw std::invalid_argument("pearson_corr: lengths differ");
  if (t < 3)
    throw std::invalid_argument("pearson_corr: need at least 3 points");
  const Eigen::ArrayXd xc = x.array() - x.mean();
  const Eigen::ArrayXd yc = y.array() - y.mean();
  const double sxx = (xc * xc).sum();
  const double syy = (yc * yc).sum();
  if (sxx <= 0.0 || syy <= 0.0)
    throw DegenerateSeriesError("pearson_corr: zero-variance series");
  const double r = (xc * yc).sum() / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);  // guard float drift past the endpoints
}

// Variance-stabilizing transform with clamping away from the poles.
inline double fisher_z(double r, double clamp_eps = 1e-7) {
  if (!(clamp_eps > 0.0 && clamp_eps < 1.0))
    throw std::invalid_argument("fisher_z: clamp_eps must lie in (0,1)");
  return std::atanh(std::clamp(r, -1.0 + clamp_eps, 1.0 - clamp_eps));
}

// One z-transformed correlation per region pair, in pair_index order.
inline Eigen::VectorXd derive_fc(const Eigen::MatrixXd& residuals,
                                 double clamp_eps = 1e-7) {
  const int v_count = static_cast<int>(residuals.rows());
  const auto pairs = pair_index(v_count);
  Eigen::VectorXd out(static_cast<Eigen::Index>(pairs.size()));
  for (const auto& p : pairs)
    out[p.j] = fisher_z(pearson_corr(residuals.row(p.v).transpose(),
                                     residuals.row(p.v_prime).transpose()),
                        clamp_eps);
  return out;
}

// Uncentered cross-moment per pair: mean over time of the raw product.
inline Eigen::VectorXd derive_cross_products(const Eigen::MatrixXd& residuals) {
  const int v_count = static_cast<int>(residuals.rows());
  if (residuals.cols() < 1)
    throw std::invalid_argument("derive_cross_products: empty series");
  const auto pairs = pair_index(v_count);
  Eigen::VectorXd out(static_cast<Eigen::Index>(pairs.size()));
  for (const auto& p : pairs)
    out[p.j] = residuals.row(p.v).dot(residuals.row(p.v_prime)) /
               static_cast<double>(residuals.cols());
  return out;
}

}  // namespace medrobust
