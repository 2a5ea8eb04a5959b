#pragma once

// Regression/classification learners and cross-validated simplex stacking.
//
// The stacking weights minimize the squared error of the weight-combined
// out-of-fold predictions over the probability simplex (Brier score for
// binary tasks), solved by exponentiated-gradient descent.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "medrobust/rng.hpp"

namespace medrobust {

// Probability outputs are clipped to [kClipEps, 1 - kClipEps] so that
// inverse-probability weights stay bounded.
inline constexpr double kClipEps = 0.01;

enum class Task { regression, binary_prob };

enum class LearnerKind { mean, linear, ridge, logistic, interaction_linear, bagged_tree };

inline const char* learner_kind_name(LearnerKind kind) {
  switch (kind) {
    case LearnerKind::mean: return "mean";
    case LearnerKind::linear: return "linear";
    case LearnerKind::ridge: return "ridge";
    case LearnerKind::logistic: return "logistic";
    case LearnerKind::interaction_linear: return "interaction_linear";
    case LearnerKind::bagged_tree: return "bagged_tree";
  }
  throw std::logic_error("unknown learner kind");
}

inline LearnerKind learner_kind_from_name(const std::string& name) {
  if (name == "mean") return LearnerKind::mean;
  if (name == "linear") return LearnerKind::linear;
  if (name == "ridge") return LearnerKind::ridge;
  if (name == "logistic") return LearnerKind::logistic;
  if (name == "interaction_linear") return LearnerKind::interaction_linear;
  if (name == "bagged_tree") return LearnerKind::bagged_tree;
  throw std::invalid_argument("unknown learner kind: " + name);
}

struct LearnerSpec {
  LearnerKind kind = LearnerKind::mean;
  std::vector<double> ridge_lambdas{0.01, 0.1, 1.0, 10.0};
  int tree_count = 50;
  int tree_depth = 3;
  double bag_fraction = 0.8;
  int min_leaf = 5;
};

class Learner {
 public:
  virtual ~Learner() = default;
  // X: rows are samples, columns are features (same layout the fit saw).
  virtual Eigen::VectorXd predict(const Eigen::MatrixXd& X) const = 0;
  virtual std::string name() const = 0;
  bool fit_warning() const { return warning_; }
  const std::string& warning_message() const { return warning_msg_; }

 protected:
  bool warning_ = false;
  std::string warning_msg_;
};

using LearnerPtr = std::shared_ptr<const Learner>;

namespace detail {

inline void check_xy(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  if (X.rows() != y.size()) throw std::invalid_argument("learner fit: X rows != y length");
  if (X.rows() < 1) throw std::invalid_argument("learner fit: empty data");
  if (X.cols() < 1) throw std::invalid_argument("learner fit: no features");
  if (!X.allFinite() || !y.allFinite()) throw std::invalid_argument("learner fit: non-finite inputs");
}

// All pairwise products (i<k) followed by squares, appended to the original features.
inline Eigen::MatrixXd expand_interactions(const Eigen::MatrixXd& X) {
  const Eigen::Index m = X.rows();
  const Eigen::Index d = X.cols();
  Eigen::MatrixXd Z(m, d + d * (d - 1) / 2 + d);
  Z.leftCols(d) = X;
  Eigen::Index col = d;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index k = i + 1; k < d; ++k) Z.col(col++) = X.col(i).cwiseProduct(X.col(k));
  for (Eigen::Index i = 0; i < d; ++i) Z.col(col++) = X.col(i).cwiseProduct(X.col(i));
  return Z;
}

struct LinearFit {
  Eigen::VectorXd coef;  // coef[0] = intercept, coef[1..] = feature weights
  bool ridge_fallback = false;
};

// OLS with intercept; rank-deficient or under-determined systems fall back to
// a lightly ridge-regularized solve (lambda = 1e-6, intercept unpenalized).
inline LinearFit fit_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  const Eigen::Index m = X.rows();
  const Eigen::Index d = X.cols();
  if (m > d + 1) {
    Eigen::MatrixXd Z(m, d + 1);
    Z.col(0).setOnes();
    Z.rightCols(d) = X;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Z);
    qr.setThreshold(1e-10);
    if (qr.rank() == Z.cols()) return {qr.solve(y), false};
  }
  const Eigen::RowVectorXd mx = X.colwise().mean();
  const double my = y.mean();
  const Eigen::MatrixXd Xc = X.rowwise() - mx;
  const Eigen::VectorXd yc = y.array() - my;
  Eigen::MatrixXd A = Xc.transpose() * Xc;
  A.diagonal().array() += 1e-6;
  const Eigen::VectorXd w = A.ldlt().solve(Xc.transpose() * yc);
  Eigen::VectorXd coef(d + 1);
  coef(0) = my - mx * w;
  coef.tail(d) = w;
  return {coef, true};
}

class MeanLearner final : public Learner {
 public:
  explicit MeanLearner(double mu) : mu_(mu) {}
  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const override {
    return Eigen::VectorXd::Constant(X.rows(), mu_);
  }
  std::string name() const override { return "mean"; }

 private:
  double mu_;
};

class LinearLearner final : public Learner {
 public:
  LinearLearner(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, bool interactions)
      : interactions_(interactions) {
    const Eigen::MatrixXd Z = interactions_ ? expand_interactions(X) : X;
    LinearFit fit = fit_ols(Z, y);
    coef_ = std::move(fit.coef);
    if (fit.ridge_fallback) {
      warning_ = true;
      warning_msg_ = name() + ": rank-deficient or under-determined system, ridge fallback";
    }
  }
  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const override {
    const Eigen::MatrixXd Z = interactions_ ? expand_interactions(X) : X;
    if (Z.cols() + 1 != coef_.size()) throw std::invalid_argument("linear predict: feature count mismatch");
    return (Z * coef_.tail(Z.cols())).array() + coef_(0);
  }
  std::string name() const override { return interactions_ ? "interaction_linear" : "linear"; }

 private:
  bool interactions_;
  Eigen::VectorXd coef_;
};

class RidgeLearner final : public Learner {
 public:
  RidgeLearner(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const std::vector<double>& lambdas) {
    if (lambdas.empty()) throw std::invalid_argument("ridge: empty lambda grid");
    const Eigen::Index m = X.rows();
    const Eigen::Index d = X.cols();
    mx_ = X.colwise().mean();
    scale_.resize(d);
    Eigen::MatrixXd Xs = X.rowwise() - mx_;
    for (Eigen::Index k = 0; k < d; ++k) {
      const double sd = m > 1 ? std::sqrt(Xs.col(k).squaredNorm() / double(m - 1)) : 0.0;
      scale_(k) = sd > 1e-12 ? sd : 1.0;
      Xs.col(k) /= scale_(k);
    }
    my_ = y.mean();
    const Eigen::VectorXd yc = y.array() - my_;

    double lambda = lambdas.front();
    if (lambdas.size() > 1 && m >= 4) {
      // Deterministic round-robin folds over the row order; the grid value
      // with the smallest out-of-fold squared error wins (ties: first listed).
      const int kint = m >= 10 ? 5 : 2;
      const Eigen::MatrixXd gram = Xs.transpose() * Xs;
      const Eigen::VectorXd xty = Xs.transpose() * yc;
      std::vector<Eigen::MatrixXd> gram_out(kint, gram);
      std::vector<Eigen::VectorXd> xty_out(kint, xty);
      for (Eigen::Index i = 0; i < m; ++i) {
        const int f = int(i % kint);
        gram_out[f].noalias() -= Xs.row(i).transpose() * Xs.row(i);
        xty_out[f].noalias() -= Xs.row(i).transpose() * yc(i);
      }
      double best = std::numeric_limits<double>::infinity();
      for (const double cand : lambdas) {
        double sse = 0.0;
        for (int f = 0; f < kint; ++f) {
          Eigen::MatrixXd A = gram_out[f];
          A.diagonal().array() += cand;
          const Eigen::VectorXd w = A.ldlt().solve(xty_out[f]);
          for (Eigen::Index i = f; i < m; i += kint) {
            const double r = yc(i) - Xs.row(i) * w;
            sse += r * r;
          }
        }
        if (sse < best - 1e-15) {
          best = sse;
          lambda = cand;
        }
      }
    }
    lambda_ = lambda;
    Eigen::MatrixXd A = Xs.transpose() * Xs;
    A.diagonal().array() += lambda_;
    ws_ = A.ldlt().solve(Xs.transpose() * yc);
  }
  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const override {
    if (X.cols() != mx_.size()) throw std::invalid_argument("ridge predict: feature count mismatch");
    Eigen::MatrixXd Xs = X.rowwise() - mx_;
    for (Eigen::Index k = 0; k < Xs.cols(); ++k) Xs.col(k) /= scale_(k);
    return (Xs * ws_).array() + my_;
  }
  std::string name() const override { return "ridge"; }
  double chosen_lambda() const { return lambda_; }

 private:
  Eigen::RowVectorXd mx_;
  Eigen::VectorXd scale_;
  double my_ = 0.0;
  double lambda_ = 0.0;
  Eigen::VectorXd ws_;
};

class LogisticLearner final : public Learner {
 public:
  LogisticLearner(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    const Eigen::Index m = X.rows();
    for (Eigen::Index i = 0; i < m; ++i) {
      if (y(i) != 0.0 && y(i) != 1.0) throw std::invalid_argument("logistic: responses must be 0 or 1");
    }
    Eigen::MatrixXd Z(m, X.cols() + 1);
    Z.col(0).setOnes();
    Z.rightCols(X.cols()) = X;
    coef_ = Eigen::VectorXd::Zero(Z.cols());

    // Iteratively reweighted least squares with step halving so the deviance
    // is non-increasing; stops when the deviance change falls below 1e-8.
    double dev = deviance(Z, y, coef_);
    bool converged = false;
    for (int iter = 0; iter < 100; ++iter) {
      const Eigen::VectorXd eta = Z * coef_;
      Eigen::VectorXd p(m), wgt(m);
      for (Eigen::Index i = 0; i < m; ++i) {
        const double pi = sigmoid(eta(i));
        p(i) = pi;
        wgt(i) = std::max(pi * (1.0 - pi), 1e-10);
      }
      Eigen::MatrixXd H = Z.transpose() * wgt.asDiagonal() * Z;
      const Eigen::VectorXd g = Z.transpose() * (y - p);
      Eigen::VectorXd delta = H.ldlt().solve(g);
      if (!delta.allFinite()) {
        H.diagonal().array() += 1e-6;
        delta = H.ldlt().solve(g);
      }
      double step = 1.0;
      double new_dev = deviance(Z, y, coef_ + delta);
      int halvings = 0;
      while (new_dev > dev && halvings < 30) {
        step *= 0.5;
        new_dev = deviance(Z, y, coef_ + step * delta);
        ++halvings;
      }
      coef_ += step * delta;
      if (std::abs(dev - new_dev) < 1e-8) {
        dev = new_dev;
        converged = true;
        break;
      }
      dev = new_dev;
    }
    if (!converged) {
      warning_ = true;
      warning_msg_ = "logistic: IRLS did not converge in 100 iterations (last iterate kept)";
    }
  }
  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const override {
    if (X.cols() + 1 != coef_.size()) throw std::invalid_argument("logistic predict: feature count mismatch");
    Eigen::VectorXd out = (X * coef_.tail(X.cols())).array() + coef_(0);
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      out(i) = std::clamp(sigmoid(out(i)), kClipEps, 1.0 - kClipEps);
    }
    return out;
  }
  std::string name() const override { return "logistic"; }

 private:
  static double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
  static double deviance(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const Eigen::VectorXd& beta) {
    const Eigen::VectorXd eta = Z * beta;
    double dev = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double p = std::clamp(sigmoid(eta(i)), 1e-12, 1.0 - 1e-12);
      dev -= 2.0 * (y(i) * std::log(p) + (1.0 - y(i)) * std::log1p(-p));
    }
    return dev;
  }
  Eigen::VectorXd coef_;
};

class RegressionTree {
 public:
  void fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::vector<int> rows, int max_depth,
           int min_leaf) {
    nodes_.clear();
    build(X, y, std::move(rows), max_depth, min_leaf);
  }
  double predict_row(const Eigen::MatrixXd& X, Eigen::Index i) const {
    int node = 0;
    while (nodes_[size_t(node)].feature >= 0) {
      const Node& nd = nodes_[size_t(node)];
      node = X(i, nd.feature) <= nd.threshold ? nd.left : nd.right;
    }
    return nodes_[size_t(node)].value;
  }

 private:
  struct Node {
    int feature = -1;
    double threshold = 0.0;
    double value = 0.0;
    int left = -1;
    int right = -1;
  };

  int build(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::vector<int> rows, int depth,
            int min_leaf) {
    const int id = int(nodes_.size());
    nodes_.emplace_back();
    const int n = int(rows.size());
    double sum = 0.0, sumsq = 0.0;
    for (const int r : rows) {
      sum += y(r);
      sumsq += y(r) * y(r);
    }
    const double mean = sum / n;
    const double sse_parent = sumsq - sum * sum / n;
    nodes_[size_t(id)].value = mean;
    if (depth <= 0 || n < 2 * min_leaf || sse_parent <= 1e-12) return id;

    int best_feature = -1;
    double best_sse = sse_parent - 1e-12;
    double best_threshold = 0.0;
    std::vector<std::pair<double, int>> order(rows.size());
    for (Eigen::Index f = 0; f < X.cols(); ++f) {
      for (size_t i = 0; i < rows.size(); ++i) order[i] = {X(rows[i], f), rows[i]};
      std::sort(order.begin(), order.end());
      double cum = 0.0, cumsq = 0.0;
      for (int s = 1; s <= n - min_leaf; ++s) {
        const double ys = y(order[size_t(s - 1)].second);
        cum += ys;
        cumsq += ys * ys;
        if (s < min_leaf) continue;
        const double lo = order[size_t(s - 1)].first;
        const double hi = order[size_t(s)].first;
        if (lo == hi) continue;
        const double sse_left = cumsq - cum * cum / s;
        const double sse_right = (sumsq - cumsq) - (sum - cum) * (sum - cum) / (n - s);
        const double total = sse_left + sse_right;
        if (total < best_sse) {
          best_sse = total;
          best_feature = int(f);
          double thr = lo + (hi - lo) / 2.0;
          if (thr >= hi) thr = lo;
          best_threshold = thr;
        }
      }
    }
    if (best_feature < 0) return id;

    std::vector<int> left_rows, right_rows;
    left_rows.reserve(rows.size());
    right_rows.reserve(rows.size());
    for (const int r : rows) {
      (X(r, best_feature) <= best_threshold ? left_rows : right_rows).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();
    nodes_[size_t(id)].feature = best_feature;
    nodes_[size_t(id)].threshold = best_threshold;
    const int left = build(X, y, std::move(left_rows), depth - 1, min_leaf);
    const int right = build(X, y, std::move(right_rows), depth - 1, min_leaf);
    nodes_[size_t(id)].left = left;
    nodes_[size_t(id)].right = right;
    return id;
  }

  std::vector<Node> nodes_;
};

class BaggedTreeLearner final : public Learner {
 public:
  BaggedTreeLearner(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const LearnerSpec& spec,
                    std::uint64_t seed) {
    if (spec.tree_count < 1 || spec.tree_depth < 1) throw std::invalid_argument("bagged_tree: bad hyperparams");
    if (!(spec.bag_fraction > 0.0 && spec.bag_fraction <= 1.0))
      throw std::invalid_argument("bagged_tree: bag_fraction outside (0,1]");
    const int m = int(X.rows());
    const int nb = std::max(1, int(std::floor(spec.bag_fraction * m)));
    trees_.resize(size_t(spec.tree_count));
    for (int t = 0; t < spec.tree_count; ++t) {
      CounterRng rng(seed, std::uint64_t(t));
      std::vector<int> rows(static_cast<size_t>(nb));
      for (int i = 0; i < nb; ++i) rows[size_t(i)] = int(rng.next_u64() % std::uint64_t(m));
      trees_[size_t(t)].fit(X, y, std::move(rows), spec.tree_depth, spec.min_leaf);
    }
  }
  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const override {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(X.rows());
    for (const RegressionTree& tree : trees_) {
      for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) += tree.predict_row(X, i);
    }
    return out / double(trees_.size());
  }
  std::string name() const override { return "bagged_tree"; }

 private:
  std::vector<RegressionTree> trees_;
};

}  // namespace detail

inline LearnerPtr fit_learner(const LearnerSpec& spec, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              std::uint64_t seed = 0) {
  detail::check_xy(X, y);
  switch (spec.kind) {
    case LearnerKind::mean:
      return std::make_shared<detail::MeanLearner>(y.mean());
    case LearnerKind::linear:
      return std::make_shared<detail::LinearLearner>(X, y, false);
    case LearnerKind::interaction_linear:
      return std::make_shared<detail::LinearLearner>(X, y, true);
    case LearnerKind::ridge:
      return std::make_shared<detail::RidgeLearner>(X, y, spec.ridge_lambdas);
    case LearnerKind::logistic:
      return std::make_shared<detail::LogisticLearner>(X, y);
    case LearnerKind::bagged_tree:
      return std::make_shared<detail::BaggedTreeLearner>(X, y, spec, seed);
  }
  throw std::logic_error("unknown learner kind");
}

struct SimplexSolution {
  Eigen::VectorXd weights;
  double sse = 0.0;
  int iterations = 0;
  double kkt_gap = 0.0;
};

namespace detail {

// One exponentiated-gradient run from a given start; objective is the sum of
// squared errors expressed through the Gram matrix. Step halving keeps the
// objective non-increasing when the fixed step would overshoot.
inline SimplexSolution eg_descent(const Eigen::MatrixXd& gram, const Eigen::VectorXd& xty, double yty,
                                  Eigen::VectorXd w) {
  const Eigen::Index L = w.size();
  const double gnorm = gram.norm();
  SimplexSolution sol;
  auto sse = [&](const Eigen::VectorXd& v) { return v.dot(gram * v) - 2.0 * v.dot(xty) + yty; };
  if (gnorm <= 0.0) {
    sol.weights = std::move(w);
    sol.sse = yty;
    return sol;
  }
  const double step = 0.5 / gnorm;
  const auto kkt_gap = [&](const Eigen::VectorXd& v, const Eigen::VectorXd& grad) {
    const double gmin = grad.minCoeff();
    double gap = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (v(i) > 1e-6) gap = std::max(gap, grad(i) - gmin);
    }
    return gap;
  };
  double obj = sse(w);
  int iter = 0;
  double change = std::numeric_limits<double>::infinity();
  int stalled = 0;
  Eigen::VectorXd grad = 2.0 * (gram * w - xty);
  for (; iter < 5000; ++iter) {
    // The small-objective-change exit also demands the KKT tolerance: the
    // objective can flatten numerically while active gradients still differ.
    if (change < 1e-12 && kkt_gap(w, grad) <= 1e-6) break;
    if (change < 1e-15 && ++stalled > 50) break;
    if (change >= 1e-15) stalled = 0;
    double scale = 1.0;
    Eigen::VectorXd cand(L);
    double cand_obj = obj;
    for (int halving = 0; halving < 30; ++halving) {
      Eigen::VectorXd ex = -step * scale * grad;
      const double shift = ex.maxCoeff();
      cand = w.cwiseProduct((ex.array() - shift).exp().matrix());
      cand /= cand.sum();
      cand_obj = sse(cand);
      if (cand_obj <= obj) break;
      scale *= 0.5;
    }
    if (cand_obj > obj) break;
    change = obj - cand_obj;
    w = std::move(cand);
    obj = cand_obj;
    grad = 2.0 * (gram * w - xty);
  }
  sol.weights = std::move(w);
  sol.sse = obj;
  sol.iterations = iter;
  sol.kkt_gap = kkt_gap(sol.weights, grad);
  return sol;
}

}  // namespace detail

// argmin over the probability simplex of ||Pw - y||^2.
inline SimplexSolution solve_simplex_ls_full(const Eigen::MatrixXd& P, const Eigen::VectorXd& y) {
  if (P.cols() < 1) throw std::invalid_argument("solve_simplex_ls: no columns");
  if (P.rows() != y.size()) throw std::invalid_argument("solve_simplex_ls: P rows != y length");
  const Eigen::Index L = P.cols();
  const Eigen::MatrixXd gram = P.transpose() * P;
  const Eigen::VectorXd xty = P.transpose() * y;
  const double yty = y.squaredNorm();
  if (L == 1) {
    SimplexSolution sol;
    sol.weights = Eigen::VectorXd::Ones(1);
    sol.sse = gram(0, 0) - 2.0 * xty(0) + yty;
    return sol;
  }
  SimplexSolution sol =
      detail::eg_descent(gram, xty, yty, Eigen::VectorXd::Constant(L, 1.0 / double(L)));
  // If a vertex beats the interior solution (slow convergence on an
  // ill-conditioned Gram matrix), restart the descent near that vertex.
  Eigen::Index best_vertex = 0;
  double best_vertex_sse = std::numeric_limits<double>::infinity();
  for (Eigen::Index l = 0; l < L; ++l) {
    const double s = gram(l, l) - 2.0 * xty(l) + yty;
    if (s < best_vertex_sse) {
      best_vertex_sse = s;
      best_vertex = l;
    }
  }
  if (best_vertex_sse < sol.sse - 1e-12) {
    Eigen::VectorXd start = Eigen::VectorXd::Constant(L, 1e-4 / double(L));
    start(best_vertex) = 1.0 - 1e-4 * (1.0 - 1.0 / double(L));
    start /= start.sum();
    SimplexSolution retry = detail::eg_descent(gram, xty, yty, std::move(start));
    if (retry.sse < sol.sse) sol = std::move(retry);
  }
  return sol;
}

inline Eigen::VectorXd solve_simplex_ls(const Eigen::MatrixXd& P, const Eigen::VectorXd& y) {
  return solve_simplex_ls_full(P, y).weights;
}

enum class FoldScheme { shuffled, contiguous };

namespace detail {

// Fold assignment for stacking. Shuffled folds stratify on the response for
// binary tasks; contiguous folds are time-ordered blocks for serially
// dependent rows.
inline std::vector<int> stack_folds(Eigen::Index m, int K, const Eigen::VectorXd& y, Task task,
                                    std::uint64_t seed, FoldScheme scheme) {
  std::vector<int> fold(size_t(m), 0);
  if (scheme == FoldScheme::contiguous) {
    for (Eigen::Index i = 0; i < m; ++i) fold[size_t(i)] = int((i * Eigen::Index(K)) / m);
    return fold;
  }
  CounterRng rng(seed, 0);
  if (task == Task::binary_prob) {
    std::vector<std::uint64_t> zeros, ones;
    for (Eigen::Index i = 0; i < m; ++i) (y(i) == 1.0 ? ones : zeros).push_back(std::uint64_t(i));
    shuffle(zeros, rng);
    shuffle(ones, rng);
    for (size_t pos = 0; pos < zeros.size(); ++pos) fold[size_t(zeros[pos])] = int(pos % size_t(K));
    for (size_t pos = 0; pos < ones.size(); ++pos) fold[size_t(ones[pos])] = int(pos % size_t(K));
  } else {
    std::vector<std::uint64_t> perm(static_cast<size_t>(m));
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    shuffle(perm, rng);
    for (size_t pos = 0; pos < perm.size(); ++pos) fold[size_t(perm[pos])] = int(pos % size_t(K));
  }
  return fold;
}

}  // namespace detail

struct StackedModel {
  std::vector<LearnerSpec> library;
  std::vector<LearnerPtr> fitted;     // empty pointer where the learner failed
  Eigen::VectorXd weights;            // simplex weights; 0 where the learner failed
  Task task = Task::regression;
  double cv_risk = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> learner_risks;  // out-of-fold MSE per learner; +inf where failed
  std::vector<std::string> warnings;

  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(X.rows());
    for (size_t l = 0; l < fitted.size(); ++l) {
      if (!fitted[l] || weights(Eigen::Index(l)) <= 0.0) continue;
      Eigen::VectorXd p = fitted[l]->predict(X);
      if (task == Task::binary_prob) p = p.cwiseMax(0.0).cwiseMin(1.0);
      out += weights(Eigen::Index(l)) * p;
    }
    if (task == Task::binary_prob) out = out.cwiseMax(kClipEps).cwiseMin(1.0 - kClipEps);
    return out;
  }
};

inline StackedModel cv_stack(const std::vector<LearnerSpec>& library, const Eigen::MatrixXd& X,
                             const Eigen::VectorXd& y, int K, std::uint64_t seed, Task task,
                             FoldScheme scheme = FoldScheme::shuffled) {
  detail::check_xy(X, y);
  if (library.empty()) throw std::invalid_argument("cv_stack: empty learner library");
  if (K < 2) throw std::invalid_argument("cv_stack: K must be at least 2");
  const Eigen::Index m = X.rows();
  if (m < 2 * Eigen::Index(K)) throw std::invalid_argument("cv_stack: need at least 2K samples");
  if (task == Task::binary_prob) {
    for (Eigen::Index i = 0; i < m; ++i) {
      if (y(i) != 0.0 && y(i) != 1.0) throw std::invalid_argument("cv_stack: binary task needs 0/1 responses");
    }
  }
  const size_t L = library.size();
  StackedModel model;
  model.library = library;
  model.task = task;
  model.fitted.assign(L, nullptr);
  model.learner_risks.assign(L, std::numeric_limits<double>::infinity());

  const std::vector<int> fold = detail::stack_folds(m, K, y, task, seed, scheme);
  std::vector<std::vector<Eigen::Index>> fold_rows;
  fold_rows.resize(size_t(K));
  for (Eigen::Index i = 0; i < m; ++i) fold_rows[size_t(fold[size_t(i)])].push_back(i);

  Eigen::MatrixXd oof = Eigen::MatrixXd::Zero(m, Eigen::Index(L));
  std::vector<char> failed(L, 0);
  for (int k = 0; k < K; ++k) {
    const std::vector<Eigen::Index>& test_rows = fold_rows[size_t(k)];
    const Eigen::Index mtr = m - Eigen::Index(test_rows.size());
    Eigen::MatrixXd x_tr(mtr, X.cols());
    Eigen::VectorXd y_tr(mtr);
    Eigen::MatrixXd x_te(Eigen::Index(test_rows.size()), X.cols());
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (fold[size_t(i)] == k) continue;
      x_tr.row(r) = X.row(i);
      y_tr(r) = y(i);
      ++r;
    }
    for (size_t t = 0; t < test_rows.size(); ++t) x_te.row(Eigen::Index(t)) = X.row(test_rows[t]);
    for (size_t l = 0; l < L; ++l) {
      if (failed[l]) continue;
      try {
        const LearnerPtr f =
            fit_learner(library[l], x_tr, y_tr, mix_seed(seed, std::uint64_t(l) * 0x10001u + std::uint64_t(k) + 1));
        if (f->fit_warning()) model.warnings.push_back(f->warning_message());
        Eigen::VectorXd p = f->predict(x_te);
        if (task == Task::binary_prob) p = p.cwiseMax(0.0).cwiseMin(1.0);
        if (!p.allFinite()) throw std::runtime_error("non-finite out-of-fold predictions");
        for (size_t t = 0; t < test_rows.size(); ++t) oof(test_rows[t], Eigen::Index(l)) = p(Eigen::Index(t));
      } catch (const std::exception& e) {
        failed[l] = 1;
        model.warnings.push_back(std::string("learner ") + learner_kind_name(library[l].kind) +
                                 " disabled (fold fit failed: " + e.what() + ")");
      }
    }
  }

  std::vector<Eigen::Index> alive;
  for (size_t l = 0; l < L; ++l) {
    if (!failed[l]) alive.push_back(Eigen::Index(l));
  }
  if (alive.empty()) throw std::runtime_error("cv_stack: every learner failed during cross-validation");

  Eigen::MatrixXd p_alive(m, Eigen::Index(alive.size()));
  for (size_t a = 0; a < alive.size(); ++a) {
    p_alive.col(Eigen::Index(a)) = oof.col(alive[a]);
    model.learner_risks[size_t(alive[a])] = (oof.col(alive[a]) - y).squaredNorm() / double(m);
  }
  SimplexSolution sol = solve_simplex_ls_full(p_alive, y);
  if (sol.kkt_gap > 1e-6) {
    model.warnings.push_back("stacking weights: KKT gap " + std::to_string(sol.kkt_gap) + " exceeds 1e-6");
  }
  model.weights = Eigen::VectorXd::Zero(Eigen::Index(L));
  for (size_t a = 0; a < alive.size(); ++a) model.weights(alive[a]) = sol.weights(Eigen::Index(a));
  model.cv_risk = sol.sse / double(m);

  for (const Eigen::Index l : alive) {
    try {
      model.fitted[size_t(l)] =
          fit_learner(library[size_t(l)], X, y, mix_seed(seed, 0xF00D0000u + std::uint64_t(l)));
      if (model.fitted[size_t(l)]->fit_warning())
        model.warnings.push_back(model.fitted[size_t(l)]->warning_message());
    } catch (const std::exception& e) {
      model.warnings.push_back(std::string("learner ") + learner_kind_name(library[size_t(l)].kind) +
                               " disabled (full-data fit failed: " + e.what() + ")");
      model.fitted[size_t(l)] = nullptr;
      model.weights(l) = 0.0;
    }
  }
  const double wsum = model.weights.sum();
  if (wsum <= 0.0) throw std::runtime_error("cv_stack: no usable learner after full-data refit");
  model.weights /= wsum;
  return model;
}

inline std::vector<LearnerSpec> default_library(Task task) {
  std::vector<LearnerSpec> lib;
  lib.push_back({LearnerKind::mean});
  if (task == Task::binary_prob) {
    lib.push_back({LearnerKind::logistic});
  } else {
    lib.push_back({LearnerKind::linear});
  }
  lib.push_back({LearnerKind::ridge});
  lib.push_back({LearnerKind::interaction_linear});
  lib.push_back({LearnerKind::bagged_tree});
  return lib;
}

}  // namespace medrobust
