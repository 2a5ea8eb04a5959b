#pragma once

// Data model: one record per subject (treatment, confounders, mediator,
// multivariate time series), plus the pair indexing used for derived
// region-pair outcomes.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace medrobust {

struct SubjectRecord {
  std::string id;
  int treatment = 0;            // binary arm indicator in {0,1}
  Eigen::VectorXd confounders;  // length q
  double mediator = 0.0;
  Eigen::MatrixXd response;     // V x T, the series the outcomes are built from
  Eigen::MatrixXd nuisance;     // p x T, the measured intra-subject nuisance
  bool usable = true;           // cleared when processing rules a subject out
};

struct CohortDims {
  int n = 0;      // subjects
  int q = 0;      // confounders
  int p = 0;      // nuisance channels
  int v = 0;      // response regions
  int t_min = 0;  // shortest series
  int t_max = 0;  // longest series
};

struct CohortDataset {
  std::vector<SubjectRecord> subjects;

  CohortDims dims() const {
    CohortDims d;
    d.n = static_cast<int>(subjects.size());
    if (d.n == 0) return d;
    d.q = static_cast<int>(subjects.front().confounders.size());
    d.p = static_cast<int>(subjects.front().nuisance.rows());
    d.v = static_cast<int>(subjects.front().response.rows());
    d.t_min = static_cast<int>(subjects.front().response.cols());
    d.t_max = d.t_min;
    for (const auto& s : subjects) {
      const int t = static_cast<int>(s.response.cols());
      d.t_min = std::min(d.t_min, t);
      d.t_max = std::max(d.t_max, t);
    }
    return d;
  }
};

// One derived outcome per unordered region pair (v, v'), v < v', in
// lexicographic order; j is the flat index.
struct PairIndex {
  int j = 0;
  int v = 0;
  int v_prime = 0;
};

inline std::vector<PairIndex> pair_index(int v_count) {
  if (v_count < 2)
    throw std::invalid_argument("pair_index: need at least 2 regions");
  std::vector<PairIndex> pairs;
  pairs.reserve(static_cast<std::size_t>(v_count) * (v_count - 1) / 2);
  int j = 0;
  for (int v = 0; v < v_count; ++v)
    for (int w = v + 1; w < v_count; ++w) pairs.push_back({j++, v, w});
  return pairs;
}

inline int pair_count(int v_count) {
  if (v_count < 2)
    throw std::invalid_argument("pair_count: need at least 2 regions");
  return v_count * (v_count - 1) / 2;
}

// Flat index of the pair (v, v_prime); inverse of pair_index ordering.
inline int pair_to_flat(int v, int v_prime, int v_count) {
  if (v_prime <= v || v < 0 || v_prime >= v_count)
    throw std::invalid_argument("pair_to_flat: need 0 <= v < v' < regions");
  return v * (2 * v_count - v - 1) / 2 + (v_prime - v - 1);
}

enum class OutcomeKind { fisher_z_corr, raw_cross_product };

// n x J matrix of derived outcomes; rows follow cohort subject order.
struct DerivedOutcomeMatrix {
  Eigen::MatrixXd values;
  std::vector<PairIndex> pairs;
  OutcomeKind kind = OutcomeKind::fisher_z_corr;
};

// Human-readable label a la "z(1,2)" using 1-based region numbers, which
// is the convention the serialized headers use.
inline std::string pair_label(const PairIndex& p) {
  return "z(" + std::to_string(p.v + 1) + "," + std::to_string(p.v_prime + 1) + ")";
}

// Structural checks on a cohort; returns one message per violation.
// Callers decide whether any given message is fatal.
inline std::vector<std::string> validate_cohort(const CohortDataset& data) {
  std::vector<std::string> problems;
  const int n = static_cast<int>(data.subjects.size());
  if (n < 2) {
    problems.push_back("cohort has fewer than 2 subjects");
    return problems;
  }
  int treated = 0, control = 0;
  const auto& first = data.subjects.front();
  const auto q = first.confounders.size();
  const auto p = first.nuisance.rows();
  const auto v = first.response.rows();
  for (const auto& s : data.subjects) {
    if (s.treatment == 1)
      ++treated;
    else if (s.treatment == 0)
      ++control;
    else
      problems.push_back("subject " + s.id + ": treatment not in {0,1}");
    if (!std::isfinite(s.mediator))
      problems.push_back("subject " + s.id + ": non-finite mediator");
    if (!s.confounders.allFinite())
      problems.push_back("subject " + s.id + ": non-finite confounder");
    if (s.confounders.size() != q)
      problems.push_back("subject " + s.id + ": confounder count differs from cohort");
    if (s.nuisance.rows() != p)
      problems.push_back("subject " + s.id + ": nuisance channel count differs from cohort");
    if (s.response.rows() != v)
      problems.push_back("subject " + s.id + ": region count differs from cohort");
    if (s.response.cols() != s.nuisance.cols())
      problems.push_back("subject " + s.id + ": response and nuisance lengths differ");
    if (s.response.cols() < 3)
      problems.push_back("subject " + s.id + ": series shorter than 3 points");
  }
  if (treated == 0) problems.push_back("treated arm is empty");
  if (control == 0) problems.push_back("control arm is empty");
  if (v < 2) problems.push_back("fewer than 2 response regions");
  return problems;
}

}  // namespace medrobust
