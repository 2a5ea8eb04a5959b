#pragma once
// Run configuration: one JSON document with sections {intra, learners,
// estimator, inference, simulate}. Every default is explicit here and every
// resolved value is echoed back into the run manifest, so an output directory
// fully describes the run that produced it. Unknown keys are rejected —
// a silently ignored typo would make runs lie about their settings.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "medrobust/estimator.hpp"
#include "medrobust/harness.hpp"
#include "medrobust/inference.hpp"
#include "medrobust/intra.hpp"
#include "medrobust/learners.hpp"
#include "medrobust/simulation.hpp"
#include "medrobust/version.hpp"

namespace medrobust {

struct IntraConfig {
  std::string method = "ensemble";  // 12p | 12p_scrub | ensemble
  double scrub_threshold = 3.0;
  double scrub_max_removed = 0.35;
  std::string fd_mode = "abs_sum";  // abs_sum | diff_abs_sum
  double clamp_eps = 1e-7;
  int ensemble_folds = 5;
};

struct LearnerConfig {
  std::vector<std::string> intra_library = {"mean", "linear",
                                            "interaction_linear", "bagged_tree"};
  std::vector<std::string> regression_library = {
      "mean", "linear", "ridge", "interaction_linear", "bagged_tree"};
  std::vector<std::string> binary_library = {"mean", "logistic", "ridge",
                                             "interaction_linear", "bagged_tree"};
  int stack_folds = 5;
};

struct EstimatorConfig {
  std::string target = "nde";  // nde | nie | ate | psi:a:a'
  int folds = 5;
  std::uint64_t seed = 1;
};

struct InferenceConfig {
  double alpha = 0.05;          // pointwise/simultaneous CI level is 1-alpha
  double fdp_c = 0.1;           // FDP exceedance fraction
  double fdp_alpha = 0.1;       // exceedance probability bound
  double variance_floor = 1e-6; // informative-outcome screen
  int boot_b = 1000;            // multiplier bootstrap draws
};

struct SimulateConfig {
  int n = 150;
  int t = 300;
  int reps = 100;
  double rho = 0.3;
  double fd_spike_threshold = 2.0;
  bool noise_scales_are_variances = false;
  std::vector<std::string> methods = {"12p_linear", "12p_linear_m",
                                      "12p_scrub_linear", "12p_scrub_linear_m",
                                      "sl_aipw"};
  std::vector<double> truth = {0.3, 0.0};
  double alpha = 0.05;  // rejection level for the metrics table
};

struct RunConfig {
  IntraConfig intra;
  LearnerConfig learners;
  EstimatorConfig estimator;
  InferenceConfig inference;
  SimulateConfig simulate;
  std::uint64_t seed = 1;  // top-level run seed (flag-overridable)
};

// --- JSON <-> RunConfig --------------------------------------------------

inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["intra"] = {{"method", c.intra.method},
                {"scrub_threshold", c.intra.scrub_threshold},
                {"scrub_max_removed", c.intra.scrub_max_removed},
                {"fd_mode", c.intra.fd_mode},
                {"clamp_eps", c.intra.clamp_eps},
                {"ensemble_folds", c.intra.ensemble_folds}};
  j["learners"] = {{"intra_library", c.learners.intra_library},
                   {"regression_library", c.learners.regression_library},
                   {"binary_library", c.learners.binary_library},
                   {"stack_folds", c.learners.stack_folds}};
  j["estimator"] = {{"target", c.estimator.target},
                    {"folds", c.estimator.folds},
                    {"seed", c.estimator.seed}};
  j["inference"] = {{"alpha", c.inference.alpha},
                    {"fdp_c", c.inference.fdp_c},
                    {"fdp_alpha", c.inference.fdp_alpha},
                    {"variance_floor", c.inference.variance_floor},
                    {"boot_b", c.inference.boot_b}};
  j["simulate"] = {
      {"n", c.simulate.n},
      {"t", c.simulate.t},
      {"reps", c.simulate.reps},
      {"rho", c.simulate.rho},
      {"fd_spike_threshold", c.simulate.fd_spike_threshold},
      {"noise_scales_are_variances", c.simulate.noise_scales_are_variances},
      {"methods", c.simulate.methods},
      {"truth", c.simulate.truth},
      {"alpha", c.simulate.alpha}};
  j["seed"] = c.seed;
  return j;
}

namespace detail {

template <typename T>
void take(nlohmann::json& section, const char* key, T& into) {
  if (!section.contains(key)) return;
  into = section.at(key).get<T>();
  section.erase(key);
}

inline void reject_leftovers(const nlohmann::json& section,
                             const std::string& where) {
  if (section.empty()) return;
  std::string keys;
  for (const auto& item : section.items())
    keys += (keys.empty() ? "" : ", ") + item.key();
  throw std::invalid_argument("config: unknown key(s) in " + where + ": " +
                              keys);
}

}  // namespace detail

inline RunConfig config_from_json(nlohmann::json j) {
  RunConfig c;
  if (!j.is_object())
    throw std::invalid_argument("config: the document must be a JSON object");
  if (j.contains("intra")) {
    nlohmann::json s = j.at("intra");
    detail::take(s, "method", c.intra.method);
    detail::take(s, "scrub_threshold", c.intra.scrub_threshold);
    detail::take(s, "scrub_max_removed", c.intra.scrub_max_removed);
    detail::take(s, "fd_mode", c.intra.fd_mode);
    detail::take(s, "clamp_eps", c.intra.clamp_eps);
    detail::take(s, "ensemble_folds", c.intra.ensemble_folds);
    detail::reject_leftovers(s, "intra");
    j.erase("intra");
  }
  if (j.contains("learners")) {
    nlohmann::json s = j.at("learners");
    detail::take(s, "intra_library", c.learners.intra_library);
    detail::take(s, "regression_library", c.learners.regression_library);
    detail::take(s, "binary_library", c.learners.binary_library);
    detail::take(s, "stack_folds", c.learners.stack_folds);
    detail::reject_leftovers(s, "learners");
    j.erase("learners");
  }
  if (j.contains("estimator")) {
    nlohmann::json s = j.at("estimator");
    detail::take(s, "target", c.estimator.target);
    detail::take(s, "folds", c.estimator.folds);
    detail::take(s, "seed", c.estimator.seed);
    detail::reject_leftovers(s, "estimator");
    j.erase("estimator");
  }
  if (j.contains("inference")) {
    nlohmann::json s = j.at("inference");
    detail::take(s, "alpha", c.inference.alpha);
    detail::take(s, "fdp_c", c.inference.fdp_c);
    detail::take(s, "fdp_alpha", c.inference.fdp_alpha);
    detail::take(s, "variance_floor", c.inference.variance_floor);
    detail::take(s, "boot_b", c.inference.boot_b);
    detail::reject_leftovers(s, "inference");
    j.erase("inference");
  }
  if (j.contains("simulate")) {
    nlohmann::json s = j.at("simulate");
    detail::take(s, "n", c.simulate.n);
    detail::take(s, "t", c.simulate.t);
    detail::take(s, "reps", c.simulate.reps);
    detail::take(s, "rho", c.simulate.rho);
    detail::take(s, "fd_spike_threshold", c.simulate.fd_spike_threshold);
    detail::take(s, "noise_scales_are_variances",
                 c.simulate.noise_scales_are_variances);
    detail::take(s, "methods", c.simulate.methods);
    detail::take(s, "truth", c.simulate.truth);
    detail::take(s, "alpha", c.simulate.alpha);
    detail::reject_leftovers(s, "simulate");
    j.erase("simulate");
  }
  if (j.contains("seed")) {
    c.seed = j.at("seed").get<std::uint64_t>();
    j.erase("seed");
  }
  detail::reject_leftovers(j, "the top level");
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("config: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config: '" + path + "' is not valid JSON: " +
                             e.what());
  }
  try {
    return config_from_json(std::move(j));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config: '" + path + "': " + e.what());
  }
}

// --- converters to library option structs --------------------------------

inline std::vector<LearnerSpec> library_from_names(
    const std::vector<std::string>& names) {
  if (names.empty())
    throw std::invalid_argument("config: a learner library cannot be empty");
  std::vector<LearnerSpec> lib;
  lib.reserve(names.size());
  for (const std::string& name : names)
    lib.push_back({learner_kind_from_name(name)});
  return lib;
}

inline IntraStage intra_stage_from_name(const std::string& method) {
  if (method == "12p") return IntraStage::motion_12p;
  if (method == "12p_scrub") return IntraStage::motion_12p_scrub;
  if (method == "ensemble") return IntraStage::stacked_ensemble;
  throw std::invalid_argument(
      "config: unknown intra method '" + method +
      "' (expected one of: 12p, 12p_scrub, ensemble)");
}

inline FdMode fd_mode_from_name(const std::string& name) {
  if (name == "abs_sum") return FdMode::abs_sum;
  if (name == "diff_abs_sum") return FdMode::diff_abs_sum;
  throw std::invalid_argument("config: unknown fd_mode '" + name +
                              "' (expected abs_sum or diff_abs_sum)");
}

inline IntraOptions make_intra_options(const RunConfig& c) {
  IntraOptions opt;
  opt.scrub_threshold = c.intra.scrub_threshold;
  opt.scrub_max_removed = c.intra.scrub_max_removed;
  opt.fd_mode = fd_mode_from_name(c.intra.fd_mode);
  opt.ensemble_library = library_from_names(c.learners.intra_library);
  opt.ensemble_folds = c.intra.ensemble_folds;
  opt.clamp_eps = c.intra.clamp_eps;
  opt.seed = c.seed;
  return opt;
}

inline EstimateOptions make_estimate_options(const RunConfig& c) {
  EstimateOptions opt;
  opt.target = parse_target(c.estimator.target);
  opt.folds = c.estimator.folds;
  opt.stack_folds = c.learners.stack_folds;
  opt.seed = c.estimator.seed;
  opt.stacks.regression_library =
      library_from_names(c.learners.regression_library);
  opt.stacks.binary_library = library_from_names(c.learners.binary_library);
  opt.stacks.stack_folds = c.learners.stack_folds;
  return opt;
}

inline FdpConfig make_fdp_config(const RunConfig& c) {
  FdpConfig cfg;
  cfg.c = c.inference.fdp_c;
  cfg.alpha = c.inference.fdp_alpha;
  cfg.c0 = c.inference.variance_floor;
  cfg.b_draws = c.inference.boot_b;
  cfg.seed = c.seed;
  return cfg;
}

inline DgpConfig make_dgp_config(const RunConfig& c) {
  DgpConfig cfg;
  cfg.n = c.simulate.n;
  cfg.t = c.simulate.t;
  cfg.rho = c.simulate.rho;
  cfg.fd_spike_threshold = c.simulate.fd_spike_threshold;
  cfg.noise_scales_are_variances = c.simulate.noise_scales_are_variances;
  cfg.seed = c.seed;
  return cfg;
}

// --- manifest support -----------------------------------------------------

inline std::uint64_t fnv1a_hash(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= static_cast<std::uint64_t>(ch);
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string config_hash(const RunConfig& c) {
  // nlohmann objects serialize with sorted keys, so the dump is canonical
  const std::string dump = config_to_json(c).dump();
  std::ostringstream hex;
  hex << std::hex << fnv1a_hash(dump);
  return hex.str();
}

// Shared manifest skeleton: version, the fully resolved configuration, its
// hash, and the run seed. No timestamps — reruns must be byte-identical.
inline nlohmann::json manifest_base(const std::string& command,
                                    const RunConfig& c) {
  nlohmann::json m;
  m["version"] = version_string;
  m["command"] = command;
  m["config"] = config_to_json(c);
  m["config_hash"] = config_hash(c);
  m["seed"] = c.seed;
  return m;
}

}  // namespace medrobust
