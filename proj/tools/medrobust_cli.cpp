// Command-line front end: `simulate` runs the replication study over the
// built-in generator, `estimate` ingests a cohort directory and reports
// per-outcome effect estimates with pointwise and simultaneous intervals,
// `infer` re-runs the discovery procedure on an exported influence matrix.
//
// Exit codes: 0 success, 1 runtime/data error, 2 usage error.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "medrobust/config.hpp"
#include "medrobust/estimator.hpp"
#include "medrobust/harness.hpp"
#include "medrobust/inference.hpp"
#include "medrobust/io.hpp"
#include "medrobust/simulation.hpp"
#include "medrobust/version.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void write_manifest(const json& manifest, const std::string& out_dir) {
  std::ofstream out(fs::path(out_dir) / "manifest.json");
  if (!out)
    throw medrobust::IoError("cannot open '" +
                             (fs::path(out_dir) / "manifest.json").string() +
                             "' for writing");
  out << manifest.dump(2) << "\n";
}

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
};

medrobust::RunConfig resolve_config(const CLI::App* cmd,
                                    const CommonFlags& common) {
  medrobust::RunConfig cfg;
  if (!common.config_path.empty())
    cfg = medrobust::load_config(common.config_path);
  if (cmd->count("--seed")) {
    cfg.seed = common.seed;
    cfg.estimator.seed = common.seed;
  }
  return cfg;
}

int cmd_simulate(const CLI::App* cmd, const CommonFlags& common, int n, int t,
                 int reps, double rho, double alpha, int folds,
                 const std::vector<std::string>& methods) {
  medrobust::RunConfig cfg = resolve_config(cmd, common);
  if (cmd->count("--n")) cfg.simulate.n = n;
  if (cmd->count("--t")) cfg.simulate.t = t;
  if (cmd->count("--reps")) cfg.simulate.reps = reps;
  if (cmd->count("--rho")) cfg.simulate.rho = rho;
  if (cmd->count("--alpha")) cfg.simulate.alpha = alpha;
  if (cmd->count("--folds")) cfg.estimator.folds = folds;
  if (cmd->count("--methods")) cfg.simulate.methods = methods;

  std::vector<medrobust::MethodPipeline> pipelines;
  for (const std::string& token : cfg.simulate.methods)
    pipelines.push_back(medrobust::parse_method_token(token));

  medrobust::ReplicationConfig rc;
  rc.dgp = medrobust::make_dgp_config(cfg);
  rc.reps = cfg.simulate.reps;
  rc.base_seed = cfg.seed;
  rc.truth = Eigen::Map<const Eigen::VectorXd>(
      cfg.simulate.truth.data(),
      static_cast<Eigen::Index>(cfg.simulate.truth.size()));
  rc.options.intra = medrobust::make_intra_options(cfg);
  rc.options.estimator = medrobust::make_estimate_options(cfg);
  rc.options.alpha = cfg.simulate.alpha;

  const medrobust::MetricsTable table = medrobust::replicate(rc, pipelines);

  fs::create_directories(common.out_dir);
  medrobust::write_metrics_tsv(
      table, (fs::path(common.out_dir) / "metrics.tsv").string());
  medrobust::write_records_tsv(
      table, (fs::path(common.out_dir) / "estimates.tsv").string());

  json manifest = medrobust::manifest_base("simulate", cfg);
  manifest["outputs"] = {"metrics.tsv", "estimates.tsv"};
  manifest["pipelines"] = json::array();
  for (const auto& p : pipelines) manifest["pipelines"].push_back(p.label);
  manifest["failed_replications"] = table.failures.size();
  manifest["failures"] = table.failures;
  write_manifest(manifest, common.out_dir);
  std::cout << "wrote " << table.cells.size() << " metric cells and "
            << table.records.size() << " replication records to "
            << common.out_dir << "\n";
  return 0;
}

int cmd_estimate(const CLI::App* cmd, const CommonFlags& common,
                 const std::string& data_dir, const std::string& target,
                 double alpha, double fdp_c, double fdp_alpha, int boot_b,
                 int folds, bool emit_influence) {
  medrobust::RunConfig cfg = resolve_config(cmd, common);
  if (cmd->count("--target")) cfg.estimator.target = target;
  if (cmd->count("--alpha")) cfg.inference.alpha = alpha;
  if (cmd->count("--fdp-c")) cfg.inference.fdp_c = fdp_c;
  if (cmd->count("--fdp-alpha")) cfg.inference.fdp_alpha = fdp_alpha;
  if (cmd->count("--boot-b")) cfg.inference.boot_b = boot_b;
  if (cmd->count("--folds")) cfg.estimator.folds = folds;

  medrobust::CohortDataset data = medrobust::read_cohort_csv(data_dir);
  const std::vector<std::string> problems = medrobust::validate_cohort(data);
  if (!problems.empty()) {
    std::string joined;
    for (const std::string& p : problems) joined += "\n  " + p;
    throw std::runtime_error("cohort validation failed:" + joined);
  }

  const medrobust::IntraStage stage =
      medrobust::intra_stage_from_name(cfg.intra.method);
  const medrobust::DerivedCohort derived = medrobust::derive_cohort_outcomes(
      data, stage, medrobust::make_intra_options(cfg));
  for (std::size_t i = 0; i < data.subjects.size(); ++i)
    data.subjects[i].usable = derived.usable[i] != 0;

  const medrobust::EstimateReport report = medrobust::estimate_target(
      data, derived.outcomes, medrobust::make_estimate_options(cfg));

  const medrobust::FdpConfig fdp = medrobust::make_fdp_config(cfg);
  const medrobust::TestReport tests =
      medrobust::run_inference(report.influence.values, report.estimate, fdp,
                               cfg.inference.alpha);

  std::vector<std::string> labels;
  for (const auto& pair : derived.outcomes.pairs)
    labels.push_back(medrobust::pair_label(pair));

  fs::create_directories(common.out_dir);
  const int n_used = static_cast<int>(report.subject_ids.size());
  medrobust::write_effects_tsv(
      labels, tests, n_used,
      (fs::path(common.out_dir) / "estimates.tsv").string());
  json manifest = medrobust::manifest_base("estimate", cfg);
  manifest["outputs"] = {"estimates.tsv"};
  if (emit_influence) {
    medrobust::write_influence_tsv(
        report.subject_ids, report.influence.values,
        (fs::path(common.out_dir) / "influence.tsv").string());
    manifest["outputs"].push_back("influence.tsv");
  }
  manifest["target"] = report.target.label();
  manifest["subjects_total"] = data.subjects.size();
  manifest["subjects_used"] = n_used;
  manifest["subjects_excluded"] = derived.excluded;
  manifest["exclusions"] = derived.notes;
  manifest["effective_folds"] = report.plan.folds;
  manifest["clip_evaluations"] = report.clip_evaluations;
  manifest["clip_hits"] = report.clip_hits;
  manifest["z_max"] = tests.z_max;
  json warnings = json::array();
  for (const std::string& w : report.warnings) warnings.push_back(w);
  for (const std::string& w : tests.warnings) warnings.push_back(w);
  manifest["warnings"] = warnings;
  write_manifest(manifest, common.out_dir);
  std::cout << "estimated " << report.target.label() << " for "
            << report.estimate.size() << " outcomes over " << n_used
            << " subjects; results in " << common.out_dir << "\n";
  return 0;
}

int cmd_infer(const CLI::App* cmd, const CommonFlags& common,
              const std::string& data_path, double fdp_c, double fdp_alpha,
              int boot_b) {
  medrobust::RunConfig cfg = resolve_config(cmd, common);
  if (cmd->count("--fdp-c")) cfg.inference.fdp_c = fdp_c;
  if (cmd->count("--fdp-alpha")) cfg.inference.fdp_alpha = fdp_alpha;
  if (cmd->count("--boot-b")) cfg.inference.boot_b = boot_b;

  fs::path influence_path(data_path);
  if (fs::is_directory(influence_path))
    influence_path /= "influence.tsv";
  if (!fs::exists(influence_path))
    throw medrobust::IoError("no influence matrix at '" +
                             influence_path.string() +
                             "' (run estimate with --emit-influence first)");
  const auto [ids, influence] =
      medrobust::read_influence_tsv(influence_path.string());
  const fs::path estimates_path =
      influence_path.parent_path() / "estimates.tsv";
  if (!fs::exists(estimates_path))
    throw medrobust::IoError("no estimate table at '" +
                             estimates_path.string() + "'");
  const Eigen::VectorXd estimate =
      medrobust::read_tsv_column(estimates_path.string(), "estimate");
  if (estimate.size() != influence.cols())
    throw medrobust::IoError(
        "estimate count does not match the influence matrix width");

  const medrobust::FdpConfig fdp = medrobust::make_fdp_config(cfg);
  const medrobust::FdpResult result =
      medrobust::stepdown_fdpex(influence, estimate, fdp);
  const medrobust::VarianceReport var =
      medrobust::variance_and_t(influence, estimate);
  Eigen::VectorXd t_abs = var.t;
  for (Eigen::Index j = 0; j < t_abs.size(); ++j)
    if (!std::isfinite(t_abs[j])) t_abs[j] = 0.0;

  fs::create_directories(common.out_dir);
  medrobust::write_discoveries_tsv(
      result, t_abs, (fs::path(common.out_dir) / "discoveries.tsv").string());
  medrobust::write_trace_tsv(
      result, (fs::path(common.out_dir) / "trace.tsv").string());

  json manifest = medrobust::manifest_base("infer", cfg);
  manifest["outputs"] = {"discoveries.tsv", "trace.tsv"};
  manifest["fdp_c"] = cfg.inference.fdp_c;
  manifest["fdp_alpha"] = cfg.inference.fdp_alpha;
  manifest["subjects"] = ids.size();
  manifest["outcomes"] = influence.cols();
  manifest["discoveries"] = result.discoveries.size();
  manifest["stepdown_discoveries"] = result.stepdown_set.size();
  manifest["augmented_discoveries"] = result.augmented.size();
  if (!result.trace.empty())
    manifest["z_max_initial"] = result.trace.front().z_max;
  manifest["warnings"] = result.warnings;
  write_manifest(manifest, common.out_dir);
  std::cout << "discovered " << result.discoveries.size() << " of "
            << influence.cols() << " outcomes ("
            << result.stepdown_set.size() << " step-down + "
            << result.augmented.size() << " augmented); results in "
            << common.out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multiply robust causal mediation analysis for derived outcomes"};
  app.set_version_flag("--version", medrobust::version_string);
  app.require_subcommand(1);

  // simulate ---------------------------------------------------------------
  CLI::App* sim = app.add_subcommand(
      "simulate", "run the replication study on the built-in generator");
  CommonFlags sim_common;
  int sim_n = 150, sim_t = 300, sim_reps = 100, sim_folds = 5;
  double sim_rho = 0.3, sim_alpha = 0.05;
  std::vector<std::string> sim_methods;
  sim->add_option("--n", sim_n, "subjects per replication")
      ->check(CLI::Range(4, 1000000));
  sim->add_option("--t", sim_t, "time points per subject")
      ->check(CLI::Range(3, 100000000));
  sim->add_option("--reps", sim_reps, "number of replications")
      ->check(CLI::Range(2, 100000000));
  sim->add_option("--rho", sim_rho, "serial carry-over of the innovations");
  sim->add_option("--seed", sim_common.seed, "base seed");
  sim->add_option("--methods", sim_methods,
                  "comma-separated method tokens (12p_linear, 12p_linear_m, "
                  "12p_scrub_linear, 12p_scrub_linear_m, sl_aipw)")
      ->delimiter(',');
  sim->add_option("--alpha", sim_alpha, "two-sided rejection level");
  sim->add_option("--folds", sim_folds, "cross-fitting folds for sl_aipw")
      ->check(CLI::Range(2, 1000));
  sim->add_option("--config", sim_common.config_path, "JSON configuration file")
      ->check(CLI::ExistingFile);
  sim->add_option("--out", sim_common.out_dir, "output directory")->required();

  // estimate ---------------------------------------------------------------
  CLI::App* est = app.add_subcommand(
      "estimate", "estimate mediation effects on an ingested cohort");
  CommonFlags est_common;
  std::string est_data, est_target = "nde";
  double est_alpha = 0.05, est_fdp_c = 0.1, est_fdp_alpha = 0.1;
  int est_boot_b = 1000, est_folds = 5;
  bool est_emit_influence = false;
  est->add_option("--data", est_data,
                  "cohort directory (subjects.csv + ts/)")
      ->required()
      ->check(CLI::ExistingDirectory);
  est->add_option("--target", est_target,
                  "causal contrast: nde, nie, ate, or psi:a:a'");
  est->add_option("--alpha", est_alpha, "interval level (1-alpha coverage)");
  est->add_option("--fdp-c", est_fdp_c, "tolerated false-discovery proportion");
  est->add_option("--fdp-alpha", est_fdp_alpha, "exceedance probability bound");
  est->add_option("--boot-b", est_boot_b, "multiplier bootstrap draws")
      ->check(CLI::Range(200, 100000000));
  est->add_option("--folds", est_folds, "cross-fitting folds")
      ->check(CLI::Range(2, 1000));
  est->add_option("--seed", est_common.seed, "run seed");
  est->add_flag("--emit-influence", est_emit_influence,
                "also write the per-subject influence matrix");
  est->add_option("--config", est_common.config_path, "JSON configuration file")
      ->check(CLI::ExistingFile);
  est->add_option("--out", est_common.out_dir, "output directory")->required();

  // infer --------------------------------------------------------------
  CLI::App* inf = app.add_subcommand(
      "infer", "run the step-down discovery procedure on an influence matrix");
  CommonFlags inf_common;
  std::string inf_data;
  double inf_fdp_c = 0.1, inf_fdp_alpha = 0.1;
  int inf_boot_b = 1000;
  inf->add_option("--data", inf_data,
                  "influence matrix file, or a directory containing "
                  "influence.tsv and estimates.tsv")
      ->required()
      ->check(CLI::ExistingPath);
  inf->add_option("--fdp-c", inf_fdp_c, "tolerated false-discovery proportion");
  inf->add_option("--fdp-alpha", inf_fdp_alpha, "exceedance probability bound");
  inf->add_option("--boot-b", inf_boot_b, "multiplier bootstrap draws")
      ->check(CLI::Range(200, 100000000));
  inf->add_option("--seed", inf_common.seed, "run seed");
  inf->add_option("--config", inf_common.config_path, "JSON configuration file")
      ->check(CLI::ExistingFile);
  inf->add_option("--out", inf_common.out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the usage error
    return code == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed())
      return cmd_simulate(sim, sim_common, sim_n, sim_t, sim_reps, sim_rho,
                          sim_alpha, sim_folds, sim_methods);
    if (est->parsed())
      return cmd_estimate(est, est_common, est_data, est_target, est_alpha,
                          est_fdp_c, est_fdp_alpha, est_boot_b, est_folds,
                          est_emit_influence);
    if (inf->parsed())
      return cmd_infer(inf, inf_common, inf_data, inf_fdp_c, inf_fdp_alpha,
                       inf_boot_b);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand\n";
  return 2;
}
