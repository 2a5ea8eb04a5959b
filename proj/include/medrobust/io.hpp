#pragma once
// File formats for the command-line tools.
//
// Cohort directories hold `subjects.csv` (header `id,A,M,W1,...,Wq`) plus one
// pair of per-subject series files `ts/<id>_X.csv` (T rows, columns X1..XV)
// and `ts/<id>_H.csv` (T rows, columns H1..Hp), comma-separated with '.'
// decimals. Result tables are TSV. Doubles are written with 17 significant
// digits so that export -> ingest reproduces every value bit for bit.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "medrobust/core.hpp"
#include "medrobust/harness.hpp"
#include "medrobust/inference.hpp"

namespace medrobust {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string format_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.push_back("");
  return out;
}

inline double parse_double(const std::string& field, const std::string& file,
                           std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size()) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    throw IoError(file + ":" + std::to_string(line_no) +
                  ": cannot parse '" + field + "' as a number");
  }
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  return out;
}

inline Eigen::MatrixXd read_series_csv(const std::string& path,
                                       const std::string& prefix) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw IoError(path + ":1: empty series file");
  const auto header = split_line(line, ',');
  const std::size_t v_count = header.size();
  if (v_count == 0) throw IoError(path + ":1: empty header");
  for (std::size_t k = 0; k < v_count; ++k) {
    const std::string expected = prefix + std::to_string(k + 1);
    if (header[k] != expected)
      throw IoError(path + ":1: expected column '" + expected + "', found '" +
                    header[k] + "'");
  }
  std::vector<double> values;
  std::size_t rows = 0, line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_line(line, ',');
    if (fields.size() != v_count)
      throw IoError(path + ":" + std::to_string(line_no) + ": expected " +
                    std::to_string(v_count) + " columns, found " +
                    std::to_string(fields.size()));
    for (const std::string& f : fields)
      values.push_back(parse_double(f, path, line_no));
    ++rows;
  }
  if (rows == 0) throw IoError(path + ": no data rows");
  // files are time-major (T rows); in memory series are channel-major (V x T)
  Eigen::MatrixXd series(static_cast<Eigen::Index>(v_count),
                         static_cast<Eigen::Index>(rows));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < v_count; ++k)
      series(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(r)) =
          values[r * v_count + k];
  return series;
}

inline void write_series_csv(const std::string& path,
                             const Eigen::MatrixXd& series,
                             const std::string& prefix) {
  std::ofstream out = open_out(path);
  for (Eigen::Index v = 0; v < series.rows(); ++v)
    out << (v ? "," : "") << prefix << (v + 1);
  out << "\n";
  for (Eigen::Index t = 0; t < series.cols(); ++t) {
    for (Eigen::Index v = 0; v < series.rows(); ++v)
      out << (v ? "," : "") << format_double(series(v, t));
    out << "\n";
  }
}

}  // namespace detail

// --- cohort directories ----------------------------------------------------

inline void write_cohort_csv(const CohortDataset& data, const std::string& dir) {
  if (data.subjects.empty())
    throw std::invalid_argument("write_cohort_csv: empty cohort");
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "ts");
  const Eigen::Index q = data.subjects.front().confounders.size();
  std::ofstream subjects =
      detail::open_out((fs::path(dir) / "subjects.csv").string());
  subjects << "id,A,M";
  for (Eigen::Index k = 0; k < q; ++k) subjects << ",W" << (k + 1);
  subjects << "\n";
  for (const SubjectRecord& s : data.subjects) {
    if (s.confounders.size() != q)
      throw std::invalid_argument(
          "write_cohort_csv: subjects disagree on the confounder count");
    subjects << s.id << "," << s.treatment << "," << format_double(s.mediator);
    for (Eigen::Index k = 0; k < q; ++k)
      subjects << "," << format_double(s.confounders[k]);
    subjects << "\n";
    detail::write_series_csv(
        (fs::path(dir) / "ts" / (s.id + "_X.csv")).string(), s.response, "X");
    detail::write_series_csv(
        (fs::path(dir) / "ts" / (s.id + "_H.csv")).string(), s.nuisance, "H");
  }
}

inline CohortDataset read_cohort_csv(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string subjects_path = (fs::path(dir) / "subjects.csv").string();
  std::ifstream in(subjects_path);
  if (!in) throw IoError("cannot open '" + subjects_path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw IoError(subjects_path + ":1: empty file");
  const auto header = detail::split_line(line, ',');
  if (header.size() < 3 || header[0] != "id" || header[1] != "A" ||
      header[2] != "M")
    throw IoError(subjects_path + ":1: header must start with 'id,A,M'");
  const std::size_t q = header.size() - 3;
  for (std::size_t k = 0; k < q; ++k) {
    const std::string expected = "W" + std::to_string(k + 1);
    if (header[3 + k] != expected)
      throw IoError(subjects_path + ":1: expected column '" + expected +
                    "', found '" + header[3 + k] + "'");
  }

  CohortDataset data;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = detail::split_line(line, ',');
    if (fields.size() != header.size())
      throw IoError(subjects_path + ":" + std::to_string(line_no) +
                    ": expected " + std::to_string(header.size()) +
                    " fields, found " + std::to_string(fields.size()));
    SubjectRecord s;
    s.id = fields[0];
    if (s.id.empty())
      throw IoError(subjects_path + ":" + std::to_string(line_no) +
                    ": empty subject id");
    if (fields[1] == "0")
      s.treatment = 0;
    else if (fields[1] == "1")
      s.treatment = 1;
    else
      throw IoError(subjects_path + ":" + std::to_string(line_no) +
                    ": treatment must be 0 or 1, found '" + fields[1] + "'");
    s.mediator = detail::parse_double(fields[2], subjects_path, line_no);
    s.confounders.resize(static_cast<Eigen::Index>(q));
    for (std::size_t k = 0; k < q; ++k)
      s.confounders[static_cast<Eigen::Index>(k)] =
          detail::parse_double(fields[3 + k], subjects_path, line_no);

    const std::string x_path =
        (fs::path(dir) / "ts" / (s.id + "_X.csv")).string();
    const std::string h_path =
        (fs::path(dir) / "ts" / (s.id + "_H.csv")).string();
    if (!fs::exists(x_path))
      throw IoError("subject " + s.id + ": missing series file '" + x_path +
                    "'");
    if (!fs::exists(h_path))
      throw IoError("subject " + s.id + ": missing series file '" + h_path +
                    "'");
    s.response = detail::read_series_csv(x_path, "X");
    s.nuisance = detail::read_series_csv(h_path, "H");
    if (s.response.cols() != s.nuisance.cols())
      throw IoError("subject " + s.id +
                    ": response and nuisance series lengths differ");
    s.usable = true;
    data.subjects.push_back(std::move(s));
  }
  if (data.subjects.empty())
    throw IoError(subjects_path + ": no subjects");
  return data;
}

// --- TSV tables -------------------------------------------------------------

inline void write_metrics_tsv(const MetricsTable& table,
                              const std::string& path) {
  std::ofstream out = detail::open_out(path);
  out << "method\toutcome\ttruth\tbias\tsd\tmse\trejection_rate\t"
         "replications\tfailed\texcluded_subjects\n";
  for (const MetricsCell& c : table.cells)
    out << c.label << "\t" << c.outcome << "\t" << format_double(c.truth)
        << "\t" << format_double(c.bias) << "\t" << format_double(c.sd) << "\t"
        << format_double(c.mse) << "\t" << format_double(c.rejection_rate)
        << "\t" << c.replications << "\t" << c.failed << "\t"
        << c.excluded_subjects << "\n";
}

inline void write_records_tsv(const MetricsTable& table,
                              const std::string& path) {
  std::ofstream out = detail::open_out(path);
  out << "rep\tmethod\toutcome\testimate\tse\tp\tfailed\texcluded_subjects\n";
  for (const ReplicationRecord& r : table.records) {
    if (r.failed) {
      out << r.rep << "\t" << r.label << "\t-\tnan\tnan\tnan\t1\t"
          << r.excluded_subjects << "\n";
      continue;
    }
    for (std::size_t j = 0; j < r.effects.size(); ++j)
      out << r.rep << "\t" << r.label << "\t" << j << "\t"
          << format_double(r.effects[j].estimate) << "\t"
          << format_double(r.effects[j].se) << "\t"
          << format_double(r.effects[j].p) << "\t0\t" << r.excluded_subjects
          << "\n";
  }
}

inline void write_influence_tsv(const std::vector<std::string>& ids,
                                const Eigen::MatrixXd& influence,
                                const std::string& path) {
  if (static_cast<Eigen::Index>(ids.size()) != influence.rows())
    throw std::invalid_argument("write_influence_tsv: id count differs");
  std::ofstream out = detail::open_out(path);
  out << "id";
  for (Eigen::Index j = 0; j < influence.cols(); ++j) out << "\tout_" << j;
  out << "\n";
  for (Eigen::Index i = 0; i < influence.rows(); ++i) {
    out << ids[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < influence.cols(); ++j)
      out << "\t" << format_double(influence(i, j));
    out << "\n";
  }
}

inline std::pair<std::vector<std::string>, Eigen::MatrixXd> read_influence_tsv(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ":1: empty file");
  const auto header = detail::split_line(line, '\t');
  if (header.size() < 2 || header[0] != "id")
    throw IoError(path + ":1: expected header 'id\tout_0...'");
  const std::size_t j_count = header.size() - 1;
  std::vector<std::string> ids;
  std::vector<double> values;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = detail::split_line(line, '\t');
    if (fields.size() != header.size())
      throw IoError(path + ":" + std::to_string(line_no) + ": expected " +
                    std::to_string(header.size()) + " fields, found " +
                    std::to_string(fields.size()));
    ids.push_back(fields[0]);
    for (std::size_t j = 0; j < j_count; ++j)
      values.push_back(detail::parse_double(fields[1 + j], path, line_no));
  }
  if (ids.empty()) throw IoError(path + ": no data rows");
  Eigen::MatrixXd influence(static_cast<Eigen::Index>(ids.size()),
                            static_cast<Eigen::Index>(j_count));
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < j_count; ++j)
      influence(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          values[i * j_count + j];
  return {std::move(ids), std::move(influence)};
}

// Per-outcome effect table written by the estimate command; the estimate
// column is machine-readable so downstream inference can re-use it.
inline void write_effects_tsv(const std::vector<std::string>& pair_labels,
                              const TestReport& report, int n_subjects,
                              const std::string& path) {
  const Eigen::Index j_count = report.estimate.size();
  if (static_cast<Eigen::Index>(pair_labels.size()) != j_count)
    throw std::invalid_argument("write_effects_tsv: label count differs");
  std::ofstream out = detail::open_out(path);
  out << "outcome\tpair\testimate\tse\tt\tci_low\tci_high\tsim_low\t"
         "sim_high\tinformative\tdiscovered\n";
  const double n = static_cast<double>(n_subjects);
  for (Eigen::Index j = 0; j < j_count; ++j) {
    const double se = std::sqrt(report.variance[j] / n);
    const bool discovered = report.discovered[static_cast<std::size_t>(j)];
    out << j << "\t" << pair_labels[static_cast<std::size_t>(j)] << "\t"
        << format_double(report.estimate[j]) << "\t" << format_double(se)
        << "\t" << format_double(report.t[j]) << "\t"
        << format_double(report.pointwise(j, 0)) << "\t"
        << format_double(report.pointwise(j, 1)) << "\t"
        << format_double(report.simultaneous(j, 0)) << "\t"
        << format_double(report.simultaneous(j, 1)) << "\t"
        << (report.informative[static_cast<std::size_t>(j)] ? 1 : 0) << "\t"
        << (discovered ? 1 : 0) << "\n";
  }
}

// Reads one named numeric column from a TSV written by this module.
inline Eigen::VectorXd read_tsv_column(const std::string& path,
                                       const std::string& column) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ":1: empty file");
  const auto header = detail::split_line(line, '\t');
  std::size_t col = header.size();
  for (std::size_t k = 0; k < header.size(); ++k)
    if (header[k] == column) col = k;
  if (col == header.size())
    throw IoError(path + ":1: no column named '" + column + "'");
  std::vector<double> values;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = detail::split_line(line, '\t');
    if (fields.size() != header.size())
      throw IoError(path + ":" + std::to_string(line_no) + ": expected " +
                    std::to_string(header.size()) + " fields, found " +
                    std::to_string(fields.size()));
    values.push_back(detail::parse_double(fields[col], path, line_no));
  }
  return Eigen::Map<const Eigen::VectorXd>(values.data(),
                                           static_cast<Eigen::Index>(values.size()));
}

inline void write_trace_tsv(const FdpResult& result, const std::string& path) {
  std::ofstream out = detail::open_out(path);
  out << "iteration\tkappa\tz_max\tremoved\tsurviving\n";
  for (std::size_t k = 0; k < result.trace.size(); ++k) {
    const StepdownStep& step = result.trace[k];
    out << k << "\t" << format_double(step.kappa) << "\t"
        << format_double(step.z_max) << "\t" << step.removed << "\t"
        << step.surviving << "\n";
  }
}

inline void write_discoveries_tsv(const FdpResult& result,
                                  const Eigen::VectorXd& t_stats,
                                  const std::string& path) {
  std::ofstream out = detail::open_out(path);
  out << "outcome\tt\tstage\n";
  for (int j : result.stepdown_set)
    out << j << "\t" << format_double(t_stats[j]) << "\tstepdown\n";
  for (int j : result.augmented)
    out << j << "\t" << format_double(t_stats[j]) << "\taugmented\n";
}

}  // namespace medrobust
