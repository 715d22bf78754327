// Dataset container, CSV ingestion/emission, the synthetic step-function
// generator, and held-out evaluation metrics.
#pragma once

#include "lgp/common.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace lgp {

// Filesystem and parse failures; the CLI maps these to its "io" exit code.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StandardizeStats {
  Vec x_mean, x_std;  // per feature; zero-variance features keep std 1
  double y_mean = 0.0;
  double y_std = 1.0;
};

struct Dataset {
  Mat x;
  Vec y;
  std::vector<std::string> feature_names;
  std::string target_name;
  std::optional<StandardizeStats> stats;  // present once standardized

  Index n() const { return x.rows(); }
  Index dim() const { return x.cols(); }
};

struct LoadResult {
  Dataset data;
  Index rows_skipped = 0;
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, delim)) out.push_back(cell);
  if (!line.empty() && line.back() == delim) out.push_back("");
  return out;
}

inline bool parse_cell(const std::string& cell, double& out) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  out = std::strtod(begin, &end);
  if (end == begin) return false;
  while (*end == ' ' || *end == '\t' || *end == '\r') ++end;
  return *end == '\0' && std::isfinite(out);
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

// Reads a headered CSV, extracts `target_column` as y, and keeps every other
// column as a feature.  Rows that do not parse to finite numbers in every
// column are skipped and counted.
inline LoadResult load_csv(const std::string& path, const std::string& target_column,
                           char delimiter = ',') {
  std::ifstream in(path);
  if (!in) throw IoError("load_csv: cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw IoError("load_csv: '" + path + "' is empty");
  const auto header = detail::split_line(line, delimiter);
  require(!header.empty(), "load_csv: empty header row");

  Index target_idx = -1;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name = detail::trim(header[c]);
    if (name == target_column)
      target_idx = static_cast<Index>(c);
    else
      names.push_back(name);
  }
  if (target_idx < 0)
    throw ContractError("load_csv: target column '" + target_column +
                        "' not found in header");

  const std::size_t width = header.size();
  std::vector<double> xvals, yvals;
  Index skipped = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_line(line, delimiter);
    if (cells.size() != width) {
      ++skipped;
      continue;
    }
    std::vector<double> row(width);
    bool ok = true;
    for (std::size_t c = 0; c < width && ok; ++c)
      ok = detail::parse_cell(detail::trim(cells[c]), row[c]);
    if (!ok) {
      ++skipped;
      continue;
    }
    for (std::size_t c = 0; c < width; ++c) {
      if (static_cast<Index>(c) == target_idx)
        yvals.push_back(row[c]);
      else
        xvals.push_back(row[c]);
    }
  }

  const Index n = static_cast<Index>(yvals.size());
  const Index d = static_cast<Index>(width) - 1;
  if (n < 2)
    throw IoError("load_csv: fewer than 2 usable rows in '" + path + "' (" +
                  std::to_string(skipped) + " skipped)");
  require(d >= 1, "load_csv: no feature columns besides the target");

  LoadResult res;
  res.rows_skipped = skipped;
  res.data.feature_names = names;
  res.data.target_name = target_column;
  res.data.x.resize(n, d);
  res.data.y.resize(n);
  for (Index i = 0; i < n; ++i) {
    res.data.y(i) = yvals[static_cast<std::size_t>(i)];
    for (Index c = 0; c < d; ++c)
      res.data.x(i, c) = xvals[static_cast<std::size_t>(i * d + c)];
  }
  return res;
}

// Writes a headered CSV with enough digits to round-trip doubles exactly.
inline void save_csv(const std::string& path, const std::vector<std::string>& columns,
                     const Mat& values) {
  require(static_cast<Index>(columns.size()) == values.cols(),
          "save_csv: header/value width mismatch");
  std::ofstream out(path);
  if (!out) throw IoError("save_csv: cannot open '" + path + "' for writing");
  for (std::size_t c = 0; c < columns.size(); ++c)
    out << (c ? "," : "") << columns[c];
  out << "\n";
  char buf[32];
  for (Index i = 0; i < values.rows(); ++i) {
    for (Index c = 0; c < values.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", values(i, c));
      out << (c ? "," : "") << buf;
    }
    out << "\n";
  }
  if (!out) throw IoError("save_csv: write to '" + path + "' failed");
}

inline void save_csv(const std::string& path, const Dataset& data) {
  Mat values(data.n(), data.dim() + 1);
  values.leftCols(data.dim()) = data.x;
  values.col(data.dim()) = data.y;
  std::vector<std::string> columns = data.feature_names;
  columns.push_back(data.target_name.empty() ? "y" : data.target_name);
  save_csv(path, columns, values);
}

// Noise-free step response: four fixed discontinuities, values 0/1/0/1/0.
inline double step_value(double x) {
  if (x < 0.2) return 0.0;
  if (x < 0.4) return 1.0;
  if (x < 0.6) return 0.0;
  if (x < 0.8) return 1.0;
  return 0.0;
}

inline Dataset gen_step(Index n, double noise_sd, std::uint64_t seed) {
  require(n >= 10, "gen_step: need at least 10 points");
  require(noise_sd >= 0.0, "gen_step: negative noise");
  Rng rng(seed);
  std::uniform_real_distribution<double> ux(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset d;
  d.x.resize(n, 1);
  d.y.resize(n);
  d.feature_names = {"x"};
  d.target_name = "y";
  for (Index i = 0; i < n; ++i) {
    d.x(i, 0) = ux(rng);
    d.y(i) = step_value(d.x(i, 0)) + (noise_sd > 0.0 ? noise_sd * noise(rng) : 0.0);
  }
  return d;
}

struct EvalReport {
  double rmse = 0.0;
  double nlpd = 0.0;        // mean per-point Gaussian negative log density
  double coverage95 = 0.0;  // fraction inside the central 95% interval
  Index n = 0;
};

// `variance` must be the observation variance (latent variance + sigma^2).
inline EvalReport evaluate_predictions(const Vec& mean, const Vec& variance,
                                       const Vec& y) {
  const Index n = y.size();
  require(mean.size() == n && variance.size() == n, "evaluate_predictions: size mismatch");
  require(n >= 1, "evaluate_predictions: empty input");
  EvalReport r;
  r.n = n;
  double sq = 0.0, nlpd = 0.0;
  Index inside = 0;
  for (Index i = 0; i < n; ++i) {
    const double err = y(i) - mean(i);
    const double v = std::max(variance(i), 1e-300);
    sq += err * err;
    nlpd += 0.5 * std::log(2.0 * M_PI * v) + 0.5 * err * err / v;
    if (std::abs(err) <= 1.959963984540054 * std::sqrt(v)) ++inside;
  }
  r.rmse = std::sqrt(sq / static_cast<double>(n));
  r.nlpd = nlpd / static_cast<double>(n);
  r.coverage95 = static_cast<double>(inside) / static_cast<double>(n);
  return r;
}

}  // namespace lgp
