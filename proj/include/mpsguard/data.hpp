#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mpsguard/errors.hpp"
#include "mpsguard/mps.hpp"
#include "mpsguard/rng.hpp"
#include "mpsguard/tensor.hpp"

namespace mpsguard {

enum class FeatureKind { binary, continuous };
enum class FeatureRole { relevant, irrelevant, label };

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::binary;
  FeatureRole role = FeatureRole::relevant;
  std::array<double, 2> levels{0.0, 1.0};  // the two raw values of a binary feature
  double lo = 0.0;                         // min-max bounds of a continuous feature
  double hi = 1.0;
  std::vector<std::string> categories;     // CSV spelling of levels[0], levels[1]
  bool date_parity = false;                // CSV cell is a date; value is the day-of-month parity
};

/// Class index (0 or 1) of a binary value.
inline int binary_class(const FeatureSpec& f, double value) {
  if (value == f.levels[0]) return 0;
  if (value == f.levels[1]) return 1;
  throw DataError("feature '" + f.name + "': value " + std::to_string(value) + " is not one of its levels");
}

struct Dataset {
  std::vector<FeatureSpec> schema;
  std::vector<std::vector<double>> rows;

  std::size_t size() const noexcept { return rows.size(); }

  std::size_t feature_index(const std::string& name) const {
    for (std::size_t i = 0; i < schema.size(); ++i)
      if (schema[i].name == name) return i;
    throw DataError("unknown feature '" + name + "'");
  }

  std::size_t label_index() const {
    for (std::size_t i = 0; i < schema.size(); ++i)
      if (schema[i].role == FeatureRole::label) return i;
    throw DataError("dataset has no label feature");
  }

  /// Schema positions of every non-label feature, in order.
  std::vector<std::size_t> input_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < schema.size(); ++i)
      if (schema[i].role != FeatureRole::label) out.push_back(i);
    return out;
  }

  int label_of(std::size_t row) const {
    const std::size_t li = label_index();
    return binary_class(schema[li], rows[row][li]);
  }

  void validate() const {
    std::size_t labels = 0;
    for (const auto& f : schema) labels += f.role == FeatureRole::label;
    if (labels != 1) throw DataError("schema must contain exactly one label feature");
    if (schema[label_index()].kind != FeatureKind::binary) throw DataError("label must be binary");
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != schema.size())
        throw DataError("row " + std::to_string(r) + " does not match schema arity", r + 1);
      for (std::size_t i = 0; i < schema.size(); ++i)
        if (schema[i].kind == FeatureKind::binary) binary_class(schema[i], rows[r][i]);
    }
  }
};

/// Target Pearson matrix over named features.
struct CorrelationTarget {
  std::vector<std::string> names;
  Tensor matrix;

  void validate(double tol = 1e-9) const {
    const std::size_t n = names.size();
    if (matrix.shape() != Shape{n, n}) throw DataError("correlation target: matrix shape does not match names");
    for (std::size_t i = 0; i < n; ++i) {
      if (matrix(i, i) != 1.0) throw DataError("correlation target: diagonal must be 1");
      for (std::size_t j = 0; j < n; ++j) {
        if (matrix(i, j) != matrix(j, i)) throw DataError("correlation target: not symmetric");
        if (std::abs(matrix(i, j)) > 1.0) throw DataError("correlation target: entry outside [-1, 1]");
      }
    }
    Eigen::MatrixXd a(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) a(i, j) = matrix(i, j);
    const double lmin = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(a).eigenvalues().minCoeff();
    if (lmin < -tol) throw DataError("correlation target is not positive semidefinite (min eigenvalue " +
                                     std::to_string(lmin) + ")");
  }
};

/// Pearson coefficients between the columns of the COVID-19 outcome dataset
/// (global.health, Argentina and Colombia, 2021-03-22 snapshot), in the order
/// report-date parity, country, age, gender, symptoms, recovery.
inline CorrelationTarget surrogate_targets() {
  const double upper[6][6] = {
      {1, 0.005, 0.001, 0.001, -0.012, -0.002},
      {0, 1, 0.059, 0.033, 0.161, -0.055},
      {0, 0, 1, -0.010, 0.128, -0.707},
      {0, 0, 0, 1, 0.004, 0.078},
      {0, 0, 0, 0, 1, -0.143},
      {0, 0, 0, 0, 0, 1},
  };
  CorrelationTarget t{{"parity", "country", "age", "gender", "symptoms", "recovery"}, Tensor({6, 6})};
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) t.matrix(i, j) = i <= j ? upper[i][j] : upper[j][i];
  return t;
}

/// Schema of the surrogate medical dataset; feature order matches `surrogate_targets()`.
inline std::vector<FeatureSpec> surrogate_schema() {
  std::vector<FeatureSpec> s(6);
  s[0] = {"parity", FeatureKind::binary, FeatureRole::irrelevant, {0, 1}, 0, 1, {}, true};
  s[1] = {"country", FeatureKind::binary, FeatureRole::relevant, {0, 1}, 0, 1, {"Argentina", "Colombia"}, false};
  s[2] = {"age", FeatureKind::continuous, FeatureRole::relevant, {0, 1}, 0, 100, {}, false};
  s[3] = {"gender", FeatureKind::binary, FeatureRole::relevant, {0, 1}, 0, 1, {"Female", "Male"}, false};
  s[4] = {"symptoms", FeatureKind::binary, FeatureRole::relevant, {0, 1}, 0, 1, {"Asymptomatic", "Symptomatic"}, false};
  s[5] = {"recovery", FeatureKind::binary, FeatureRole::label, {0, 1}, 0, 1, {"Death", "Recovered"}, false};
  return s;
}

// ---------------------------------------------------------------------------
// Generators

/// Toy data: x_rel ~ N(0,1), x_irr fixed at `majority_sign`, label = [x_rel > 0].
inline Dataset gen_toy(std::size_t n, int majority_sign, std::uint64_t seed) {
  if (n == 0) throw DataError("gen_toy: n must be positive");
  if (majority_sign != 1 && majority_sign != -1) throw DataError("gen_toy: majority sign must be +1 or -1");
  Dataset d;
  d.schema = {
      {"x_rel", FeatureKind::continuous, FeatureRole::relevant, {0, 1}, -4.0, 4.0, {}, false},
      {"x_irr", FeatureKind::binary, FeatureRole::irrelevant, {-1.0, 1.0}, 0, 1, {}, false},
      {"label", FeatureKind::binary, FeatureRole::label, {0, 1}, 0, 1, {}, false},
  };
  Rng rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  d.rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = nd(rng);
    d.rows.push_back({x, static_cast<double>(majority_sign), x > 0.0 ? 1.0 : 0.0});
  }
  return d;
}

namespace detail {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double normal_quantile(double p) {
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (normal_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

/// Marginal transform of one latent gaussian coordinate in the copula.
struct Marginal {
  bool binary = true;
  double prob_one = 0.5;  // binary: P(class 1)
  double lo = 0.0, hi = 1.0;

  bool constant() const { return binary && (prob_one <= 0.0 || prob_one >= 1.0); }

  double apply(double z, double threshold) const {
    if (binary) return z > threshold ? 1.0 : 0.0;
    return lo + (hi - lo) * normal_cdf(z);
  }
};

/// Latent correlations whose discretized images have the requested Pearson
/// coefficients, found pair by pair with a fixed-point iteration on a fixed
/// calibration sample.
inline Eigen::MatrixXd calibrate_latent(const std::vector<Marginal>& marg, const Tensor& target,
                                        std::size_t samples = 100000, int rounds = 20) {
  const std::size_t k = marg.size();
  Eigen::MatrixXd latent = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  Rng rng(0x5eed'c0b1'a5ULL);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> z1(samples), e(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    z1[i] = nd(rng);
    e[i] = nd(rng);
  }
  std::vector<double> thr(k);
  for (std::size_t i = 0; i < k; ++i)
    thr[i] = marg[i].binary && !marg[i].constant() ? normal_quantile(1.0 - marg[i].prob_one) : 0.0;

  std::vector<double> x(samples), y(samples);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      const double want = target(i, j);
      double rho = 0.0;
      if (!marg[i].constant() && !marg[j].constant() && want != 0.0) {
        for (std::size_t s = 0; s < samples; ++s) x[s] = marg[i].apply(z1[s], thr[i]);
        rho = want;
        for (int r = 0; r < rounds; ++r) {
          const double c = std::sqrt(1.0 - rho * rho);
          for (std::size_t s = 0; s < samples; ++s) y[s] = marg[j].apply(rho * z1[s] + c * e[s], thr[j]);
          const double got = pearson(x, y);
          if (std::abs(got - want) < 1e-4) break;
          rho = std::clamp(rho + (want - got), -0.995, 0.995);
        }
      }
      latent(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rho;
      latent(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = rho;
    }
  return latent;
}

/// Square root of a correlation matrix, clipping negative eigenvalues.
inline Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& c) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
  Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
  Eigen::MatrixXd f = es.eigenvectors() * lam.cwiseSqrt().asDiagonal();
  // renormalize rows so the implied matrix keeps a unit diagonal after clipping
  for (Eigen::Index r = 0; r < f.rows(); ++r) {
    const double nrm = f.row(r).norm();
    if (nrm > 0) f.row(r) /= nrm;
  }
  return f;
}

}  // namespace detail

struct SurrogateOptions {
  /// P(class 1) for each binary feature other than the irrelevant one; empty = all 0.5.
  std::vector<double> prob_one;
};

/// Gaussian-copula surrogate of the medical dataset.
///
/// Latent gaussians with calibrated correlations are pushed through
/// rank-based marginals: binary columns get exactly round(q n) ones, the
/// continuous column is mapped to evenly spaced ranks on [lo, hi]. The
/// irrelevant feature takes `irrelevant_majority` in round(p n) rows.
inline Dataset gen_surrogate(std::size_t n, int irrelevant_majority, double p, const CorrelationTarget& targets,
                             std::uint64_t seed, const SurrogateOptions& opts = {}) {
  targets.validate();
  if (!(p >= 0.5 && p <= 1.0)) throw DataError("gen_surrogate: majority fraction must lie in [0.5, 1]");
  if (irrelevant_majority != 0 && irrelevant_majority != 1) throw DataError("gen_surrogate: majority must be 0 or 1");
  if (n == 0) throw DataError("gen_surrogate: n must be positive");

  Dataset d;
  d.schema = surrogate_schema();
  const std::size_t k = d.schema.size();
  if (targets.names.size() != k) throw DataError("gen_surrogate: target must cover the surrogate schema");
  for (std::size_t i = 0; i < k; ++i)
    if (targets.names[i] != d.schema[i].name)
      throw DataError("gen_surrogate: target feature order must be " + d.schema[i].name + " at " + std::to_string(i));

  std::vector<detail::Marginal> marg(k);
  std::size_t other = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const auto& f = d.schema[i];
    if (f.kind == FeatureKind::continuous) {
      marg[i] = {false, 0.5, f.lo, f.hi};
    } else if (f.role == FeatureRole::irrelevant) {
      marg[i] = {true, irrelevant_majority == 1 ? p : 1.0 - p, 0, 1};
    } else {
      marg[i] = {true, other < opts.prob_one.size() ? opts.prob_one[other] : 0.5, 0, 1};
      ++other;
    }
  }

  const Eigen::MatrixXd factor = detail::psd_factor(detail::calibrate_latent(marg, targets.matrix));
  Rng rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<std::vector<double>> latent(k, std::vector<double>(n));
  Eigen::VectorXd g(static_cast<Eigen::Index>(k));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < k; ++i) g(static_cast<Eigen::Index>(i)) = nd(rng);
    const Eigen::VectorXd z = factor * g;
    for (std::size_t i = 0; i < k; ++i) latent[i][r] = z(static_cast<Eigen::Index>(i));
  }

  d.rows.assign(n, std::vector<double>(k, 0.0));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < k; ++i) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return latent[i][a] < latent[i][b]; });
    if (marg[i].binary) {
      const auto ones = static_cast<std::size_t>(std::llround(marg[i].prob_one * static_cast<double>(n)));
      for (std::size_t pos = 0; pos < n; ++pos)
        d.rows[order[pos]][i] = d.schema[i].levels[pos >= n - ones ? 1 : 0];
    } else {
      for (std::size_t pos = 0; pos < n; ++pos)
        d.rows[order[pos]][i] =
            marg[i].lo + (marg[i].hi - marg[i].lo) * (static_cast<double>(pos) + 0.5) / static_cast<double>(n);
    }
  }
  return d;
}

/// Empirical Pearson matrix over all schema columns.
inline Tensor empirical_correlation(const Dataset& d) {
  const std::size_t k = d.schema.size();
  std::vector<std::vector<double>> cols(k, std::vector<double>(d.size()));
  for (std::size_t r = 0; r < d.size(); ++r)
    for (std::size_t i = 0; i < k; ++i) cols[i][r] = d.rows[r][i];
  Tensor c({k, k});
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) c(i, j) = i == j ? 1.0 : detail::pearson(cols[i], cols[j]);
  return c;
}

/// Draws n rows without replacement so that exactly round(p n) of them have
/// `feature` == `majority_value` and the rest the other level.
inline Dataset sample_biased(const Dataset& d, const std::string& feature, double majority_value, double p,
                             std::size_t n, std::uint64_t seed) {
  const std::size_t fi = d.feature_index(feature);
  const auto& spec = d.schema[fi];
  if (spec.kind != FeatureKind::binary) throw DataError("sample_biased: feature '" + feature + "' is not binary");
  if (!(p >= 0.0 && p <= 1.0)) throw DataError("sample_biased: p must lie in [0, 1]");
  const int major = binary_class(spec, majority_value);

  std::vector<std::size_t> strata[2];
  for (std::size_t r = 0; r < d.size(); ++r) strata[binary_class(spec, d.rows[r][fi])].push_back(r);
  const auto want_major = static_cast<std::size_t>(std::llround(p * static_cast<double>(n)));
  const std::size_t want[2] = {major == 0 ? want_major : n - want_major, major == 1 ? want_major : n - want_major};

  Rng rng(seed);
  std::vector<std::size_t> picked;
  picked.reserve(n);
  for (int c = 0; c < 2; ++c) {
    auto& s = strata[c];
    if (s.size() < want[c])
      throw DataError("sample_biased: need " + std::to_string(want[c]) + " rows with " + feature + " class " +
                      std::to_string(c) + ", have " + std::to_string(s.size()));
    for (std::size_t i = 0; i < want[c]; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, s.size() - 1);
      std::swap(s[i], s[pick(rng)]);
      picked.push_back(s[i]);
    }
  }
  std::shuffle(picked.begin(), picked.end(), rng);
  Dataset out;
  out.schema = d.schema;
  out.rows.reserve(n);
  for (std::size_t r : picked) out.rows.push_back(d.rows[r]);
  return out;
}

/// Keeps the first `cap` rows of every combination of the listed binary features.
inline Dataset balance_strata(const Dataset& d, const std::vector<std::string>& features, std::size_t cap) {
  std::vector<std::size_t> idx;
  for (const auto& f : features) idx.push_back(d.feature_index(f));
  std::map<std::vector<int>, std::size_t> seen;
  Dataset out;
  out.schema = d.schema;
  for (const auto& row : d.rows) {
    std::vector<int> key;
    for (std::size_t i : idx) key.push_back(binary_class(d.schema[i], row[i]));
    if (seen[key]++ < cap) out.rows.push_back(row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  cells.push_back(std::move(cur));
  return cells;
}

/// Day of month of a "YYYY-MM-DD" (optionally followed by a time) date.
inline int day_of_month(const std::string& s, std::size_t line) {
  int y = 0, m = 0, day = 0;
  if (std::sscanf(s.c_str(), "%d-%d-%d", &y, &m, &day) != 3 || m < 1 || m > 12 || day < 1 || day > 31)
    throw DataError("line " + std::to_string(line) + ": '" + s + "' is not a YYYY-MM-DD date", line);
  return day;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

struct IngestResult {
  Dataset data;
  std::size_t dropped = 0;  // rows with at least one empty cell
};

/// Reads a CSV whose header names every schema feature (extra columns are ignored).
/// Lines starting with '#' before the header are skipped.
inline IngestResult ingest_csv(std::istream& in, const std::vector<FeatureSpec>& schema) {
  std::string line;
  std::size_t lineno = 0;
  do {  // leading "#" lines are provenance comments
    if (!std::getline(in, line)) throw DataError("ingest_csv: no header row", lineno + 1);
    ++lineno;
  } while (!line.empty() && line[0] == '#');
  const auto header = detail::split_csv_line(line);
  std::vector<std::size_t> column(schema.size());
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const auto it = std::find(header.begin(), header.end(), schema[i].name);
    if (it == header.end()) throw DataError("ingest_csv: header lacks column '" + schema[i].name + "'", lineno);
    column[i] = static_cast<std::size_t>(it - header.begin());
  }

  IngestResult res;
  res.data.schema = schema;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError("line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                          " cells, got " + std::to_string(cells.size()),
                      lineno);
    bool empty = false;
    for (std::size_t c : column) empty = empty || cells[c].empty();
    if (empty) {
      ++res.dropped;
      continue;
    }
    std::vector<double> row(schema.size());
    for (std::size_t i = 0; i < schema.size(); ++i) {
      const auto& f = schema[i];
      const std::string& cell = cells[column[i]];
      if (f.kind == FeatureKind::continuous) {
        char* end = nullptr;
        row[i] = std::strtod(cell.c_str(), &end);
        if (end == cell.c_str() || *end != '\0')
          throw DataError("line " + std::to_string(lineno) + ": '" + cell + "' is not a number", lineno);
      } else if (f.date_parity) {
        row[i] = f.levels[detail::day_of_month(cell, lineno) % 2];
      } else if (!f.categories.empty()) {
        const auto it = std::find(f.categories.begin(), f.categories.end(), cell);
        if (it == f.categories.end())
          throw DataError("line " + std::to_string(lineno) + ": unknown category '" + cell + "' for " + f.name,
                          lineno);
        row[i] = f.levels[static_cast<std::size_t>(it - f.categories.begin())];
      } else {
        char* end = nullptr;
        const double v = std::strtod(cell.c_str(), &end);
        if (end == cell.c_str() || *end != '\0' || (v != f.levels[0] && v != f.levels[1]))
          throw DataError("line " + std::to_string(lineno) + ": unknown category '" + cell + "' for " + f.name,
                          lineno);
        row[i] = v;
      }
    }
    res.data.rows.push_back(std::move(row));
  }
  return res;
}

inline IngestResult ingest_csv(const std::string& path, const std::vector<FeatureSpec>& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("ingest_csv: cannot open '" + path + "'");
  return ingest_csv(in, schema);
}

/// Writes a CSV that `ingest_csv` reads back to the same rows. Parity
/// features are written as 2000-01-02 (even) or 2000-01-01 (odd).
inline void export_csv(std::ostream& os, const Dataset& d) {
  for (std::size_t i = 0; i < d.schema.size(); ++i) os << (i ? "," : "") << d.schema[i].name;
  os << '\n';
  for (const auto& row : d.rows) {
    for (std::size_t i = 0; i < d.schema.size(); ++i) {
      const auto& f = d.schema[i];
      if (i) os << ',';
      if (f.kind == FeatureKind::continuous) {
        os << detail::format_double(row[i]);
      } else {
        const int c = binary_class(f, row[i]);
        if (f.date_parity)
          os << (c == 0 ? "2000-01-02" : "2000-01-01");
        else if (!f.categories.empty())
          os << f.categories[static_cast<std::size_t>(c)];
        else
          os << detail::format_double(row[i]);
      }
    }
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Encodings

struct EncodedTable {
  std::vector<std::vector<double>> x;
  std::vector<int> y;
};

/// Network inputs: one-hot pair per binary feature, min-max scaled value per continuous one.
inline EncodedTable encode_onehot(const Dataset& d) {
  const auto inputs = d.input_indices();
  EncodedTable t;
  t.x.reserve(d.size());
  t.y.reserve(d.size());
  for (std::size_t r = 0; r < d.size(); ++r) {
    std::vector<double> x;
    for (std::size_t i : inputs) {
      const auto& f = d.schema[i];
      if (f.kind == FeatureKind::binary) {
        const int c = binary_class(f, d.rows[r][i]);
        x.push_back(c == 0 ? 1.0 : 0.0);
        x.push_back(c == 1 ? 1.0 : 0.0);
      } else {
        x.push_back(std::clamp((d.rows[r][i] - f.lo) / (f.hi - f.lo), 0.0, 1.0));
      }
    }
    t.x.push_back(std::move(x));
    t.y.push_back(d.label_of(r));
  }
  return t;
}

inline std::size_t onehot_width(const Dataset& d) {
  std::size_t w = 0;
  for (std::size_t i : d.input_indices()) w += d.schema[i].kind == FeatureKind::binary ? 2 : 1;
  return w;
}

/// Feature map for the MPS over the non-label features, in schema order.
inline FeatureMap mps_feature_map(const Dataset& d, double epsilon = 5e-2) {
  FeatureMap fm;
  fm.epsilon = epsilon;
  for (std::size_t i : d.input_indices()) {
    const auto& f = d.schema[i];
    if (f.kind == FeatureKind::binary)
      fm.features.push_back(BinaryNoisy{f.levels[0], f.levels[1]});
    else
      fm.features.push_back(ContinuousMinMax{f.lo, f.hi});
  }
  return fm;
}

/// Non-label values of one row, in schema order.
inline std::vector<double> raw_inputs(const Dataset& d, std::size_t row) {
  std::vector<double> out;
  for (std::size_t i : d.input_indices()) out.push_back(d.rows[row][i]);
  return out;
}

}  // namespace mpsguard
