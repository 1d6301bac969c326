#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mpsguard/canonical.hpp"
#include "mpsguard/data.hpp"
#include "mpsguard/errors.hpp"
#include "mpsguard/mps.hpp"
#include "mpsguard/neural.hpp"
#include "mpsguard/parallel.hpp"
#include "mpsguard/rng.hpp"
#include "mpsguard/train.hpp"

namespace mpsguard {

// ---------------------------------------------------------------------------
// Victim variants

enum class Variant { nn, mps_raw, mps_svd, mps_svd_signs, mps_univocal };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::nn: return "nn";
    case Variant::mps_raw: return "mps-raw";
    case Variant::mps_svd: return "mps-svd";
    case Variant::mps_svd_signs: return "mps-svd+signs";
    case Variant::mps_univocal: return "mps-univocal";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::nn, Variant::mps_raw, Variant::mps_svd, Variant::mps_svd_signs, Variant::mps_univocal})
    if (s == variant_name(v)) return v;
  throw Error("unknown variant '" + s + "'");
}

inline bool is_mps(Variant v) { return v != Variant::nn; }

enum class MetaModel { logistic, mlp };

inline const char* meta_name(MetaModel m) { return m == MetaModel::logistic ? "logistic" : "mlp"; }

inline MetaModel parse_meta(const std::string& s) {
  if (s == "logistic") return MetaModel::logistic;
  if (s == "mlp") return MetaModel::mlp;
  throw Error("unknown meta-model '" + s + "'");
}

/// Logistic regression for network victims, the deep meta-network for MPS victims.
inline MetaModel default_meta(Variant v) { return is_mps(v) ? MetaModel::mlp : MetaModel::logistic; }

// ---------------------------------------------------------------------------
// Shadow configuration and records

struct ShadowConfig {
  std::vector<double> levels{0.5, 0.8, 1.0};
  std::vector<Variant> variants{Variant::nn, Variant::mps_raw, Variant::mps_univocal};
  std::size_t datasets_per_class = 10;  // datasets whose irrelevant feature leans to each value
  std::size_t attacked_per_class = 2;   // of those, how many go to the attacked side per repetition
  std::size_t models_per_dataset = 10;
  std::size_t rows_per_dataset = 1000;
  std::size_t repetitions = 50;
  std::string irrelevant_feature = "parity";
  std::size_t mps_bond_dim = 2;
  std::optional<std::size_t> mps_output_site;  // default: last site
  std::vector<std::size_t> nn_hidden{16, 16, 8, 4};
  std::uint64_t seed = 0;
  /// Seed stream for residual-gauge sampling; derived from `seed` when unset.
  std::optional<std::uint64_t> gauge_seed;
  /// Meta-model per variant; `default_meta` when unset.
  std::optional<MetaModel> meta;

  std::size_t datasets_per_level() const { return 2 * datasets_per_class; }

  void validate() const {
    if (levels.empty()) throw Error("shadow config: no imbalance levels");
    for (double p : levels)
      if (!(p >= 0.5 && p <= 1.0)) throw Error("shadow config: levels must lie in [0.5, 1]");
    if (variants.empty()) throw Error("shadow config: no variants");
    if (datasets_per_class == 0 || models_per_dataset == 0 || rows_per_dataset == 0 || repetitions == 0)
      throw Error("shadow config: counts must be positive");
    if (attacked_per_class == 0 || attacked_per_class >= datasets_per_class)
      throw Error("shadow config: attacked_per_class must lie in [1, datasets_per_class)");
    if (mps_bond_dim == 0) throw Error("shadow config: mps_bond_dim must be positive");
  }
};

struct ShadowRecord {
  std::size_t dataset = 0;
  std::size_t model = 0;
  int majority = 0;  // class index of the irrelevant feature's majority value
  double task_accuracy = 0.0;
  std::vector<double> params;
};

/// Records of one (level, variant) cell.
struct ShadowCell {
  double level = 0.0;
  Variant variant = Variant::nn;
  std::vector<ShadowRecord> records;
  std::size_t excluded = 0;  // models whose canonical form hit a singular intersection
  std::uint64_t key = 0;     // fingerprint of the settings that produced the records
};

struct ShadowRun {
  std::vector<ShadowCell> cells;  // level-major, then variants in config order

  const ShadowCell& cell(double level, Variant v) const {
    for (const auto& c : cells)
      if (c.level == level && c.variant == v) return c;
    throw Error(std::string("no records for variant ") + variant_name(v) + " at level " + std::to_string(level));
  }
};

struct ShadowInputs {
  Dataset pool;  // rows the biased datasets are drawn from
  Dataset test;  // held-out rows for task accuracy
};

inline int majority_of_dataset(std::size_t dataset) { return static_cast<int>(dataset % 2); }

namespace detail {

/// Post-processing of one trained MPS for a variant; nullopt when excluded.
inline std::optional<MpsModel> postprocess(const MpsModel& m, Variant v, std::uint64_t gauge_seed) {
  switch (v) {
    case Variant::nn:
    case Variant::mps_raw: return m;
    case Variant::mps_svd: return svd_canonical(m);
    case Variant::mps_svd_signs: {
      const MpsModel c = svd_canonical(m);
      return apply_gauge(c, sign_gauge(c, gauge_seed));
    }
    case Variant::mps_univocal:
      try {
        return skeleton_canonical(m);
      } catch (const SingularIntersectionError&) {
        return std::nullopt;
      }
  }
  return std::nullopt;
}

inline std::string coords(double level, std::size_t dataset, std::size_t model) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "(level %.4g, dataset %zu, model %zu)", level, dataset, model);
  return buf;
}

}  // namespace detail

/// Trains every shadow model and produces one record per (level, variant,
/// dataset, model). Network and MPS victims are trained once per coordinate
/// and then post-processed for each of their variants. Every task draws its
/// randomness from `derive_seed(cfg.seed, coordinates)`.
inline ShadowRun run_shadow_pipeline(const ShadowConfig& cfg, const ShadowInputs& in, const TrainConfig& nn_cfg,
                                     const TrainConfig& mps_cfg, std::size_t workers = 1) {
  cfg.validate();
  in.pool.validate();
  const bool want_nn = std::count(cfg.variants.begin(), cfg.variants.end(), Variant::nn) > 0;
  const bool want_mps = std::any_of(cfg.variants.begin(), cfg.variants.end(), is_mps);
  const std::size_t fi = in.pool.feature_index(cfg.irrelevant_feature);
  const FeatureSpec& irr = in.pool.schema[fi];
  const std::uint64_t gauge_base = cfg.gauge_seed.value_or(derive_seed(cfg.seed, {0x6A06E}));

  const FeatureMap fm = mps_feature_map(in.pool);
  const std::size_t n_sites = fm.features.size() + 1;
  const std::size_t out_site = cfg.mps_output_site.value_or(n_sites - 1);
  std::vector<std::size_t> nn_dims{onehot_width(in.pool)};
  nn_dims.insert(nn_dims.end(), cfg.nn_hidden.begin(), cfg.nn_hidden.end());
  nn_dims.push_back(2);
  const EncodedTable test_onehot = encode_onehot(in.test);
  std::vector<std::size_t> test_rows(in.test.size());
  std::iota(test_rows.begin(), test_rows.end(), std::size_t{0});
  const std::uint64_t test_seed = derive_seed(cfg.seed, {0x7E57});

  const std::size_t n_levels = cfg.levels.size(), n_data = cfg.datasets_per_level();
  const std::size_t n_var = cfg.variants.size(), n_models = cfg.models_per_dataset;
  // slot[(level, dataset)][variant][model]
  std::vector<std::vector<std::vector<std::optional<ShadowRecord>>>> slots(
      n_levels * n_data, std::vector<std::vector<std::optional<ShadowRecord>>>(n_var));

  parallel_for(n_levels * n_data, workers, [&](std::size_t task) {
    const std::size_t li = task / n_data, di = task % n_data;
    const double p = cfg.levels[li];
    const int majority = majority_of_dataset(di);
    const Dataset d = sample_biased(in.pool, cfg.irrelevant_feature, irr.levels[static_cast<std::size_t>(majority)], p,
                                    cfg.rows_per_dataset, derive_seed(cfg.seed, {li, di, 1}));
    auto& out = slots[task];
    for (auto& v : out) v.resize(n_models);
    for (std::size_t mi = 0; mi < n_models; ++mi) {
      const std::uint64_t model_seed = derive_seed(cfg.seed, {li, di, mi, 2});
      try {
        if (want_nn) {
          TrainConfig tc = nn_cfg;
          tc.seed = derive_seed(model_seed, {3});
          const Mlp init = init_mlp(nn_dims, derive_seed(model_seed, {4}));
          const auto trained = train_model(init, d, tc).model;
          const double acc = mlp_accuracy(trained, test_onehot);
          for (std::size_t vi = 0; vi < n_var; ++vi)
            if (cfg.variants[vi] == Variant::nn)
              out[vi][mi] = ShadowRecord{di, mi, majority, acc, flatten_params(trained)};
        }
        if (want_mps) {
          TrainConfig tc = mps_cfg;
          tc.seed = derive_seed(model_seed, {5});
          const MpsModel init = init_mps(n_sites, 2, cfg.mps_bond_dim, 2, out_site, derive_seed(model_seed, {6}));
          const auto trained = train_mps(init, d, fm, tc).model;
          const double acc = mps_accuracy(trained, fm, in.test, test_rows, test_seed);
          for (std::size_t vi = 0; vi < n_var; ++vi) {
            if (!is_mps(cfg.variants[vi])) continue;
            const auto post = detail::postprocess(trained, cfg.variants[vi], derive_seed(gauge_base, {li, di, mi}));
            if (post) out[vi][mi] = ShadowRecord{di, mi, majority, acc, flatten_params(*post)};
          }
        }
      } catch (const Error& e) {
        throw Error(std::string(e.what()) + " " + detail::coords(p, di, mi));
      }
    }
  });

  ShadowRun run;
  for (std::size_t li = 0; li < n_levels; ++li)
    for (std::size_t vi = 0; vi < n_var; ++vi) {
      ShadowCell cell{cfg.levels[li], cfg.variants[vi], {}, 0};
      for (std::size_t di = 0; di < n_data; ++di)
        for (auto& r : slots[li * n_data + di][vi]) {
          if (r)
            cell.records.push_back(std::move(*r));
          else
            ++cell.excluded;
        }
      run.cells.push_back(std::move(cell));
    }
  return run;
}

// ---------------------------------------------------------------------------
// Feature normalization

/// Per-coordinate standardization fitted on attacker-side records. Constant
/// coordinates are dropped. Applying the transform twice is not the same as
/// applying it once; transform raw records only.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<std::size_t> kept;  // surviving coordinates, in order
  std::size_t input_dim = 0;

  std::vector<double> apply(std::span<const double> x) const {
    if (x.size() != input_dim) throw ShapeError("standardizer: record has the wrong width");
    std::vector<double> out(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) out[i] = (x[kept[i]] - mean[kept[i]]) / stddev[kept[i]];
    return out;
  }

  std::vector<std::vector<double>> apply(const std::vector<std::vector<double>>& xs) const {
    std::vector<std::vector<double>> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(apply(x));
    return out;
  }
};

inline Standardizer fit_standardizer(const std::vector<std::vector<double>>& train) {
  if (train.empty()) throw DataError("fit_standardizer: no records");
  Standardizer s;
  s.input_dim = train.front().size();
  s.mean.assign(s.input_dim, 0.0);
  s.stddev.assign(s.input_dim, 0.0);
  const double n = static_cast<double>(train.size());
  for (const auto& x : train) {
    if (x.size() != s.input_dim) throw ShapeError("fit_standardizer: ragged records");
    for (std::size_t i = 0; i < s.input_dim; ++i) s.mean[i] += x[i];
  }
  for (double& m : s.mean) m /= n;
  for (const auto& x : train)
    for (std::size_t i = 0; i < s.input_dim; ++i) s.stddev[i] += (x[i] - s.mean[i]) * (x[i] - s.mean[i]);
  for (std::size_t i = 0; i < s.input_dim; ++i) {
    s.stddev[i] = std::sqrt(s.stddev[i] / n);
    if (s.stddev[i] > 1e-12 * (1.0 + std::abs(s.mean[i]))) s.kept.push_back(i);
  }
  return s;
}

struct NormalizedRecords {
  std::vector<std::vector<double>> train;
  std::vector<std::vector<double>> eval;
  Standardizer transform;
};

inline NormalizedRecords normalize_features(const std::vector<std::vector<double>>& train,
                                            const std::vector<std::vector<double>>& eval) {
  NormalizedRecords r;
  r.transform = fit_standardizer(train);
  r.train = r.transform.apply(train);
  r.eval = r.transform.apply(eval);
  return r;
}

// ---------------------------------------------------------------------------
// Logistic regression (L-BFGS)

struct LbfgsOptions {
  std::size_t history = 10;
  std::size_t max_iterations = 500;
  double gradient_tolerance = 1e-6;  // on max |g| relative to max(1, |f|)
};

struct LbfgsResult {
  std::vector<double> x;
  double value = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Minimizes a smooth function with limited-memory BFGS and a backtracking
/// line search satisfying the Armijo condition. `fg(x, grad)` returns f(x).
template <class Fg>
LbfgsResult lbfgs_minimize(Fg&& fg, std::vector<double> x, const LbfgsOptions& opt = {}) {
  const std::size_t n = x.size();
  std::vector<double> g(n), g_new(n), dir(n), x_new(n);
  double f = fg(x, g);
  std::deque<std::vector<double>> s_hist, y_hist;
  std::deque<double> rho_hist;
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
  };
  auto gmax = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double e : v) m = std::max(m, std::abs(e));
    return m;
  };

  LbfgsResult res;
  for (std::size_t it = 0; it < opt.max_iterations; ++it) {
    if (gmax(g) <= opt.gradient_tolerance * std::max(1.0, std::abs(f))) {
      res.converged = true;
      break;
    }
    // two-loop recursion
    dir = g;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t k = s_hist.size(); k-- > 0;) {
      alpha[k] = rho_hist[k] * dot(s_hist[k], dir);
      for (std::size_t i = 0; i < n; ++i) dir[i] -= alpha[k] * y_hist[k][i];
    }
    if (!s_hist.empty()) {
      const double gamma = dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
      for (double& d : dir) d *= gamma;
    }
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double beta = rho_hist[k] * dot(y_hist[k], dir);
      for (std::size_t i = 0; i < n; ++i) dir[i] += s_hist[k][i] * (alpha[k] - beta);
    }
    for (double& d : dir) d = -d;
    double slope = dot(g, dir);
    if (slope >= 0.0) {  // not a descent direction: restart from steepest descent
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      for (std::size_t i = 0; i < n; ++i) dir[i] = -g[i];
      slope = -dot(g, g);
    }
    double step = s_hist.empty() ? std::min(1.0, 1.0 / std::max(1e-12, gmax(g))) : 1.0;
    double f_new = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t i = 0; i < n; ++i) x_new[i] = x[i] + step * dir[i];
      f_new = fg(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    res.iterations = it + 1;
    if (!accepted) break;
    std::vector<double> s(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = x_new[i] - x[i];
      y[i] = g_new[i] - g[i];
    }
    const double sy = dot(s, y);
    if (sy > 1e-12) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (s_hist.size() > opt.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    const double change = std::abs(f - f_new);
    x.swap(x_new);
    g.swap(g_new);
    f = f_new;
    if (change <= 1e-14 * std::max(1.0, std::abs(f))) {
      res.converged = true;
      break;
    }
  }
  res.x = std::move(x);
  res.value = f;
  return res;
}

struct LogisticModel {
  std::vector<double> weights;
  double bias = 0.0;
  bool converged = false;
  std::size_t iterations = 0;

  double decision(std::span<const double> x) const {
    double z = bias;
    for (std::size_t i = 0; i < weights.size(); ++i) z += weights[i] * x[i];
    return z;
  }
  int predict(std::span<const double> x) const { return decision(x) > 0.0 ? 1 : 0; }
};

namespace detail {

inline void require_both_classes(const std::vector<int>& labels, const char* who) {
  bool seen[2] = {false, false};
  for (int y : labels) {
    if (y != 0 && y != 1) throw DataError(std::string(who) + ": labels must be 0 or 1");
    seen[y] = true;
  }
  if (!seen[0] || !seen[1]) throw DataError(std::string(who) + ": training labels contain a single class");
}

}  // namespace detail

/// Binary logistic regression minimizing sum_i logloss_i + (l2 / 2) |w|^2;
/// the intercept is not penalized.
inline LogisticModel train_attack_lr(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                                     double l2 = 1.0, const LbfgsOptions& opt = {}) {
  if (x.size() != y.size() || x.empty()) throw DataError("train_attack_lr: need one label per record");
  detail::require_both_classes(y, "train_attack_lr");
  const std::size_t dim = x.front().size();
  auto fg = [&](const std::vector<double>& th, std::vector<double>& g) {
    std::fill(g.begin(), g.end(), 0.0);
    double f = 0.0;
    for (std::size_t r = 0; r < x.size(); ++r) {
      double z = th[dim];
      for (std::size_t i = 0; i < dim; ++i) z += th[i] * x[r][i];
      const double t = y[r];
      f += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - t * z;
      const double d = 1.0 / (1.0 + std::exp(-z)) - t;
      for (std::size_t i = 0; i < dim; ++i) g[i] += d * x[r][i];
      g[dim] += d;
    }
    for (std::size_t i = 0; i < dim; ++i) {
      f += 0.5 * l2 * th[i] * th[i];
      g[i] += l2 * th[i];
    }
    return f;
  };
  const auto res = lbfgs_minimize(fg, std::vector<double>(dim + 1, 0.0), opt);
  LogisticModel m;
  m.weights.assign(res.x.begin(), res.x.begin() + static_cast<std::ptrdiff_t>(dim));
  m.bias = res.x[dim];
  m.converged = res.converged;
  m.iterations = res.iterations;
  return m;
}

// ---------------------------------------------------------------------------
// Meta-network

/// Hidden widths 20-20-10-10-2 then a 2-way output; Adam 1e-3, l2 1e-4, batches of 1000, <= 1000 epochs.
inline TrainConfig meta_mlp_defaults() { return {1000, 1e-3, 1e-4, 1000, 0.2, 0, false, 100}; }

inline Mlp init_meta_mlp(std::size_t input_dim, std::uint64_t seed) {
  const std::size_t dims[] = {input_dim, 20, 20, 10, 10, 2, 2};
  return init_mlp(dims, seed);
}

/// Meta-network trained on rows `train_rows` with early stopping on `val_rows`.
inline Mlp train_attack_mlp(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                            std::span<const std::size_t> train_rows, std::span<const std::size_t> val_rows,
                            const TrainConfig& cfg) {
  if (x.size() != y.size() || x.empty()) throw DataError("train_attack_mlp: need one label per record");
  std::vector<int> ty;
  for (std::size_t r : train_rows) ty.push_back(y[r]);
  detail::require_both_classes(ty, "train_attack_mlp");
  const EncodedTable t{x, y};
  return train_mlp(init_meta_mlp(x.front().size(), derive_seed(cfg.seed, {0x3E7A})), t, train_rows, val_rows, cfg)
      .model;
}

/// Same, splitting rows randomly by `cfg.validation_fraction`.
inline Mlp train_attack_mlp(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                            const TrainConfig& cfg = meta_mlp_defaults()) {
  const auto split = detail::split_rows(y, cfg.validation_fraction, cfg.seed);
  return train_attack_mlp(x, y, split.train, split.val, cfg);
}

// ---------------------------------------------------------------------------
// Evaluation

struct AttackOptions {
  MetaModel meta = MetaModel::mlp;
  double lr_l2 = 1.0;
  TrainConfig mlp = meta_mlp_defaults();
  /// Permute dataset labels before every repetition (null calibration).
  bool shuffle_labels = false;
};

struct AttackSummary {
  double level = 0.0;
  Variant variant = Variant::nn;
  std::size_t repetitions = 0;
  std::size_t attacked_models = 0;  // per repetition
  double mean = 0.0;
  double band_lo = 0.0;  // 5th percentile over repetitions
  double band_hi = 0.0;  // 95th percentile
  double null_lo = 0.0;  // 0.5 -+ 2 binomial sigma for attacked_models
  double null_hi = 0.0;
  std::vector<double> accuracies;  // one per repetition
  bool leakage_guard = true;
};

/// Linear-interpolated percentile (q in [0, 1]) of an unsorted sample.
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double null_sigma(std::size_t n) { return std::sqrt(0.25 / static_cast<double>(n)); }

/// Repeated dataset-level attacker/attacked splits of one cell's records.
///
/// Each repetition picks `attacked_per_class` datasets of each majority class
/// for the attacked side, fits the normalizer and meta-model on the rest and
/// scores it on the attacked models. Models of one dataset never straddle the
/// split; the meta-network's validation split is also drawn by dataset.
inline AttackSummary evaluate_attack(const ShadowConfig& cfg, const ShadowCell& cell, const AttackOptions& opt,
                                     std::uint64_t seed, std::size_t workers = 1) {
  std::vector<std::size_t> datasets;
  for (const auto& r : cell.records) datasets.push_back(r.dataset);
  std::sort(datasets.begin(), datasets.end());
  datasets.erase(std::unique(datasets.begin(), datasets.end()), datasets.end());
  std::vector<int> ds_label(datasets.empty() ? 0 : datasets.back() + 1, -1);
  for (const auto& r : cell.records) ds_label[r.dataset] = r.majority;
  std::size_t per_class[2] = {0, 0};
  for (std::size_t d : datasets) ++per_class[ds_label[d]];
  if (per_class[0] <= cfg.attacked_per_class || per_class[1] <= cfg.attacked_per_class)
    throw DataError("evaluate_attack: need more than " + std::to_string(cfg.attacked_per_class) +
                    " datasets of each majority class, have " + std::to_string(per_class[0]) + " and " +
                    std::to_string(per_class[1]));

  AttackSummary sum;
  sum.level = cell.level;
  sum.variant = cell.variant;
  sum.repetitions = cfg.repetitions;
  sum.accuracies.assign(cfg.repetitions, 0.0);
  std::vector<std::size_t> attacked_count(cfg.repetitions, 0);
  std::vector<char> guard(cfg.repetitions, 1);

  parallel_for(cfg.repetitions, workers, [&](std::size_t rep) {
    Rng rng(derive_seed(seed, {rep}));
    std::vector<int> label = ds_label;
    if (opt.shuffle_labels) {
      std::vector<int> pool;
      for (std::size_t d : datasets) pool.push_back(label[d]);
      std::shuffle(pool.begin(), pool.end(), rng);
      for (std::size_t i = 0; i < datasets.size(); ++i) label[datasets[i]] = pool[i];
    }
    std::vector<char> attacked(label.size(), 0), in_val(label.size(), 0);
    for (int c = 0; c < 2; ++c) {
      std::vector<std::size_t> members;
      for (std::size_t d : datasets)
        if (label[d] == c) members.push_back(d);
      std::shuffle(members.begin(), members.end(), rng);
      for (std::size_t i = 0; i < cfg.attacked_per_class && i < members.size(); ++i) attacked[members[i]] = 1;
    }
    std::vector<std::size_t> attacker_ds;
    for (std::size_t d : datasets)
      if (!attacked[d]) attacker_ds.push_back(d);
    std::shuffle(attacker_ds.begin(), attacker_ds.end(), rng);
    const auto n_val = static_cast<std::size_t>(
        std::llround(opt.mlp.validation_fraction * static_cast<double>(attacker_ds.size())));
    for (std::size_t i = 0; i < n_val && i < attacker_ds.size(); ++i) in_val[attacker_ds[i]] = 1;

    std::vector<std::vector<double>> xtr, xev;
    std::vector<int> ytr, yev;
    std::vector<std::size_t> tr_ds;
    for (const auto& r : cell.records) {
      if (attacked[r.dataset]) {
        xev.push_back(r.params);
        yev.push_back(label[r.dataset]);
      } else {
        xtr.push_back(r.params);
        ytr.push_back(label[r.dataset]);
        tr_ds.push_back(r.dataset);
      }
    }
    for (std::size_t d : tr_ds)
      if (attacked[d]) guard[rep] = 0;

    const auto norm = normalize_features(xtr, xev);
    std::size_t hits = 0;
    if (opt.meta == MetaModel::logistic) {
      const auto lr = train_attack_lr(norm.train, ytr, opt.lr_l2);
      for (std::size_t i = 0; i < norm.eval.size(); ++i) hits += lr.predict(norm.eval[i]) == yev[i];
    } else {
      std::vector<std::size_t> tr_rows, val_rows;
      for (std::size_t i = 0; i < tr_ds.size(); ++i) (in_val[tr_ds[i]] ? val_rows : tr_rows).push_back(i);
      TrainConfig tc = opt.mlp;
      tc.seed = derive_seed(seed, {rep, 0x3E7A});
      const Mlp meta = train_attack_mlp(norm.train, ytr, tr_rows, val_rows, tc);
      MlpCache cache;
      for (std::size_t i = 0; i < norm.eval.size(); ++i)
        hits += static_cast<int>(argmax(detail::mlp_forward_unchecked(meta, norm.eval[i], cache))) == yev[i];
    }
    attacked_count[rep] = yev.size();
    sum.accuracies[rep] = static_cast<double>(hits) / static_cast<double>(yev.size());
  });

  sum.attacked_models = *std::min_element(attacked_count.begin(), attacked_count.end());
  sum.leakage_guard = std::all_of(guard.begin(), guard.end(), [](char g) { return g != 0; });
  sum.mean = std::accumulate(sum.accuracies.begin(), sum.accuracies.end(), 0.0) /
             static_cast<double>(sum.accuracies.size());
  sum.band_lo = percentile(sum.accuracies, 0.05);
  sum.band_hi = percentile(sum.accuracies, 0.95);
  const double s = null_sigma(sum.attacked_models);
  sum.null_lo = 0.5 - 2.0 * s;
  sum.null_hi = 0.5 + 2.0 * s;
  return sum;
}

struct TaskSummary {
  double mean = 0.0;
  double band_lo = 0.0;
  double band_hi = 0.0;
  std::size_t models = 0;
};

inline TaskSummary summarize_task_accuracy(const ShadowCell& cell) {
  TaskSummary t;
  std::vector<double> acc;
  for (const auto& r : cell.records) acc.push_back(r.task_accuracy);
  t.models = acc.size();
  if (acc.empty()) return t;
  t.mean = std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
  t.band_lo = percentile(acc, 0.05);
  t.band_hi = percentile(acc, 0.95);
  return t;
}

// ---------------------------------------------------------------------------
// Records cache

/// One file per cell: a "# level= variant= excluded= key=" line, then
/// dataset,model,majority,task_accuracy,p0,p1,... with round-trip precision.
inline void write_records(std::ostream& os, const ShadowCell& cell) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", cell.level);
  os << "# level=" << buf << " variant=" << variant_name(cell.variant) << " excluded=" << cell.excluded;
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(cell.key));
  os << " key=" << buf << '\n';
  os << "dataset,model,majority,task_accuracy";
  if (!cell.records.empty())
    for (std::size_t i = 0; i < cell.records.front().params.size(); ++i) os << ",p" << i;
  os << '\n';
  for (const auto& r : cell.records) {
    std::snprintf(buf, sizeof buf, "%.17g", r.task_accuracy);
    os << r.dataset << ',' << r.model << ',' << r.majority << ',' << buf;
    for (double v : r.params) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << ',' << buf;
    }
    os << '\n';
  }
}

inline ShadowCell read_records(std::istream& is) {
  ShadowCell cell;
  std::string line;
  if (!std::getline(is, line)) throw DataError("read_records: empty input", 1);
  char variant[64] = {0};
  unsigned long long key = 0;
  if (std::sscanf(line.c_str(), "# level=%lf variant=%63s excluded=%zu key=%llx", &cell.level, variant,
                  &cell.excluded, &key) != 4)
    throw DataError("read_records: bad header line", 1);
  cell.key = key;
  cell.variant = parse_variant(variant);
  if (!std::getline(is, line)) throw DataError("read_records: missing column header", 2);
  std::size_t lineno = 2;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() < 4) throw DataError("read_records: short row", lineno);
    ShadowRecord r;
    try {
      r.dataset = std::stoul(cells[0]);
      r.model = std::stoul(cells[1]);
      r.majority = std::stoi(cells[2]);
      r.task_accuracy = std::stod(cells[3]);
      for (std::size_t i = 4; i < cells.size(); ++i) r.params.push_back(std::stod(cells[i]));
    } catch (const std::exception&) {
      throw DataError("read_records: malformed number on line " + std::to_string(lineno), lineno);
    }
    cell.records.push_back(std::move(r));
  }
  return cell;
}

}  // namespace mpsguard
