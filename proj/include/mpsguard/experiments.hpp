#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mpsguard/attack.hpp"
#include "mpsguard/canonical.hpp"
#include "mpsguard/config.hpp"
#include "mpsguard/data.hpp"
#include "mpsguard/mps.hpp"
#include "mpsguard/neural.hpp"
#include "mpsguard/parallel.hpp"
#include "mpsguard/train.hpp"

#ifndef MPSGUARD_VERSION
#define MPSGUARD_VERSION "0.0.0"
#endif

namespace mpsguard {

/// A command's postcondition that did not hold (maps to exit code 3).
class PropertyFailure : public Error {
 public:
  using Error::Error;
};

struct RunContext {
  Json config = Json::object();
  std::filesystem::path out_dir = ".";
  std::size_t workers = 1;

  std::uint64_t seed() const {
    return config.contains("seed") ? ConfigView(config, "$").count("seed", 0) : 0;
  }
  std::string provenance() const {
    return "# mpsguard version=" MPSGUARD_VERSION " seed=" + std::to_string(seed()) +
           " config=" + hex64(config_hash(config)) + "\n";
  }
};

namespace detail {

inline std::string fmt6(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::ofstream open_output(const std::filesystem::path& dir, const std::string& name) {
  std::filesystem::create_directories(dir);
  std::ofstream os(dir / name, std::ios::binary);
  if (!os) throw ConfigError((dir / name).string(), "cannot open output file");
  return os;
}

/// Checks the optional "experiment" tag and the mandatory seed.
inline void check_experiment(const ConfigView& root, std::initializer_list<const char*> accepted) {
  if (root.has("experiment")) {
    const std::string kind = root.text("experiment", "");
    bool ok = false;
    for (const char* a : accepted) ok = ok || kind == a;
    if (!ok) throw ConfigError(root.child("experiment"), "config is for '" + kind + "', not this command");
  }
  if (!root.has("seed")) throw ConfigError(root.child("seed"), "required (set it in the config or pass --seed)");
}

inline TrainConfig parse_train(const ConfigView& v, TrainConfig def) {
  v.allow({"batch_size", "learning_rate", "l2", "epochs", "validation_fraction", "fixed_embedding", "patience"});
  def.batch_size = v.count("batch_size", def.batch_size, 1);
  def.learning_rate = v.number("learning_rate", def.learning_rate, 1e-12, 1e6);
  def.l2 = v.number("l2", def.l2, 0.0, 1e6);
  def.epochs = v.count("epochs", def.epochs);
  def.validation_fraction = v.number("validation_fraction", def.validation_fraction, 0.0, 0.99);
  def.fixed_embedding = v.flag("fixed_embedding", def.fixed_embedding);
  def.patience = v.count("patience", def.patience);
  return def;
}

struct DataSpec {
  std::string source = "surrogate";
  std::size_t pool_rows = 20000;
  std::size_t test_rows = 2000;
  std::vector<double> prob_one;
  std::string path;
  double test_fraction = 0.1;
  std::vector<std::string> balance_features;
  std::size_t balance_cap = 0;
};

inline DataSpec parse_data(const ConfigView& v) {
  v.allow({"source", "pool_rows", "test_rows", "prob_one", "path", "test_fraction", "balance_features", "balance_cap"});
  DataSpec d;
  d.source = v.choice("source", "surrogate", {"surrogate", "csv"});
  d.pool_rows = v.count("pool_rows", d.pool_rows, 1);
  d.test_rows = v.count("test_rows", d.test_rows, 1);
  d.prob_one = v.numbers("prob_one", {}, 0.0, 1.0);
  d.test_fraction = v.number("test_fraction", d.test_fraction, 0.0, 0.9);
  d.balance_features = v.texts("balance_features", {});
  d.balance_cap = v.count("balance_cap", 0);
  if (d.source == "csv") {
    if (!v.has("path")) throw ConfigError(v.child("path"), "required when source is 'csv'");
    d.path = v.text("path", "");
    if (!std::filesystem::exists(d.path)) throw ConfigError(v.child("path"), "file '" + d.path + "' does not exist");
  }
  return d;
}

/// Pool and held-out test rows for the surrogate schema.
inline ShadowInputs load_inputs(const DataSpec& spec, std::uint64_t seed) {
  ShadowInputs in;
  if (spec.source == "surrogate") {
    SurrogateOptions opts{spec.prob_one};
    in.pool = gen_surrogate(spec.pool_rows, 1, 0.5, surrogate_targets(), derive_seed(seed, {0xDA7A, 1}), opts);
    in.test = gen_surrogate(spec.test_rows, 1, 0.5, surrogate_targets(), derive_seed(seed, {0xDA7A, 2}), opts);
    return in;
  }
  Dataset all = ingest_csv(spec.path, surrogate_schema()).data;
  if (!spec.balance_features.empty()) all = balance_strata(all, spec.balance_features, spec.balance_cap);
  std::vector<std::size_t> idx(all.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {0xDA7A, 3}));
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_test = static_cast<std::size_t>(spec.test_fraction * static_cast<double>(all.size()));
  in.pool.schema = in.test.schema = all.schema;
  for (std::size_t i = 0; i < idx.size(); ++i) (i < n_test ? in.test : in.pool).rows.push_back(all.rows[idx[i]]);
  if (in.test.size() == 0) throw DataError("csv data: test split is empty; raise test_fraction");
  return in;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// toy-vuln

struct ToyPoint {
  int majority_sign = 1;
  std::size_t model = 0;
  double w_irr = 0.0;
  double bias = 0.0;
};

struct ToySeparation {
  double linear = 0.0;   // held-out accuracy of logistic regression on (w_irr, b)
  double product = 0.0;  // held-out accuracy of logistic regression on w_irr * b
};

struct ToyVulnResult {
  std::vector<ToyPoint> before;
  std::vector<ToyPoint> after;
  ToySeparation before_sep;
  ToySeparation after_sep;
  double mean_task_accuracy = 0.0;
};

struct ToyVulnConfig {
  std::size_t models_per_sign = 100;
  std::size_t rows = 1000;
  TrainConfig train{32, 1e-2, 0.0, 100, 0.0, 0, false, 0};
  double heldout_fraction = 0.5;
  std::uint64_t seed = 0;
};

inline ToyVulnConfig parse_toy_vuln(const Json& j) {
  ConfigView root(j, "$");
  root.allow({"experiment", "seed", "workers", "out", "toy"});
  detail::check_experiment(root, {"toy-vuln"});
  ToyVulnConfig c;
  c.seed = root.count("seed", 0);
  const auto t = root.section("toy");
  t.allow({"models_per_sign", "rows", "train", "heldout_fraction"});
  c.models_per_sign = t.count("models_per_sign", c.models_per_sign, 2);
  c.rows = t.count("rows", c.rows, 1);
  c.train = detail::parse_train(t.section("train"), c.train);
  c.heldout_fraction = t.number("heldout_fraction", c.heldout_fraction, 0.05, 0.95);
  return c;
}

/// Held-out accuracy of a standardized logistic regression separating the two signs.
inline double heldout_separation(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                                 double heldout_fraction, std::uint64_t seed) {
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < y.size(); ++i) by_class[y[i]].push_back(i);
  Rng rng(seed);
  std::vector<std::vector<double>> xtr, xte;
  std::vector<int> ytr, yte;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_te = static_cast<std::size_t>(std::llround(heldout_fraction * static_cast<double>(members.size())));
    for (std::size_t i = 0; i < members.size(); ++i) {
      const std::size_t r = members[i];
      (i < n_te ? xte : xtr).push_back(x[r]);
      (i < n_te ? yte : ytr).push_back(y[r]);
    }
  }
  const auto norm = normalize_features(xtr, xte);
  if (norm.transform.kept.empty()) return 0.5;
  const auto lr = train_attack_lr(norm.train, ytr);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < norm.eval.size(); ++i) hit += lr.predict(norm.eval[i]) == yte[i];
  return static_cast<double>(hit) / static_cast<double>(norm.eval.size());
}

inline ToySeparation toy_separation(const std::vector<ToyPoint>& pts, double heldout_fraction, std::uint64_t seed) {
  std::vector<std::vector<double>> lin, prod;
  std::vector<int> y;
  for (const auto& p : pts) {
    lin.push_back({p.w_irr, p.bias});
    prod.push_back({p.w_irr * p.bias});
    y.push_back(p.majority_sign > 0 ? 1 : 0);
  }
  return {heldout_separation(lin, y, heldout_fraction, seed), heldout_separation(prod, y, heldout_fraction, seed)};
}

inline ToyVulnResult run_toy_vuln(const ToyVulnConfig& c, std::size_t workers = 1) {
  c.train.validate();
  const std::size_t k = c.models_per_sign;
  std::vector<ToyPoint> before(2 * k), after(2 * k);
  std::vector<double> acc(2 * k);
  parallel_for(2 * k, workers, [&](std::size_t task) {
    const std::size_t si = task / k, mi = task % k;
    const int sign = si == 0 ? 1 : -1;
    const Dataset d = gen_toy(c.rows, sign, derive_seed(c.seed, {si, mi, 1}));
    const ToyModel init = init_toy(derive_seed(c.seed, {si, mi, 2}));
    TrainConfig tc = c.train;
    tc.seed = derive_seed(c.seed, {si, mi, 3});
    const auto trained = train_toy(init, d, tc).model;
    before[task] = {sign, mi, init.w_irr, init.bias};
    after[task] = {sign, mi, trained.w_irr, trained.bias};
    acc[task] = toy_accuracy(trained, d);
  });
  ToyVulnResult r;
  r.before = std::move(before);
  r.after = std::move(after);
  r.before_sep = toy_separation(r.before, c.heldout_fraction, derive_seed(c.seed, {0x5E9}));
  r.after_sep = toy_separation(r.after, c.heldout_fraction, derive_seed(c.seed, {0x5E9}));
  r.mean_task_accuracy = std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
  return r;
}

inline void write_toy_vuln(const RunContext& ctx, const ToyVulnResult& r) {
  auto scatter = detail::open_output(ctx.out_dir, "scatter.csv");
  scatter << ctx.provenance() << "phase,majority,model,w_irr,bias\n";
  for (const auto* pts : {&r.before, &r.after})
    for (const auto& p : *pts)
      scatter << (pts == &r.before ? "before" : "after") << ',' << p.majority_sign << ',' << p.model << ','
              << detail::fmt6(p.w_irr) << ',' << detail::fmt6(p.bias) << '\n';
  auto sep = detail::open_output(ctx.out_dir, "separation.csv");
  sep << ctx.provenance() << "phase,heldout_accuracy_linear,heldout_accuracy_product\n";
  sep << "before," << detail::fmt6(r.before_sep.linear) << ',' << detail::fmt6(r.before_sep.product) << '\n';
  sep << "after," << detail::fmt6(r.after_sep.linear) << ',' << detail::fmt6(r.after_sep.product) << '\n';
}

// ---------------------------------------------------------------------------
// pipeline

struct PipelineConfig {
  detail::DataSpec data;
  ShadowConfig shadow;
  TrainConfig nn = nn_train_defaults();
  TrainConfig mps = mps_train_defaults();
  AttackOptions attack;
  std::optional<MetaModel> meta;
  bool reuse_records = false;
  std::uint64_t seed = 0;
  std::uint64_t records_key = 0;
};

inline PipelineConfig parse_pipeline(const Json& j) {
  ConfigView root(j, "$");
  root.allow({"experiment", "seed", "workers", "out", "data", "shadow", "train", "attack", "records"});
  detail::check_experiment(root, {"pipeline", "surrogate-pipeline"});
  PipelineConfig c;
  c.seed = root.count("seed", 0);
  c.data = detail::parse_data(root.section("data"));

  const auto s = root.section("shadow");
  s.allow({"levels", "variants", "datasets_per_class", "attacked_per_class", "models_per_dataset", "rows_per_dataset",
           "repetitions", "irrelevant_feature", "mps_bond_dim", "mps_output_site", "nn_hidden", "gauge_seed", "meta"});
  auto& sh = c.shadow;
  sh.levels = s.numbers("levels", sh.levels, 0.5, 1.0);
  if (s.has("variants")) {
    sh.variants.clear();
    const auto names = s.texts("variants", {});
    for (std::size_t i = 0; i < names.size(); ++i) {
      try {
        sh.variants.push_back(parse_variant(names[i]));
      } catch (const Error& e) {
        throw ConfigError(s.item("variants", i), e.what());
      }
    }
  }
  sh.datasets_per_class = s.count("datasets_per_class", sh.datasets_per_class, 2);
  sh.attacked_per_class = s.count("attacked_per_class", sh.attacked_per_class, 1);
  if (sh.attacked_per_class >= sh.datasets_per_class)
    throw ConfigError(s.child("attacked_per_class"), "must be smaller than datasets_per_class");
  sh.models_per_dataset = s.count("models_per_dataset", sh.models_per_dataset, 1);
  sh.rows_per_dataset = s.count("rows_per_dataset", sh.rows_per_dataset, 1);
  sh.repetitions = s.count("repetitions", sh.repetitions, 1);
  sh.irrelevant_feature = s.text("irrelevant_feature", sh.irrelevant_feature);
  sh.mps_bond_dim = s.count("mps_bond_dim", sh.mps_bond_dim, 1);
  if (auto o = s.optional_count("mps_output_site")) {
    if (*o > surrogate_schema().size() - 1) throw ConfigError(s.child("mps_output_site"), "beyond the last site");
    sh.mps_output_site = *o;
  }
  const auto hidden = s.counts("nn_hidden", {16, 16, 8, 4}, 1);
  sh.nn_hidden.assign(hidden.begin(), hidden.end());
  sh.gauge_seed = s.optional_count("gauge_seed");
  if (s.has("meta")) c.meta = parse_meta(s.choice("meta", "mlp", {"logistic", "mlp"}));
  sh.seed = c.seed;

  const auto t = root.section("train");
  t.allow({"nn", "mps"});
  c.nn = detail::parse_train(t.section("nn"), c.nn);
  c.mps = detail::parse_train(t.section("mps"), c.mps);

  const auto a = root.section("attack");
  a.allow({"lr_l2", "mlp", "shuffle_labels"});
  c.attack.lr_l2 = a.number("lr_l2", c.attack.lr_l2, 0.0, 1e9);
  c.attack.mlp = detail::parse_train(a.section("mlp"), c.attack.mlp);
  c.attack.shuffle_labels = a.flag("shuffle_labels", false);

  const auto r = root.section("records");
  r.allow({"reuse"});
  c.reuse_records = r.flag("reuse", false);

  // records depend on everything that shapes training, not on attack settings
  Json key = Json::object();
  key["seed"] = c.seed;
  for (const char* sec : {"data", "train"})
    if (j.contains(sec)) key[sec] = j.at(sec);
  if (j.contains("shadow")) {
    Json shj = j.at("shadow");
    shj.erase("repetitions");
    shj.erase("meta");
    key["shadow"] = shj;
  }
  c.records_key = config_hash(key);
  return c;
}

struct PipelineResult {
  ShadowRun run;
  std::vector<AttackSummary> attacks;  // same order as run.cells
  std::vector<MetaModel> metas;
  std::vector<TaskSummary> tasks;
  bool guards_ok = true;
  bool reused_records = false;
};

inline std::string records_file_name(double level, Variant v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "level_%.4f_%s.csv", level, variant_name(v));
  return buf;
}

/// Cached records for every cell, or nullopt when any file is missing.
inline std::optional<ShadowRun> load_cached_records(const PipelineConfig& c, const std::filesystem::path& dir) {
  ShadowRun run;
  for (double level : c.shadow.levels)
    for (Variant v : c.shadow.variants) {
      const auto path = dir / records_file_name(level, v);
      if (!std::filesystem::exists(path)) return std::nullopt;
      std::ifstream in(path);
      std::string first;
      std::getline(in, first);  // provenance line
      ShadowCell cell = read_records(in);
      if (cell.key != c.records_key)
        throw StaleCacheError("records cache '" + path.string() + "' was produced by different settings");
      run.cells.push_back(std::move(cell));
    }
  return run;
}

inline void write_pipeline_records(const RunContext& ctx, const ShadowRun& run);

/// With a context, shadow records are flushed to `<out>/records` before the
/// attack stage, so a failing attack leaves the trained models on disk.
inline PipelineResult run_pipeline(const PipelineConfig& c, std::size_t workers = 1,
                                   const RunContext* ctx = nullptr) {
  PipelineResult res;
  std::optional<ShadowRun> cached;
  if (c.reuse_records && ctx) cached = load_cached_records(c, ctx->out_dir / "records");
  if (cached) {
    res.run = std::move(*cached);
    res.reused_records = true;
  } else {
    const ShadowInputs in = detail::load_inputs(c.data, c.seed);
    res.run = run_shadow_pipeline(c.shadow, in, c.nn, c.mps, workers);
    for (auto& cell : res.run.cells) cell.key = c.records_key;
    if (ctx) write_pipeline_records(*ctx, res.run);
  }
  for (std::size_t i = 0; i < res.run.cells.size(); ++i) {
    const auto& cell = res.run.cells[i];
    const auto li = static_cast<std::uint64_t>(
        std::find(c.shadow.levels.begin(), c.shadow.levels.end(), cell.level) - c.shadow.levels.begin());
    AttackOptions opt = c.attack;
    opt.meta = c.meta.value_or(default_meta(cell.variant));
    const auto summary = evaluate_attack(c.shadow, cell, opt,
                                         derive_seed(c.seed, {0xA77A, li, static_cast<std::uint64_t>(cell.variant)}),
                                         workers);
    res.guards_ok = res.guards_ok && summary.leakage_guard;
    res.attacks.push_back(summary);
    res.metas.push_back(opt.meta);
    res.tasks.push_back(summarize_task_accuracy(cell));
  }
  return res;
}

inline void write_pipeline_records(const RunContext& ctx, const ShadowRun& run) {
  for (const auto& cell : run.cells) {
    auto os = detail::open_output(ctx.out_dir / "records", records_file_name(cell.level, cell.variant));
    os << ctx.provenance();
    write_records(os, cell);
  }
}

inline void write_pipeline(const RunContext& ctx, const PipelineResult& r) {
  auto models = detail::open_output(ctx.out_dir, "models.csv");
  models << ctx.provenance() << "variant,level,mean_task_accuracy,band_lo,band_hi,models,excluded\n";
  for (std::size_t i = 0; i < r.run.cells.size(); ++i) {
    const auto& cell = r.run.cells[i];
    const auto& t = r.tasks[i];
    models << variant_name(cell.variant) << ',' << detail::fmt6(cell.level) << ',' << detail::fmt6(t.mean) << ','
           << detail::fmt6(t.band_lo) << ',' << detail::fmt6(t.band_hi) << ',' << t.models << ',' << cell.excluded
           << '\n';
  }
  auto attacks = detail::open_output(ctx.out_dir, "attacks.csv");
  attacks << ctx.provenance()
          << "variant,level,meta,mean_attack_accuracy,band_lo,band_hi,repetitions,attacked_models,null_lo,null_hi,"
             "leakage_guard\n";
  for (std::size_t i = 0; i < r.attacks.size(); ++i) {
    const auto& a = r.attacks[i];
    attacks << variant_name(a.variant) << ',' << detail::fmt6(a.level) << ',' << meta_name(r.metas[i]) << ',' << detail::fmt6(a.mean) << ',' << detail::fmt6(a.band_lo)
            << ',' << detail::fmt6(a.band_hi) << ',' << a.repetitions << ',' << a.attacked_models << ','
            << detail::fmt6(a.null_lo) << ',' << detail::fmt6(a.null_hi) << ',' << (a.leakage_guard ? "ok" : "BROKEN")
            << '\n';
  }
}

// ---------------------------------------------------------------------------
// canonical-props

struct PropsConfig {
  std::vector<std::size_t> sites{3, 4, 5, 6};
  std::vector<std::size_t> dims{2};
  std::size_t models = 50;
  std::size_t gauges = 20;
  bool include_singular = true;
  std::uint64_t seed = 0;
};

inline PropsConfig parse_props(const Json& j) {
  ConfigView root(j, "$");
  root.allow({"experiment", "seed", "workers", "out", "canonical"});
  detail::check_experiment(root, {"canonical-props"});
  PropsConfig c;
  c.seed = root.count("seed", 0);
  const auto s = root.section("canonical");
  s.allow({"sites", "dims", "models", "gauges", "include_singular"});
  const auto sites = s.counts("sites", {3, 4, 5, 6}, 3);
  const auto dims = s.counts("dims", {2}, 1);
  c.sites.assign(sites.begin(), sites.end());
  c.dims.assign(dims.begin(), dims.end());
  c.models = s.count("models", c.models, 1);
  c.gauges = s.count("gauges", c.gauges, 1);
  c.include_singular = s.flag("include_singular", c.include_singular);
  return c;
}

struct PropRow {
  std::size_t n_sites = 0;
  std::size_t dim = 0;
  std::string property;
  std::size_t samples = 0;
  double worst = 0.0;
  double tolerance = 0.0;
  std::string status;  // pass | fail | expected-failure
};

struct PropsResult {
  std::vector<PropRow> rows;
  bool all_pass() const {
    return std::all_of(rows.begin(), rows.end(), [](const PropRow& r) { return r.status != "fail"; });
  }
};

/// A model whose first site has a zero row, so every intersection matrix is singular.
inline MpsModel engineered_singular_model(std::size_t n, std::size_t dim, std::uint64_t seed) {
  MpsModel m = random_mps(n, dim, dim, dim, n - 1, seed);
  for (std::size_t c = 0; c < dim; ++c) m.sites[0](0, c) = 0.0;
  return m;
}

inline PropsResult run_canonical_props(const PropsConfig& c, std::size_t workers = 1) {
  PropsResult res;
  for (std::size_t n : c.sites)
    for (std::size_t dim : c.dims) {
      struct Worst {
        double pi_skel = 0, pi_svd = 0, univ = 0, idem_skel = 0, idem_svd = 0, orth = 0, comp = 0;
        bool singular = false;
      };
      std::vector<Worst> w(c.models);
      parallel_for(c.models, workers, [&](std::size_t i) {
        const MpsModel m = random_mps(n, dim, dim, dim, n - 1, derive_seed(c.seed, {n, dim, i, 1}));
        auto& r = w[i];
        try {
          const MpsModel sk = skeleton_canonical(m);
          const MpsModel sv = svd_canonical(m);
          r.pi_skel = materialization_residual(sk, m);
          r.pi_svd = materialization_residual(sv, m);
          r.idem_skel = max_param_diff(skeleton_canonical(sk), sk);
          r.idem_svd = max_param_diff(svd_canonical(sv), sv);
          r.orth = left_orthogonality_residual(sv);
          for (std::size_t g = 0; g < c.gauges; ++g) {
            const auto gauge = random_gauge(m, derive_seed(c.seed, {n, dim, i, 2, g}));
            r.univ = std::max(r.univ, max_param_diff(skeleton_canonical(apply_gauge(m, gauge)), sk));
          }
          const MpsModel signed_svd = apply_gauge(sv, sign_gauge(sv, derive_seed(c.seed, {n, dim, i, 3})));
          r.comp = max_param_diff(skeleton_canonical(signed_svd), sk);
        } catch (const SingularIntersectionError&) {
          r.singular = true;
        }
      });
      auto add = [&](const char* prop, double tol, auto get) {
        double worst = 0.0;
        std::size_t samples = 0;
        bool singular = false;
        for (const auto& r : w) {
          singular = singular || r.singular;
          if (r.singular) continue;
          worst = std::max(worst, get(r));
          ++samples;
        }
        res.rows.push_back({n, dim, prop, samples, worst, tol, worst <= tol && !singular ? "pass" : "fail"});
      };
      add("pi-invariance-skeleton", 1e-8, [](const Worst& r) { return r.pi_skel; });
      add("pi-invariance-svd", 1e-8, [](const Worst& r) { return r.pi_svd; });
      add("univocality", 1e-6, [](const Worst& r) { return r.univ; });
      add("idempotence-skeleton", 1e-8, [](const Worst& r) { return r.idem_skel; });
      add("idempotence-svd", 1e-8, [](const Worst& r) { return r.idem_svd; });
      add("left-orthogonality", 1e-8, [](const Worst& r) { return r.orth; });
      add("composition", 1e-6, [](const Worst& r) { return r.comp; });
      if (c.include_singular) {
        bool raised = false;
        try {
          skeleton_canonical(engineered_singular_model(n, dim, derive_seed(c.seed, {n, dim, 0x5196})));
        } catch (const SingularIntersectionError&) {
          raised = true;
        }
        res.rows.push_back({n, dim, "singular-intersection", 1, 0.0, 0.0, raised ? "expected-failure" : "fail"});
      }
    }
  return res;
}

inline void write_props(const RunContext& ctx, const PropsResult& r) {
  auto os = detail::open_output(ctx.out_dir, "props.csv");
  os << ctx.provenance() << "n_sites,dim,property,samples,worst_residual,tolerance,status\n";
  char buf[64];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%.3e,%.0e", row.worst, row.tolerance);
    os << row.n_sites << ',' << row.dim << ',' << row.property << ',' << row.samples << ',' << buf << ','
       << row.status << '\n';
  }
}

// ---------------------------------------------------------------------------
// gen-data, train, canonicalize

struct GenDataConfig {
  std::string generator = "surrogate";
  std::size_t rows = 20000;
  int majority = 1;
  double p = 0.5;
  std::vector<double> prob_one;
  std::string file = "data.csv";
  std::uint64_t seed = 0;
};

inline GenDataConfig parse_gen_data(const Json& j) {
  ConfigView root(j, "$");
  root.allow({"experiment", "seed", "workers", "out", "generate"});
  detail::check_experiment(root, {"gen-data"});
  GenDataConfig c;
  c.seed = root.count("seed", 0);
  const auto g = root.section("generate");
  g.allow({"generator", "rows", "majority", "p", "prob_one", "file"});
  c.generator = g.choice("generator", c.generator, {"surrogate", "toy"});
  c.rows = g.count("rows", c.rows, 1);
  const double majority = g.number("majority", 1, -1, 1);
  if (std::floor(majority) != majority) throw ConfigError(g.child("majority"), "expected an integer");
  c.majority = static_cast<int>(majority);
  if (c.generator == "toy" && c.majority != 1 && c.majority != -1)
    throw ConfigError(g.child("majority"), "toy majority must be +1 or -1");
  if (c.generator == "surrogate" && c.majority != 0 && c.majority != 1)
    throw ConfigError(g.child("majority"), "surrogate majority must be 0 or 1");
  c.p = g.number("p", c.p, 0.5, 1.0);
  c.prob_one = g.numbers("prob_one", {}, 0.0, 1.0);
  c.file = g.text("file", c.file);
  return c;
}

inline Dataset run_gen_data(const GenDataConfig& c) {
  if (c.generator == "toy") return gen_toy(c.rows, c.majority, derive_seed(c.seed, {0x70E}));
  return gen_surrogate(c.rows, c.majority, c.p, surrogate_targets(), derive_seed(c.seed, {0x5A7}), {c.prob_one});
}

inline void write_gen_data(const RunContext& ctx, const GenDataConfig& c, const Dataset& d) {
  auto os = detail::open_output(ctx.out_dir, c.file);
  os << ctx.provenance();
  export_csv(os, d);
}

struct TrainCommandConfig {
  detail::DataSpec data;
  std::string arch = "mps";
  std::size_t bond_dim = 2;
  std::optional<std::size_t> output_site;
  std::vector<std::size_t> hidden{16, 16, 8, 4};
  TrainConfig train;
  std::uint64_t seed = 0;
};

inline TrainCommandConfig parse_train_command(const Json& j) {
  ConfigView root(j, "$");
  root.allow({"experiment", "seed", "workers", "out", "data", "model", "train"});
  detail::check_experiment(root, {"train"});
  TrainCommandConfig c;
  c.seed = root.count("seed", 0);
  c.data = detail::parse_data(root.section("data"));
  const auto m = root.section("model");
  m.allow({"arch", "bond_dim", "output_site", "hidden"});
  c.arch = m.choice("arch", c.arch, {"mps", "nn"});
  c.bond_dim = m.count("bond_dim", c.bond_dim, 1);
  if (auto o = m.optional_count("output_site")) {
    if (*o > surrogate_schema().size() - 1) throw ConfigError(m.child("output_site"), "beyond the last site");
    c.output_site = *o;
  }
  const auto hidden = m.counts("hidden", {16, 16, 8, 4}, 1);
  c.hidden.assign(hidden.begin(), hidden.end());
  c.train = detail::parse_train(root.section("train"), c.arch == "mps" ? mps_train_defaults() : nn_train_defaults());
  c.train.seed = derive_seed(c.seed, {0x7A1});
  return c;
}

struct TrainCommandResult {
  std::string model_text;
  std::vector<EpochRecord> history;
  double test_accuracy = 0.0;
};

inline TrainCommandResult run_train_command(const TrainCommandConfig& c) {
  const ShadowInputs in = detail::load_inputs(c.data, c.seed);
  TrainCommandResult r;
  std::ostringstream os;
  if (c.arch == "mps") {
    const FeatureMap fm = mps_feature_map(in.pool);
    const std::size_t n = fm.features.size() + 1;
    const auto init = init_mps(n, 2, c.bond_dim, 2, c.output_site.value_or(n - 1), derive_seed(c.seed, {0x1E17}));
    auto t = train_mps(init, in.pool, fm, c.train);
    std::vector<std::size_t> rows(in.test.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    r.test_accuracy = mps_accuracy(t.model, fm, in.test, rows, derive_seed(c.seed, {0x7E57}));
    write_model(os, t.model);
    r.history = std::move(t.history);
  } else {
    std::vector<std::size_t> dims{onehot_width(in.pool)};
    dims.insert(dims.end(), c.hidden.begin(), c.hidden.end());
    dims.push_back(2);
    auto t = train_model(init_mlp(dims, derive_seed(c.seed, {0x1E17})), in.pool, c.train);
    r.test_accuracy = mlp_accuracy(t.model, encode_onehot(in.test));
    write_model(os, t.model);
    r.history = std::move(t.history);
  }
  r.model_text = os.str();
  return r;
}

inline void write_train_command(const RunContext& ctx, const TrainCommandResult& r) {
  auto model = detail::open_output(ctx.out_dir, "model.txt");
  model << r.model_text;
  auto hist = detail::open_output(ctx.out_dir, "history.csv");
  hist << ctx.provenance();
  write_history_csv(hist, r.history);
}

struct CanonicalizeResult {
  MpsModel model;
  double residual = 0.0;  // relative materialization difference to the input
};

inline CanonicalizeResult run_canonicalize(const MpsModel& m, const std::string& form) {
  CanonicalizeResult r;
  if (form == "skeleton")
    r.model = skeleton_canonical(m);
  else if (form == "svd")
    r.model = svd_canonical(m);
  else
    throw ConfigError("$.canonicalize.form", "'" + form + "' is not one of: skeleton, svd");
  r.residual = materialization_residual(r.model, m);
  return r;
}

}  // namespace mpsguard
