// Acceptance suite: one PASS/FAIL line per criterion, at single-machine scale.
//
// The binary exits 0 when every criterion ran to completion, whatever its
// verdict; a nonzero exit means a criterion crashed. The full report is also
// written to the file given as the first argument (default acceptance_report.txt).

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "mpsguard/mpsguard.hpp"
#include "oracles.hpp"

using namespace mpsguard;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::size_t workers() { return std::max<std::size_t>(1, default_workers()); }

MpsModel random_model(std::size_t n, std::uint64_t seed) { return random_mps(n, 2, 2, 2, n - 1, seed); }

// 1
Verdict pi_invariance() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 200; ++i) {
    const MpsModel m = random_model(3 + i % 4, derive_seed(101, {i}));
    worst = std::max(worst, relative_diff(materialize(skeleton_canonical(m)), oracle::materialize(m)));
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-8 && t <= 60.0, fmt("200 models, worst relative error %.2e (tol 1e-8), %.1fs", worst, t)};
}

// 2
Verdict univocality() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const MpsModel m = random_model(3 + i % 4, derive_seed(202, {i}));
    const MpsModel ref = skeleton_canonical(m);
    for (std::uint64_t g = 0; g < 20; ++g)
      worst = std::max(worst,
                       max_param_diff(skeleton_canonical(apply_gauge(m, random_gauge(m, derive_seed(203, {i, g})))), ref));
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-6 && t <= 120.0, fmt("50 models x 20 gauges, worst site difference %.2e (tol 1e-6), %.1fs", worst, t)};
}

// 3
Verdict svd_residual_freedom() {
  std::size_t shown = 0;
  double min_param = 1e300, worst_tensor = 0.0;
  for (std::uint64_t i = 0; i < 10; ++i) {
    const MpsModel m = random_model(3 + i % 4, derive_seed(303, {i}));
    const MpsModel a = svd_canonical(m);
    const MpsModel b = svd_canonical(apply_gauge(m, sign_gauge(m, derive_seed(304, {i}))));
    const double dp = max_param_diff(a, b);
    const double dt = relative_diff(materialize(a), materialize(b));
    min_param = std::min(min_param, dp);
    worst_tensor = std::max(worst_tensor, dt);
    shown += dp > 1e-6 && dt <= 1e-9;
  }
  return {shown == 10, fmt("%zu/10 sign-related pairs differ (min parameter gap %.2e), worst tensor gap %.2e (tol 1e-9)",
                           shown, min_param, worst_tensor)};
}

// 4
Verdict composition() {
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const MpsModel m = random_model(3 + i % 4, derive_seed(404, {i}));
    const MpsModel via = skeleton_canonical(apply_gauge(svd_canonical(m), sign_gauge(m, derive_seed(405, {i}))));
    worst = std::max(worst, max_param_diff(via, skeleton_canonical(m)));
  }
  return {worst <= 1e-6, fmt("50 models, worst site difference %.2e (tol 1e-6)", worst)};
}

// 5
Verdict gradient_identity() {
  Rng rng(505);
  std::normal_distribution<double> nd(0.0, 2.0);
  double worst = 0.0, worst_fd = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const ToyModel m{nd(rng), nd(rng), nd(rng)};
    const double xr = nd(rng);
    const double xi = t % 2 ? (nd(rng) > 0 ? 1.0 : -1.0) : nd(rng);
    const int label = nd(rng) > 0 ? 1 : 0;
    const auto l = toy_loss(m, xr, xi, label);
    worst = std::max(worst, std::abs(l.grads.w_irr - xi * l.grads.bias));
    const auto fd = oracle::finite_difference(
        [&](const std::vector<double>& p) { return toy_loss(ToyModel{p[0], p[1], p[2]}, xr, xi, label).loss; },
        flatten_params(m));
    worst_fd = std::max(worst_fd, std::abs(fd[1] - xi * fd[2]));
  }
  return {worst <= 1e-12, fmt("1000 states, worst |dL/dW_irr - x_irr dL/db| %.2e (tol 1e-12); finite-difference check %.2e",
                              worst, worst_fd)};
}

// 6
Verdict toy_reproduction() {
  const auto t0 = std::chrono::steady_clock::now();
  ToyVulnConfig cfg;
  cfg.seed = 606;
  const auto r = run_toy_vuln(cfg, workers());
  const double t = seconds_since(t0);
  const bool pass = r.after_sep.linear >= 0.9 && std::abs(r.before_sep.linear - 0.5) <= 0.1 && t <= 180.0;
  return {pass, fmt("held-out linear separation after %.3f (need >= 0.90), before %.3f (need 0.5 +- 0.1); "
                    "separation on w_irr*b after %.3f; task accuracy %.3f; %.1fs",
                    r.after_sep.linear, r.before_sep.linear, r.after_sep.product, r.mean_task_accuracy, t)};
}

ShadowInputs surrogate_inputs(std::uint64_t seed) {
  return {gen_surrogate(20000, 1, 0.5, surrogate_targets(), derive_seed(seed, {1})),
          gen_surrogate(2000, 1, 0.5, surrogate_targets(), derive_seed(seed, {2}))};
}

// 7
Verdict task_accuracy_flat() {
  ShadowConfig cfg;
  cfg.levels = {0.5, 0.8, 1.0};
  cfg.variants = {Variant::nn, Variant::mps_raw, Variant::mps_univocal};
  cfg.datasets_per_class = 10;
  cfg.models_per_dataset = 10;
  cfg.rows_per_dataset = 500;
  cfg.seed = 707;
  TrainConfig nn = nn_train_defaults();
  nn.epochs = 50;
  const auto run = run_shadow_pipeline(cfg, surrogate_inputs(707), nn, mps_train_defaults(), workers());
  bool pass = true;
  std::string detail = "20 datasets x 10 models per level;";
  for (Variant v : cfg.variants) {
    double lo = 1.0, hi = 0.0;
    std::string means;
    for (double level : cfg.levels) {
      const double m = summarize_task_accuracy(run.cell(level, v)).mean;
      lo = std::min(lo, m);
      hi = std::max(hi, m);
      means += fmt("%s%.3f", means.empty() ? "" : "/", m);
    }
    pass = pass && hi - lo <= 0.05;
    detail += fmt(" %s %s spread %.3f;", variant_name(v), means.c_str(), hi - lo);
  }
  return {pass, detail + " (tol 0.05)"};
}

// 8
Verdict attack_ordering() {
  ShadowConfig cfg;
  cfg.levels = {1.0};
  cfg.variants = {Variant::mps_raw, Variant::mps_svd, Variant::mps_svd_signs, Variant::mps_univocal};
  cfg.datasets_per_class = 50;
  cfg.attacked_per_class = 10;
  cfg.models_per_dataset = 10;
  cfg.rows_per_dataset = 1000;
  cfg.repetitions = 50;
  cfg.seed = 808;
  const auto run = run_shadow_pipeline(cfg, surrogate_inputs(808), nn_train_defaults(), mps_train_defaults(), workers());
  std::vector<AttackSummary> s;
  for (Variant v : cfg.variants) {
    AttackOptions opt;
    opt.meta = default_meta(v);
    s.push_back(evaluate_attack(cfg, run.cell(1.0, v), opt, derive_seed(808, {static_cast<std::uint64_t>(v)}), workers()));
  }
  const auto& raw = s[0];
  const auto& svd = s[1];
  const auto& signs = s[2];
  const auto& univ = s[3];
  const bool raw_ok = raw.mean >= raw.null_hi + 0.10;
  const bool univ_ok = univ.mean >= univ.null_lo && univ.mean <= univ.null_hi;
  const bool signs_ok = signs.mean >= signs.null_lo && signs.mean <= signs.null_hi;
  const bool order_ok = svd.mean >= univ.mean;
  std::string detail = fmt("%zu attacked models, null band [%.3f, %.3f];", raw.attacked_models, raw.null_lo, raw.null_hi);
  detail += fmt(" mps-raw %.3f (need >= %.3f) %s;", raw.mean, raw.null_hi + 0.10, raw_ok ? "ok" : "FAIL");
  detail += fmt(" mps-svd %.3f (need >= mps-univocal) %s;", svd.mean, order_ok ? "ok" : "FAIL");
  detail += fmt(" mps-svd+signs %.3f (need in band) %s;", signs.mean, signs_ok ? "ok" : "FAIL");
  detail += fmt(" mps-univocal %.3f (need in band) %s", univ.mean, univ_ok ? "ok" : "FAIL");
  return {raw_ok && univ_ok && signs_ok && order_ok && raw.attacked_models >= 200, detail};
}

// 9
Verdict parameter_counts() {
  const std::size_t nn = init_mlp({9, 16, 16, 8, 4, 2}, 1).param_count();
  const Dataset d = gen_surrogate(10, 1, 0.5, surrogate_targets(), 1);
  const std::size_t width = onehot_width(d);
  const std::size_t mps = init_mps(mps_feature_map(d).features.size() + 1, 2, 2, 2, 5, 1).param_count();
  return {nn == 614 && mps == 40 && width == 9, fmt("network %zu (need 614, input width %zu), MPS %zu (need 40)", nn, width, mps)};
}

double pure_relative(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale < 1e-9 ? std::abs(a - b) : std::abs(a - b) / scale;
}

// 10
Verdict gradient_correctness() {
  Rng rng(1010);
  const Dataset d = gen_surrogate(200, 1, 0.5, surrogate_targets(), 1011);
  const EncodedTable enc = encode_onehot(d);
  const FeatureMap fm = mps_feature_map(d);
  double worst_nn = 0.0, worst_mps = 0.0;
  for (std::uint64_t probe = 0; probe < 100; ++probe) {
    std::uniform_int_distribution<std::size_t> row(0, d.size() - 1);
    const std::size_t r = row(rng);

    const Mlp net = init_mlp({9, 16, 16, 8, 4, 2}, derive_seed(1012, {probe}));
    const auto f = mlp_forward(net, enc.x[r]);
    const auto g = mlp_backward(net, f.cache, cross_entropy(f.logits, enc.y[r]).grad).flat();
    std::uniform_int_distribution<std::size_t> coord_nn(0, g.size() - 1);
    const std::size_t cn = coord_nn(rng);
    auto p = flatten_params(net);
    auto loss_nn = [&](double v) {
      auto q = p;
      q[cn] = v;
      return cross_entropy(mlp_forward(unflatten_params(net, q), enc.x[r]).logits, enc.y[r]).loss;
    };
    const double h = 1e-6;
    worst_nn = std::max(worst_nn, pure_relative(g[cn], (loss_nn(p[cn] + h) - loss_nn(p[cn] - h)) / (2 * h)));

    const MpsModel m = init_mps(6, 2, 2, 2, 5, derive_seed(1013, {probe}));
    const Tensor x = embed(fm, raw_inputs(d, r), derive_seed(1014, {probe})).vectors;
    const std::vector<Tensor> xs{x};
    const std::vector<int> ys{d.label_of(r)};
    const auto gm = mps_gradients(m, xs, ys);
    std::vector<double> flat;
    for (const auto& t : gm.sites) flat.insert(flat.end(), t.data().begin(), t.data().end());
    std::uniform_int_distribution<std::size_t> coord_mps(0, flat.size() - 1);
    const std::size_t cm = coord_mps(rng);
    auto pm = flatten_params(m);
    auto loss_mps = [&](double v) {
      auto q = pm;
      q[cm] = v;
      return cross_entropy(forward(unflatten_params(m, q), x), ys[0]).loss;
    };
    worst_mps = std::max(worst_mps, pure_relative(flat[cm], (loss_mps(pm[cm] + h) - loss_mps(pm[cm] - h)) / (2 * h)));
  }
  return {worst_nn <= 1e-5 && worst_mps <= 1e-5,
          fmt("100 probes each, worst relative error network %.2e, MPS %.2e (tol 1e-5)", worst_nn, worst_mps)};
}

// 11
Verdict surrogate_calibration() {
  const auto targets = surrogate_targets();
  const Dataset d = gen_surrogate(20000, 1, 0.5, targets, 1111);
  const std::size_t n = targets.names.size();
  double worst = 0.0;
  std::string where;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      std::vector<double> a, b;
      const std::size_t fi = d.feature_index(targets.names[i]), fj = d.feature_index(targets.names[j]);
      for (const auto& row : d.rows) {
        a.push_back(row[fi]);
        b.push_back(row[fj]);
      }
      const double gap = std::abs(oracle::pearson(a, b) - targets.matrix(i, j));
      if (gap > worst) {
        worst = gap;
        where = targets.names[i] + "/" + targets.names[j];
      }
    }
  const std::size_t ai = d.feature_index("age"), ri = d.feature_index("recovery");
  std::vector<double> age, rec;
  for (const auto& row : d.rows) {
    age.push_back(row[ai]);
    rec.push_back(row[ri]);
  }
  return {worst <= 0.05, fmt("20000 rows, worst |r - target| %.3f at %s (tol 0.05); age/recovery r = %.3f",
                             worst, where.c_str(), oracle::pearson(age, rec))};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 12
Verdict determinism() {
  const Json j = Json::parse(R"({
    "experiment": "surrogate-pipeline", "seed": 1212,
    "data": {"pool_rows": 5000, "test_rows": 500},
    "shadow": {"levels": [0.5, 1.0], "variants": ["nn", "mps-raw", "mps-svd+signs", "mps-univocal"],
               "datasets_per_class": 4, "attacked_per_class": 1, "models_per_dataset": 3,
               "rows_per_dataset": 300, "repetitions": 5},
    "train": {"nn": {"epochs": 10}, "mps": {"epochs": 5}},
    "attack": {"mlp": {"epochs": 50}}
  })");
  const auto cfg = parse_pipeline(j);
  const fs::path base = fs::temp_directory_path() / "mpsguard_acceptance_determinism";
  fs::remove_all(base);
  std::vector<fs::path> dirs;
  for (std::size_t w : {std::size_t{1}, std::size_t{2}}) {
    const RunContext ctx{j, base / ("w" + std::to_string(w)), w};
    write_pipeline(ctx, run_pipeline(cfg, w, &ctx));
    dirs.push_back(ctx.out_dir);
  }
  std::size_t files = 0, same = 0;
  for (const auto& e : fs::recursive_directory_iterator(dirs[0])) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path other = dirs[1] / fs::relative(e.path(), dirs[0]);
    same += fs::exists(other) && slurp(e.path()) == slurp(other);
  }
  fs::remove_all(base);
  return {files > 0 && files == same, fmt("workers 1 vs 2: %zu/%zu CSV files byte-identical", same, files)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string report_path = argc > 1 ? argv[1] : "acceptance_report.txt";
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"pi-invariance of the skeleton form", pi_invariance},
      {"univocality under random gauges", univocality},
      {"SVD form keeps a sign freedom", svd_residual_freedom},
      {"skeleton o sign gauge o SVD form = skeleton form", composition},
      {"toy gradient identity", gradient_identity},
      {"toy weight/bias leakage at desk scale", toy_reproduction},
      {"task accuracy flat across imbalance levels", task_accuracy_flat},
      {"attack accuracy ordering at imbalance 1.0", attack_ordering},
      {"parameter counts 614 and 40", parameter_counts},
      {"analytic gradients vs finite differences", gradient_correctness},
      {"surrogate correlation calibration", surrogate_calibration},
      {"pipeline determinism across worker counts", determinism},
  };
  std::ostringstream report;
  int crashed = 0, passed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string line;
    try {
      const Verdict v = criteria[i].second();
      passed += v.pass;
      line = fmt("[%s] %2zu %s: ", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first) + v.detail;
    } catch (const std::exception& e) {
      ++crashed;
      line = fmt("[FAIL] %2zu %s: crashed: %s", i + 1, criteria[i].first, e.what());
    }
    line += fmt(" [%.1fs]", seconds_since(t0));
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    report << line << '\n';
  }
  const std::string summary = fmt("%d/%zu criteria pass", passed, criteria.size());
  std::printf("%s\n", summary.c_str());
  report << summary << '\n';
  std::ofstream(report_path) << report.str();
  return crashed ? 1 : 0;
}
