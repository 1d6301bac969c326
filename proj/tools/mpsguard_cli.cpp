// mpsguard command line: config-driven experiments writing CSV files.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mpsguard/mpsguard.hpp"

namespace mg = mpsguard;

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
};

mg::RunContext make_context(const Flags& f) {
  mg::RunContext ctx;
  if (!f.config.empty()) ctx.config = mg::load_json(f.config);
  if (!ctx.config.is_object()) throw mg::ConfigError("$", "expected an object");
  if (f.seed) ctx.config["seed"] = *f.seed;
  const mg::ConfigView root(ctx.config, "$");
  ctx.workers = f.workers ? *f.workers : root.count("workers", 1, 1);
  if (ctx.workers == 0) throw mg::ConfigError("--workers", "must be at least 1");
  ctx.out_dir = !f.out.empty() ? f.out : root.text("out", "out");
  return ctx;
}

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "output directory (overrides config 'out')");
  cmd->add_option("--seed", f.seed, "master seed (overrides config 'seed')");
  cmd->add_option("--workers", f.workers, "worker threads (overrides config 'workers')");
}

int toy_vuln(const Flags& f) {
  const auto ctx = make_context(f);
  const auto cfg = mg::parse_toy_vuln(ctx.config);
  const auto r = mg::run_toy_vuln(cfg, ctx.workers);
  mg::write_toy_vuln(ctx, r);
  std::printf("separation before: linear %.3f product %.3f\n", r.before_sep.linear, r.before_sep.product);
  std::printf("separation after:  linear %.3f product %.3f\n", r.after_sep.linear, r.after_sep.product);
  if (r.after_sep.linear < 0.9)
    throw mg::PropertyFailure("post-training records are not linearly separable at 90% (held-out " +
                              std::to_string(r.after_sep.linear) + ")");
  return 0;
}

int pipeline(const Flags& f) {
  const auto ctx = make_context(f);
  const auto cfg = mg::parse_pipeline(ctx.config);
  const auto r = mg::run_pipeline(cfg, ctx.workers, &ctx);
  mg::write_pipeline(ctx, r);
  for (std::size_t i = 0; i < r.attacks.size(); ++i) {
    const auto& a = r.attacks[i];
    std::printf("%-14s level %.2f  task %.3f  attack %.3f [%.3f, %.3f]  null [%.3f, %.3f]\n",
                mg::variant_name(a.variant), a.level, r.tasks[i].mean, a.mean, a.band_lo, a.band_hi, a.null_lo,
                a.null_hi);
  }
  if (!r.guards_ok) throw mg::PropertyFailure("a leakage guard failed; see attacks.csv");
  return 0;
}

int canonical_props(const Flags& f) {
  const auto ctx = make_context(f);
  const auto cfg = mg::parse_props(ctx.config);
  const auto r = mg::run_canonical_props(cfg, ctx.workers);
  mg::write_props(ctx, r);
  for (const auto& row : r.rows)
    std::printf("N=%zu d=%zu %-24s worst %.3e  %s\n", row.n_sites, row.dim, row.property.c_str(), row.worst,
                row.status.c_str());
  if (!r.all_pass()) throw mg::PropertyFailure("canonical property suite has failing rows; see props.csv");
  return 0;
}

int gen_data(const Flags& f) {
  const auto ctx = make_context(f);
  const auto cfg = mg::parse_gen_data(ctx.config);
  const auto d = mg::run_gen_data(cfg);
  mg::write_gen_data(ctx, cfg, d);
  std::printf("wrote %zu rows to %s\n", d.size(), (ctx.out_dir / cfg.file).string().c_str());
  return 0;
}

int train(const Flags& f) {
  const auto ctx = make_context(f);
  const auto cfg = mg::parse_train_command(ctx.config);
  const auto r = mg::run_train_command(cfg);
  mg::write_train_command(ctx, r);
  std::printf("test accuracy %.4f after %zu epochs\n", r.test_accuracy, r.history.size());
  return 0;
}

int canonicalize(const std::string& model_path, const std::string& form, const std::string& output) {
  std::ifstream in(model_path);
  if (!in) throw mg::ConfigError("--model", "cannot open '" + model_path + "'");
  const auto m = mg::read_mps(in);
  const auto r = mg::run_canonicalize(m, form);
  std::ofstream os(output);
  if (!os) throw mg::ConfigError("--output", "cannot open '" + output + "'");
  mg::write_model(os, r.model);
  std::printf("materialization residual %.3e\n", r.residual);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mpsguard: MPS canonical forms and property-inference experiments"};
  app.require_subcommand(1);
  Flags flags;
  std::string model_path, form = "skeleton", output = "canonical.txt";

  auto* c_toy = app.add_subcommand("toy-vuln", "toy-model weight/bias leakage experiment");
  auto* c_pipe = app.add_subcommand("pipeline", "shadow-training attack on the surrogate data");
  auto* c_props = app.add_subcommand("canonical-props", "canonical-form property suite");
  auto* c_gen = app.add_subcommand("gen-data", "write a generated dataset as CSV");
  auto* c_train = app.add_subcommand("train", "train one model and write it with its history");
  auto* c_canon = app.add_subcommand("canonicalize", "canonicalize a stored MPS model");
  for (auto* c : {c_toy, c_pipe, c_props, c_gen, c_train}) add_common(c, flags);
  c_canon->add_option("--model", model_path, "input MPS model file")->required()->check(CLI::ExistingFile);
  c_canon->add_option("--form", form, "skeleton or svd")->check(CLI::IsMember({"skeleton", "svd"}));
  c_canon->add_option("--output", output, "output model file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*c_toy) return toy_vuln(flags);
    if (*c_pipe) return pipeline(flags);
    if (*c_props) return canonical_props(flags);
    if (*c_gen) return gen_data(flags);
    if (*c_train) return train(flags);
    if (*c_canon) return canonicalize(model_path, form, output);
  } catch (const mg::PropertyFailure& e) {
    std::cerr << "property failure: " << e.what() << '\n';
    return 3;
  } catch (const mg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const mg::DataError& e) {
    std::cerr << "data error: " << e.what();
    if (e.line()) std::cerr << " (line " << e.line() << ')';
    std::cerr << '\n';
    return 1;
  } catch (const mg::StaleCacheError& e) {
    std::cerr << "stale cache: " << e.what() << '\n';
    return 1;
  } catch (const mg::Error& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
