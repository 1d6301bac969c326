#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mpsguard/experiments.hpp"

using namespace mpsguard;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mpsguard_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json small_pipeline() {
  return Json::parse(R"({
    "experiment": "pipeline", "seed": 3,
    "data": {"pool_rows": 3000, "test_rows": 300},
    "shadow": {"levels": [0.5, 1.0], "variants": ["nn", "mps-raw", "mps-univocal"],
               "datasets_per_class": 3, "attacked_per_class": 1, "models_per_dataset": 2,
               "rows_per_dataset": 200, "repetitions": 3},
    "train": {"nn": {"epochs": 3}, "mps": {"epochs": 2}},
    "attack": {"mlp": {"epochs": 20}}
  })");
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MPSGUARD_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string config_error_path(const Json& j) {
  try {
    parse_pipeline(j);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "";
}

}  // namespace

TEST(Config, ErrorsNameTheOffendingField) {
  Json j = small_pipeline();
  j["shadow"]["levels"][1] = 1.5;
  EXPECT_EQ(config_error_path(j), "$.shadow.levels[1]");
  j = small_pipeline();
  j["shadow"]["variants"][0] = "cnn";
  EXPECT_EQ(config_error_path(j), "$.shadow.variants[0]");
  j = small_pipeline();
  j["train"]["mps"]["epoch"] = 3;
  EXPECT_EQ(config_error_path(j), "$.train.mps.epoch");
  j = small_pipeline();
  j.erase("seed");
  EXPECT_EQ(config_error_path(j), "$.seed");
  j = small_pipeline();
  j["data"] = Json::parse(R"({"source": "csv", "path": "/nonexistent/file.csv"})");
  EXPECT_EQ(config_error_path(j), "$.data.path");
  j = small_pipeline();
  j["experiment"] = "toy-vuln";
  EXPECT_EQ(config_error_path(j), "$.experiment");
}

TEST(Config, HashIgnoresRuntimeFields) {
  Json a = small_pipeline(), b = small_pipeline();
  b["workers"] = 8;
  b["out"] = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b["seed"] = 4;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(ToyVuln, WritesFourHundredScatterRows) {
  ToyVulnConfig c;
  c.train.epochs = 2;
  const auto r = run_toy_vuln(c);
  RunContext ctx{Json::parse(R"({"seed": 0})"), scratch("toy"), 1};
  write_toy_vuln(ctx, r);
  std::ifstream in(ctx.out_dir / "scatter.csv");
  std::string line;
  std::size_t rows = 0;
  std::getline(in, line);
  EXPECT_EQ(line.rfind("# mpsguard version=", 0), 0u);
  std::getline(in, line);
  EXPECT_EQ(line, "phase,majority,model,w_irr,bias");
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 400u);
  EXPECT_NEAR(r.before_sep.linear, 0.5, 0.1);
}

TEST(CanonicalProps, EmptyGridGivesEmptyReport) {
  PropsConfig c;
  c.sites.clear();
  const auto r = run_canonical_props(c);
  EXPECT_TRUE(r.rows.empty());
  EXPECT_TRUE(r.all_pass());
}

TEST(CanonicalProps, SmallGridPassesAndReportsSingularCase) {
  PropsConfig c;
  c.sites = {4};
  c.models = 5;
  c.gauges = 3;
  const auto r = run_canonical_props(c);
  EXPECT_TRUE(r.all_pass());
  EXPECT_EQ(r.rows.back().property, "singular-intersection");
  EXPECT_EQ(r.rows.back().status, "expected-failure");
}

TEST(Pipeline, ProducesNineRowsPerTableAndReusesRecords) {
  Json j = small_pipeline();
  j["shadow"]["levels"] = Json::parse("[0.5, 0.8, 1.0]");
  j["records"] = Json::parse(R"({"reuse": true})");
  const auto cfg = parse_pipeline(j);
  RunContext ctx{j, scratch("pipe_reuse"), 1};
  const auto r = run_pipeline(cfg, 1, &ctx);
  write_pipeline(ctx, r);
  EXPECT_FALSE(r.reused_records);
  EXPECT_EQ(r.attacks.size(), 9u);
  EXPECT_TRUE(r.guards_ok);
  const std::string attacks = slurp(ctx.out_dir / "attacks.csv");
  EXPECT_EQ(std::count(attacks.begin(), attacks.end(), '\n'), 11);

  const auto again = run_pipeline(cfg, 1, &ctx);
  EXPECT_TRUE(again.reused_records);
  write_pipeline(ctx, again);
  EXPECT_EQ(slurp(ctx.out_dir / "attacks.csv"), attacks);

  Json changed = j;
  changed["train"]["mps"]["epochs"] = 3;
  EXPECT_THROW(run_pipeline(parse_pipeline(changed), 1, &ctx), StaleCacheError);
  Json more_reps = j;
  more_reps["shadow"]["repetitions"] = 4;
  EXPECT_TRUE(run_pipeline(parse_pipeline(more_reps), 1, &ctx).reused_records);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("cli");
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("no-such-command"), 1);
  {
    std::ofstream(dir / "bad.json") << R"({"seed": 1, "canonical": {"sitez": [3]}})";
    EXPECT_EQ(run_cli("canonical-props --config " + (dir / "bad.json").string() + " --out " + dir.string()), 1);
  }
  {
    std::ofstream(dir / "broken.json") << "{ not json";
    EXPECT_EQ(run_cli("canonical-props --config " + (dir / "broken.json").string()), 1);
  }
  {
    std::ofstream(dir / "ok.json") << R"({"canonical": {"sites": [3], "models": 3, "gauges": 2}})";
    EXPECT_EQ(run_cli("canonical-props --config " + (dir / "ok.json").string() + " --seed 4 --out " + dir.string()),
              0);
    EXPECT_TRUE(fs::exists(dir / "props.csv"));
    EXPECT_NE(slurp(dir / "props.csv").find("seed=4"), std::string::npos);
  }
  {
    std::ofstream(dir / "gen.json") << R"({"seed": 1, "generate": {"rows": 50, "file": "d.csv"}})";
    EXPECT_EQ(run_cli("gen-data --config " + (dir / "gen.json").string() + " --out " + dir.string()), 0);
    const auto ingested = ingest_csv((dir / "d.csv").string(), surrogate_schema());
    EXPECT_EQ(ingested.data.size(), 50u);
  }
  {
    std::ofstream(dir / "m.txt") << "mps 5 2 2 2 4\n";
    EXPECT_EQ(run_cli("canonicalize --model " + (dir / "m.txt").string()), 2);
    std::ofstream os(dir / "m.txt");
    MpsModel sing = random_mps(5, 2, 2, 2, 4, 1);
    sing.sites[0](0, 0) = sing.sites[0](0, 1) = 0.0;
    write_model(os, sing);
    os.close();
    EXPECT_EQ(run_cli("canonicalize --model " + (dir / "m.txt").string() + " --output " +
                      (dir / "c.txt").string()),
              2);
    std::ofstream ok(dir / "m.txt");
    write_model(ok, random_mps(5, 2, 2, 2, 4, 1));
    ok.close();
    EXPECT_EQ(run_cli("canonicalize --model " + (dir / "m.txt").string() + " --output " +
                      (dir / "c.txt").string()),
              0);
  }
  {
    std::ofstream(dir / "toy.json") << R"({"seed": 1, "toy": {"models_per_sign": 4, "rows": 100,
                                           "train": {"epochs": 1}}})";
    // a few barely trained models cannot reach the separation threshold
    EXPECT_EQ(run_cli("toy-vuln --config " + (dir / "toy.json").string() + " --out " + dir.string()), 3);
  }
}

TEST(TrainCommand, WritesModelAndHistory) {
  const Json j = Json::parse(R"({"seed": 2, "data": {"pool_rows": 500, "test_rows": 200},
                                  "model": {"arch": "mps"}, "train": {"epochs": 3}})");
  const auto cfg = parse_train_command(j);
  const auto r = run_train_command(cfg);
  EXPECT_EQ(r.history.size(), 3u);
  std::istringstream in(r.model_text);
  const MpsModel m = read_mps(in);
  EXPECT_EQ(m.param_count(), 40u);
  EXPECT_GT(r.test_accuracy, 0.5);
}
