#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "ulb/pipeline.hpp"

using namespace ulb;
namespace fs = std::filesystem;

namespace {

ExperimentConfig smoke_config(const fs::path& out) {
  json j;
  j["output_dir"] = out.string();
  j["dataset"] = {{"type", "synth"},
                  {"synth",
                   {{"cluster_count", 3},
                    {"per_cluster", 40},
                    {"dim", 4},
                    {"spread", 0.35},
                    {"seed", 5}}},
                  {"test_fraction", 0.2},
                  {"split_seed", 12}};
  j["model"] = {{"layer_widths", {4, 8, 3}}, {"activation", "relu"}};
  j["train"] = {{"epochs", 2}, {"batch_size", 24}, {"lr0", 0.1}, {"checkpoint_count", 4}};
  j["accountant"] = {{"alpha", 2.0}, {"sigma", 0.1}};
  j["forget_set_size"] = 8;
  j["topk"] = {{"sizes", {10}}, {"metrics", {"el2n"}}};
  j["unlearn"] = {{"lr", 0.05}, {"epochs", 2}, {"batch_size", 24}, {"eval_every", 2}};
  j["methods"] = {{{"method", "finetune"}}};
  j["seeds"] = {1};
  j["oracle_seeds"] = {101, 102};
  j["metrics"] = {"ua", "ra", "utility", "mia", "gus"};
  j["group"] = {{"enabled", true}, {"alpha", 8.0}, {"n_outer", 3}, {"n_inner", 1}, {"seed", 2}};
  j["mia"] = {{"members", 24}, {"nonmembers", 24}, {"seed", 3}};
  j["barrier"] = {{"grid_n", 8}};
  return parse_experiment_config(j);
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "ulb_pipeline_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("pipeline smoke run") {
  const fs::path out = fresh_dir("smoke");
  const ExperimentConfig cfg = smoke_config(out);

  const RunReport report = run_pipeline(cfg);
  REQUIRE(report.ok);
  CHECK(report.executed.size() == stage_order().size());

  SECTION("manifest records every stage") {
    const json manifest = read_json_file(out / "manifest.json");
    for (const std::string& name : stage_order()) {
      CHECK(manifest.at("stages").contains(name));
      CHECK(manifest.at("stages").at(name).at("done").get<bool>());
    }
  }

  SECTION("stratified splits are disjoint and sized") {
    std::set<std::int64_t> seen;
    for (const char* label : {"bottom", "q1", "q2", "q3", "top"}) {
      const ForgetSplit split =
          load_split(out / "seed_1" / "splits" / ("stratified_" + std::string(label) + ".json"));
      CHECK(split.forget_ids.size() == 8);
      for (std::int64_t id : split.forget_ids) {
        CHECK(seen.insert(id).second);  // never seen before
      }
      std::set<std::int64_t> retain(split.retain_ids.begin(), split.retain_ids.end());
      for (std::int64_t id : split.forget_ids) CHECK(retain.count(id) == 0);
    }
  }

  SECTION("report emits the summary and at least 4 SVG charts") {
    CHECK(fs::exists(out / "report" / "summary.csv"));
    int svgs = 0;
    for (const auto& entry : fs::directory_iterator(out / "report")) {
      if (entry.path().extension() == ".svg") ++svgs;
    }
    CHECK(svgs >= 4);
  }

  SECTION("evaluate wrote time-to-unlearn and group estimates") {
    CHECK(fs::exists(out / "seed_1" / "evaluate" / "time_to_unlearn.csv"));
    std::ifstream in(out / "seed_1" / "evaluate" / "group_estimates.csv");
    REQUIRE(in.good());
    std::string header, row;
    std::getline(in, header);
    CHECK(header == "split,mean,stddev,repeats");
    int rows = 0;
    while (std::getline(in, row)) {
      if (!row.empty()) ++rows;
    }
    CHECK(rows == 6);  // 5 strata + 1 top-k split
  }

  SECTION("gus arm produced poisoned runs with a gus series") {
    const UnlearnRun run = stage::load_run(out / "seed_1" / "gus" / "stratified_top__finetune");
    CHECK_NOTHROW(run.metric("gus"));
    CHECK(fs::exists(out / "seed_1" / "gus" / "stratified_top" / "poison_record.bin"));
  }

  SECTION("rerun on a completed directory executes nothing") {
    const RunReport again = run_pipeline(cfg);
    CHECK(again.ok);
    CHECK(again.executed.empty());
    CHECK(again.skipped.size() == stage_order().size());
  }

  SECTION("correlations carry sample sizes") {
    std::ifstream in(out / "seed_1" / "correlate" / "correlations.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "kind,x,y,method,metric,spearman,n");
    bool saw_proxy = false;
    std::string row;
    while (std::getline(in, row)) {
      if (row.rfind("proxy,privacy_loss,avg_grad_norm", 0) == 0) saw_proxy = true;
    }
    CHECK(saw_proxy);
  }
}

TEST_CASE("pipeline halts at the consuming stage on a corrupt checkpoint") {
  const fs::path out = fresh_dir("corrupt");
  ExperimentConfig cfg = smoke_config(out);
  cfg.output_dir = out.string();

  RunReport report = run_pipeline(cfg, "oracle");
  REQUIRE(report.ok);

  // flip one payload byte in the trained model the unlearn stage consumes
  const fs::path victim = out / "seed_1" / "trajectory" / "final.ulb";
  std::fstream f(victim, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(64);
  char byte;
  f.seekg(64);
  f.read(&byte, 1);
  byte ^= 0x4;
  f.seekp(64);
  f.write(&byte, 1);
  f.close();

  report = run_pipeline(cfg);
  CHECK_FALSE(report.ok);
  CHECK(report.failed_stage == "unlearn");
  CHECK(report.error.find("checksum") != std::string::npos);
}

TEST_CASE("single-stage runs demand upstream artifacts") {
  const fs::path out = fresh_dir("deps");
  const ExperimentConfig cfg = smoke_config(out);
  const RunReport report = run_one_stage(cfg, "unlearn");
  CHECK_FALSE(report.ok);
  CHECK(report.failed_stage == "unlearn");
  CHECK(report.error.find("train") != std::string::npos);
}

TEST_CASE("config digest reacts to any change") {
  const ExperimentConfig a = smoke_config("cfg_digest_probe");
  ExperimentConfig b = a;
  CHECK(config_digest(a) == config_digest(b));
  b.margin = 0.06;
  CHECK(config_digest(a) != config_digest(b));
}
