#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sys/wait.h>

#include "wfkit/error.hpp"
#include "wfkit/experiment.hpp"
#include "wfkit/trace.hpp"

using namespace wfkit;
namespace fs = std::filesystem;

namespace {

nlohmann::json tiny_doc(const fs::path& out) {
  auto doc = nlohmann::json::parse(R"({
    "seed": 5, "n_sites": 3, "sessions": 40,
    "aggregation": {"interval": 0.1, "feature_len": 160},
    "profiler": {"blocks": 2, "kernel_size": 3, "channels_out": 4},
    "attention": {"heads": 2, "layers": 1, "m": 4, "model_dim": 4},
    "training": {"epochs": 2, "batch": 8, "split": {"train": 0.6, "val": 0.2, "test": 0.2}},
    "eval": {"ks": [1, 2], "threshold": 0.5}
  })");
  doc["paths"]["out"] = out.string();
  return doc;
}

fs::path scratch(const char* name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(WFKIT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(ExperimentConfig, JsonRoundTrip) {
  const ExperimentConfig cfg = experiment_config_from_json(tiny_doc("/tmp/x"));
  EXPECT_EQ(cfg.n_sites, 3);
  EXPECT_EQ(cfg.model.n_sites, 3);
  EXPECT_EQ(cfg.model.feature_len, 160);
  EXPECT_EQ(cfg.training.train.batch_size, 8);
  const ExperimentConfig back = experiment_config_from_json(experiment_config_to_json(cfg));
  EXPECT_EQ(experiment_config_to_json(back), experiment_config_to_json(cfg));
}

TEST(ExperimentConfig, Rejections) {
  auto code = [](nlohmann::json doc) {
    try {
      validate_experiment_config(experiment_config_from_json(doc));
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kIoError;
  };
  auto doc = tiny_doc("/tmp/x");
  doc["training"]["split"] = {{"train", 0.8}, {"val", 0.2}, {"test", 0.2}};
  EXPECT_EQ(code(doc), ErrorCode::kConfigError);
  doc = tiny_doc("/tmp/x");
  doc["colour"] = "blue";
  EXPECT_EQ(code(doc), ErrorCode::kConfigError);
  doc = tiny_doc("/tmp/x");
  doc["defense"] = {{"variant", "mystery"}};
  EXPECT_EQ(code(doc), ErrorCode::kConfigError);
  doc = tiny_doc("/tmp/x");
  doc["eval"]["ks"] = {9};
  EXPECT_EQ(code(doc), ErrorCode::kConfigError);
}

TEST(RunExperiment, BadSplitFailsBeforeAnyWork) {
  const fs::path out = scratch("wfkit_exp_badsplit");
  auto doc = tiny_doc(out);
  doc["training"]["split"] = {{"train", 0.8}, {"val", 0.2}, {"test", 0.2}};
  try {
    run_experiment(experiment_config_from_json(doc));
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "config");
    EXPECT_EQ(e.code(), ErrorCode::kConfigError);
  }
  EXPECT_FALSE(fs::exists(out));
}

TEST(RunExperiment, ArtifactsAndDeterminism) {
  const fs::path a = scratch("wfkit_exp_a");
  const fs::path b = scratch("wfkit_exp_b");
  auto cfg = experiment_config_from_json(tiny_doc(a));
  const Report report = run_experiment(cfg);
  EXPECT_EQ(report.n_records, 8u);
  const RunPaths paths{a};
  for (const fs::path& p : {paths.run_json(), paths.report_json(), paths.report_text(), paths.history(),
                            paths.model(), paths.features(), paths.dataset() / "sessions.json"}) {
    EXPECT_TRUE(fs::exists(p)) << p;
  }
  const auto run_doc = nlohmann::json::parse(read_text_file(paths.run_json()));
  EXPECT_EQ(run_doc.at("version"), toolkit_version());
  cfg.out_dir = b;
  run_experiment(cfg);
  EXPECT_EQ(read_text_file(paths.report_json()), read_text_file(RunPaths{b}.report_json()));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(RunExperiment, StagesComposeLikeRun) {
  const fs::path a = scratch("wfkit_exp_chain_run");
  const fs::path b = scratch("wfkit_exp_chain_manual");
  auto cfg = experiment_config_from_json(tiny_doc(a));
  cfg.defense = RandomDefense{0.1};
  run_experiment(cfg);
  const RunPaths p{b};
  stage_synth(cfg, p.dataset());
  stage_defend(cfg, p.dataset(), p.defended());
  stage_aggregate(cfg, p.defended(), p.features());
  stage_train(cfg, p.features(), p.model(), p.history());
  stage_eval(cfg, p.features(), p.model(), p.report_json());
  EXPECT_EQ(read_text_file(RunPaths{a}.report_json()), read_text_file(p.report_json()));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(RunExperiment, ExitCodes) {
  EXPECT_EQ(exit_code_for("config", ErrorCode::kConfigError), 2);
  EXPECT_EQ(exit_code_for("aggregate", ErrorCode::kIoError), 3);
  EXPECT_EQ(exit_code_for("train", ErrorCode::kEmptyDataset), 4);
  EXPECT_EQ(exit_code_for("train", ErrorCode::kBadRate), 2);
}

TEST(Cli, ExitCodesAndRun) {
  const fs::path dir = scratch("wfkit_cli_test");
  fs::create_directories(dir);
  auto doc = tiny_doc(dir / "run");
  write_text_file(dir / "good.json", doc.dump());
  doc["training"]["split"]["train"] = 1.0;
  write_text_file(dir / "bad.json", doc.dump());
  EXPECT_EQ(run_cli("--config " + (dir / "bad.json").string() + " run"), 2);
  EXPECT_EQ(run_cli("--config " + (dir / "good.json").string() + " --threads 2 run"), 0);
  EXPECT_EQ(run_cli("report --in " + (dir / "run" / "report.json").string()), 0);
  EXPECT_EQ(run_cli("--config " + (dir / "good.json").string() + " aggregate --in " +
                    (dir / "missing").string()),
            3);
  fs::remove_all(dir);
}
