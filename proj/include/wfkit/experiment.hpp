#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wfkit/aggregate.hpp"
#include "wfkit/defenses.hpp"
#include "wfkit/error.hpp"
#include "wfkit/metrics.hpp"
#include "wfkit/model.hpp"
#include "wfkit/synth.hpp"
#include "wfkit/train.hpp"

namespace wfkit {

struct SplitFractions {
  double train = 0.8;
  double val = 0.04;
  double test = 0.16;
};

struct TrainingSection {
  TrainConfig train;
  SplitFractions split;
};

struct EvalSection {
  std::vector<int> ks{1, 2, 3};
  double threshold = 0.5;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  int n_sites = 20;
  int n_unmonitored = 100;  // open world only
  std::size_t sessions = 2500;
  MixConfig mix;
  std::optional<DefenseConfig> defense;
  AggregationConfig aggregation;
  ModelConfig model;  // n_sites and feature_len are filled from the sections above
  TrainingSection training;
  EvalSection eval;
  std::filesystem::path out_dir = "runs/default";
};

// Validates every section; nothing is written. Throws Error{kConfigError} and
// the section-specific config errors.
void validate_experiment_config(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const nlohmann::json& doc);
nlohmann::ordered_json experiment_config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Artifact layout under cfg.out_dir.
struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path dataset() const { return root / "dataset"; }
  std::filesystem::path defended() const { return root / "defended"; }
  std::filesystem::path features() const { return root / "features.bin"; }
  std::filesystem::path model() const { return root / "model.json"; }
  std::filesystem::path history() const { return root / "history.csv"; }
  std::filesystem::path report_json() const { return root / "report.json"; }
  std::filesystem::path report_text() const { return root / "report.txt"; }
  std::filesystem::path run_json() const { return root / "run.json"; }
};

// An Error raised inside a named pipeline stage; what() is "<stage>: <inner>".
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const Error& inner)
      : std::runtime_error(stage + ": " + inner.what()), stage_(std::move(stage)), code_(inner.code()) {}
  const std::string& stage() const { return stage_; }
  ErrorCode code() const { return code_; }

 private:
  std::string stage_;
  ErrorCode code_;
};

// 2 for configuration problems, 4 for failures inside training, 3 otherwise.
int exit_code_for(const std::string& stage, ErrorCode code);

// Individually invokable stages. Each reads and writes files only.
Dataset stage_synth(const ExperimentConfig& cfg, const std::filesystem::path& out);
Dataset stage_defend(const ExperimentConfig& cfg, const std::filesystem::path& in,
                     const std::filesystem::path& out);
FeatureSet stage_aggregate(const ExperimentConfig& cfg, const std::filesystem::path& in,
                           const std::filesystem::path& out_bin);
TrainResult stage_train(const ExperimentConfig& cfg, const std::filesystem::path& features,
                        const std::filesystem::path& model_out, const std::filesystem::path& history_out);
Report stage_eval(const ExperimentConfig& cfg, const std::filesystem::path& features,
                  const std::filesystem::path& model, const std::filesystem::path& report_out);
std::string stage_report(const std::filesystem::path& report_json);

// synth -> defend -> aggregate -> train -> eval -> report, plus run.json.
Report run_experiment(const ExperimentConfig& cfg);

// Index ranges [begin, end) of the three splits for n sessions.
struct SplitRanges {
  std::size_t train_end = 0;
  std::size_t val_end = 0;
  std::size_t n = 0;
};
SplitRanges split_ranges(std::size_t n, const SplitFractions& split);

std::string toolkit_version();

}  // namespace wfkit
