// wfkit: synthesize, defend, aggregate, train, evaluate and report.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "wfkit/experiment.hpp"
#include "wfkit/parallel.hpp"

namespace fs = std::filesystem;
using namespace wfkit;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string in;
  std::string model;
  std::size_t threads = 1;
};

ExperimentConfig resolve(const Options& opt, const std::string& command) {
  ExperimentConfig cfg;
  try {
    if (!opt.config.empty()) cfg = load_experiment_config(opt.config);
  } catch (const Error& ex) {
    throw StageError("config", ex);
  }
  if (opt.seed) cfg.seed = *opt.seed;
  if (command == "run" && !opt.out.empty()) cfg.out_dir = opt.out;
  return cfg;
}

fs::path pick(const std::string& given, const fs::path& fallback) {
  return given.empty() ? fallback : fs::path(given);
}

int dispatch(const std::string& command, const Options& opt) {
  const ExperimentConfig cfg = resolve(opt, command);
  const RunPaths paths{cfg.out_dir};
  if (command == "run") {
    run_experiment(cfg);
    std::cout << read_text_file(paths.report_text()) << "artifacts in " << paths.root.string() << "\n";
  } else if (command == "synth") {
    const fs::path out = pick(opt.out, paths.dataset());
    const Dataset d = stage_synth(cfg, out);
    std::cout << d.sessions.size() << " sessions -> " << out.string() << "\n";
  } else if (command == "defend") {
    const fs::path out = pick(opt.out, paths.defended());
    const Dataset d = stage_defend(cfg, pick(opt.in, paths.dataset()), out);
    std::cout << d.sessions.size() << " sessions -> " << out.string() << "\n";
  } else if (command == "aggregate") {
    const fs::path out = pick(opt.out, paths.features());
    const FeatureSet f = stage_aggregate(cfg, pick(opt.in, paths.defended()), out);
    std::cout << f.rows << " x " << f.config.feature_len << " -> " << out.string() << "\n";
  } else if (command == "train") {
    const fs::path out = pick(opt.out, paths.model());
    fs::path history = out;
    history.replace_extension(".history.csv");
    if (opt.out.empty()) history = paths.history();
    const TrainResult r = stage_train(cfg, pick(opt.in, paths.features()), out, history);
    const EpochStats& best = r.history.at(static_cast<std::size_t>(r.best_epoch - 1));
    std::printf("best epoch %d  val MAP@%d %.4f -> %s\n", r.best_epoch, cfg.training.train.val_map_k,
                best.val_map, out.string().c_str());
  } else if (command == "eval") {
    const fs::path out = pick(opt.out, paths.report_json());
    stage_eval(cfg, pick(opt.in, paths.features()), pick(opt.model, paths.model()), out);
    std::cout << stage_report(out);
  } else if (command == "report") {
    std::cout << stage_report(pick(opt.in, paths.report_json()));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-tab website fingerprinting toolkit"};
  app.set_version_flag("--version", toolkit_version());
  app.require_subcommand(1);
  app.fallthrough();

  Options opt;
  app.add_option("--config", opt.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", opt.seed, "Override the master seed");
  app.add_option("--out", opt.out, "Output directory (run) or stage output path");
  app.add_option("--threads", opt.threads, "Worker threads")->check(CLI::PositiveNumber);

  std::string command;
  const auto add = [&](const char* name, const char* help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->callback([&command, name] { command = name; });
    return sub;
  };
  add("synth", "Generate site models and multi-tab sessions");
  add("defend", "Apply the configured defense to a dataset")
      ->add_option("--in", opt.in, "Input dataset directory");
  add("aggregate", "Turn sessions into aggregated feature rows")
      ->add_option("--in", opt.in, "Input dataset directory");
  add("train", "Train the classifier on the train/validation split")
      ->add_option("--in", opt.in, "Feature file (.bin)");
  CLI::App* eval = add("eval", "Evaluate a checkpoint on the test split");
  eval->add_option("--in", opt.in, "Feature file (.bin)");
  eval->add_option("--model", opt.model, "Checkpoint manifest (.json)");
  add("run", "Full pipeline with run.json and report");
  add("report", "Print a report JSON as a table")->add_option("--in", opt.in, "Report JSON");

  CLI11_PARSE(app, argc, argv);

  std::string stage = command;
  try {
    set_num_threads(opt.threads);
    return dispatch(command, opt);
  } catch (const StageError& ex) {
    std::cerr << "error [" << ex.stage() << "] " << ex.what() << "\n";
    return exit_code_for(ex.stage(), ex.code());
  } catch (const Error& ex) {
    std::cerr << "error [" << stage << "] " << ex.what() << "\n";
    return exit_code_for(stage, ex.code());
  }
}
