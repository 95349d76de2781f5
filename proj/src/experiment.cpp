#include "wfkit/experiment.hpp"

#include <cmath>
#include <set>

#include "wfkit/parallel.hpp"
#include "wfkit/trace.hpp"

namespace wfkit {

using nlohmann::json;
using nlohmann::ordered_json;

std::string toolkit_version() { return WFKIT_VERSION; }

namespace {

template <class F>
auto staged(const char* stage, F&& body) {
  try {
    return body();
  } catch (const Error& ex) {
    throw StageError(stage, ex);
  } catch (const json::exception& ex) {
    throw StageError(stage, Error(ErrorCode::kIoError, ex.what()));
  } catch (const std::filesystem::filesystem_error& ex) {
    throw StageError(stage, Error(ErrorCode::kIoError, ex.what()));
  }
}

ModelConfig resolved_model(const ExperimentConfig& cfg) {
  ModelConfig m = cfg.model;
  m.n_sites = cfg.n_sites;
  m.feature_len = cfg.aggregation.feature_len;
  return m;
}

void config_error(const std::string& what) { throw Error(ErrorCode::kConfigError, what); }

const char* world_name(World w) { return w == World::kOpen ? "open" : "closed"; }

World world_from(const std::string& name) {
  if (name == "closed") return World::kClosed;
  if (name == "open") return World::kOpen;
  config_error("world must be \"closed\" or \"open\", got \"" + name + "\"");
  return World::kClosed;
}

ordered_json mix_to_json(const MixConfig& mix) {
  ordered_json doc;
  doc["tab_counts"] = mix.tab_counts;
  doc["gap_min"] = mix.gap_min;
  doc["gap_max"] = mix.gap_max;
  doc["session_cap"] = mix.session_cap;
  doc["dynamic"] = mix.dynamic;
  ordered_json props = ordered_json::object();
  for (const auto& [k, p] : mix.dynamic_proportions) props[std::to_string(k)] = p;
  doc["dynamic_proportions"] = std::move(props);
  return doc;
}

MixConfig mix_from_json(const json& doc, MixConfig mix) {
  mix.tab_counts = doc.value("tab_counts", mix.tab_counts);
  mix.gap_min = doc.value("gap_min", mix.gap_min);
  mix.gap_max = doc.value("gap_max", mix.gap_max);
  mix.session_cap = doc.value("session_cap", mix.session_cap);
  mix.dynamic = doc.value("dynamic", mix.dynamic);
  if (doc.contains("dynamic_proportions")) {
    mix.dynamic_proportions.clear();
    for (const auto& [k, p] : doc.at("dynamic_proportions").items()) {
      mix.dynamic_proportions[std::stoi(k)] = p.get<double>();
    }
  }
  return mix;
}

TrainingSet slice(const FeatureSet& set, std::size_t begin, std::size_t end) {
  TrainingSet out;
  for (std::size_t i = begin; i < end; ++i) {
    out.rows.push_back(set.row(i));
    out.labels.push_back(set.labels[i]);
  }
  return out;
}

void check_features(const ExperimentConfig& cfg, const FeatureSet& set) {
  if (set.n_sites != cfg.n_sites || set.config.feature_len != cfg.aggregation.feature_len) {
    throw Error(ErrorCode::kShapeMismatch, "feature set was built for a different configuration");
  }
}

}  // namespace

void validate_experiment_config(const ExperimentConfig& cfg) {
  if (cfg.n_sites < 1) config_error("n_sites must be at least 1");
  if (cfg.sessions < 1) config_error("sessions must be at least 1");
  if (cfg.mix.world == World::kOpen && cfg.n_unmonitored < 1) {
    config_error("open world needs n_unmonitored >= 1");
  }
  const SplitFractions& s = cfg.training.split;
  if (s.train <= 0.0 || s.val < 0.0 || s.test <= 0.0) {
    config_error("split fractions: train and test must be positive, val non-negative");
  }
  if (std::abs(s.train + s.val + s.test - 1.0) > 1e-9) {
    config_error("split fractions sum to " + std::to_string(s.train + s.val + s.test) + ", not 1");
  }
  const TrainConfig& t = cfg.training.train;
  if (t.epochs < 1 || t.batch_size < 1 || !(t.lr > 0.0) || t.patience < 0 || t.val_map_k < 1) {
    config_error("training: epochs, batch, lr, val_map_k must be positive and patience >= 0");
  }
  if (cfg.eval.ks.empty()) config_error("eval.ks is empty");
  for (int k : cfg.eval.ks) {
    if (k < 1 || k > cfg.n_sites + 1) config_error("eval k=" + std::to_string(k) + " out of range");
  }
  if (!(cfg.eval.threshold > 0.0 && cfg.eval.threshold < 1.0)) {
    config_error("eval threshold must lie in (0, 1)");
  }
  validate_mix_config(cfg.mix);
  validate_aggregation_config(cfg.aggregation);
  validate_model_config(resolved_model(cfg));
  const auto n = split_ranges(cfg.sessions, s);
  if (n.train_end == 0 || n.val_end == n.n) config_error("split leaves the train or test set empty");
}

ExperimentConfig experiment_config_from_json(const json& doc) {
  static const std::set<std::string> kKeys{"seed",      "n_sites",     "n_unmonitored", "sessions",
                                           "world",     "mix",         "defense",       "aggregation",
                                           "model",     "profiler",    "attention",     "training",
                                           "eval",      "paths",       "version"};
  if (!doc.is_object()) config_error("experiment config must be a JSON object");
  for (const auto& [key, _] : doc.items()) {
    if (!kKeys.contains(key)) config_error("unknown config key \"" + key + "\"");
  }
  ExperimentConfig cfg;
  try {
    cfg.seed = doc.value("seed", cfg.seed);
    cfg.n_sites = doc.value("n_sites", cfg.n_sites);
    cfg.n_unmonitored = doc.value("n_unmonitored", cfg.n_unmonitored);
    cfg.sessions = doc.value("sessions", cfg.sessions);
    if (doc.contains("mix")) cfg.mix = mix_from_json(doc.at("mix"), cfg.mix);
    if (doc.contains("world")) cfg.mix.world = world_from(doc.at("world").get<std::string>());
    if (doc.contains("defense") && !doc.at("defense").is_null()) {
      cfg.defense = defense_from_json(doc.at("defense"));
    }
    if (doc.contains("aggregation")) {
      const auto& a = doc.at("aggregation");
      cfg.aggregation.interval = a.value("interval", cfg.aggregation.interval);
      cfg.aggregation.feature_len = a.value("feature_len", cfg.aggregation.feature_len);
    }
    json model = doc.value("model", json::object());
    if (doc.contains("profiler")) model["profiler"] = doc.at("profiler");
    if (doc.contains("attention")) model["attention"] = doc.at("attention");
    cfg.model = model_config_from_json(model);
    if (doc.contains("training")) {
      const auto& t = doc.at("training");
      auto& tc = cfg.training.train;
      tc.epochs = t.value("epochs", tc.epochs);
      tc.batch_size = t.value("batch", tc.batch_size);
      tc.lr = t.value("lr", tc.lr);
      tc.weight_decay = t.value("weight_decay", tc.weight_decay);
      tc.patience = t.value("patience", tc.patience);
      tc.val_map_k = t.value("val_map_k", tc.val_map_k);
      if (t.contains("split")) {
        const auto& s = t.at("split");
        auto& sc = cfg.training.split;
        sc.train = s.value("train", sc.train);
        sc.val = s.value("val", sc.val);
        sc.test = s.value("test", sc.test);
      }
    }
    if (doc.contains("eval")) {
      const auto& e = doc.at("eval");
      cfg.eval.ks = e.value("ks", cfg.eval.ks);
      cfg.eval.threshold = e.value("threshold", cfg.eval.threshold);
    }
    if (doc.contains("paths")) {
      cfg.out_dir = doc.at("paths").value("out", cfg.out_dir.string());
    }
  } catch (const json::exception& ex) {
    config_error(ex.what());
  }
  cfg.model = resolved_model(cfg);
  return cfg;
}

ordered_json experiment_config_to_json(const ExperimentConfig& cfg) {
  ordered_json doc;
  doc["seed"] = cfg.seed;
  doc["n_sites"] = cfg.n_sites;
  doc["n_unmonitored"] = cfg.n_unmonitored;
  doc["sessions"] = cfg.sessions;
  doc["world"] = world_name(cfg.mix.world);
  doc["mix"] = mix_to_json(cfg.mix);
  doc["defense"] = cfg.defense ? defense_to_json(*cfg.defense) : ordered_json(nullptr);
  doc["aggregation"] = {{"interval", cfg.aggregation.interval},
                        {"feature_len", cfg.aggregation.feature_len}};
  ordered_json model = model_config_to_json(resolved_model(cfg));
  doc["profiler"] = model["profiler"];
  doc["attention"] = model["attention"];
  model.erase("profiler");
  model.erase("attention");
  model.erase("n_sites");
  model.erase("feature_len");
  doc["model"] = std::move(model);
  const TrainConfig& t = cfg.training.train;
  doc["training"] = {{"epochs", t.epochs},
                     {"batch", t.batch_size},
                     {"lr", t.lr},
                     {"weight_decay", t.weight_decay},
                     {"patience", t.patience},
                     {"val_map_k", t.val_map_k},
                     {"split",
                      {{"train", cfg.training.split.train},
                       {"val", cfg.training.split.val},
                       {"test", cfg.training.split.test}}}};
  doc["eval"] = {{"ks", cfg.eval.ks}, {"threshold", cfg.eval.threshold}};
  doc["paths"] = {{"out", cfg.out_dir.string()}};
  return doc;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& ex) {
    config_error(path.string() + ": " + ex.what());
  }
  return experiment_config_from_json(doc);
}

int exit_code_for(const std::string& stage, ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfigError:
    case ErrorCode::kBadConfig:
    case ErrorCode::kBadFraction:
    case ErrorCode::kBadHistogram:
    case ErrorCode::kBadRate:
    case ErrorCode::kBadK:
    case ErrorCode::kBadThreshold:
      return 2;
    default:
      return stage == "train" ? 4 : 3;
  }
}

SplitRanges split_ranges(std::size_t n, const SplitFractions& split) {
  const auto train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * split.train + 1e-9));
  const auto val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * split.val + 1e-9));
  SplitRanges r;
  r.n = n;
  r.train_end = std::min(train, n);
  r.val_end = std::min(r.train_end + val, n);
  return r;
}

Dataset stage_synth(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  return staged("synth", [&] {
    validate_mix_config(cfg.mix);
    const std::uint64_t site_seed = derive_seed(cfg.seed, "site-models", 0);
    std::vector<SiteModel> monitored;
    for (int i = 0; i < cfg.n_sites; ++i) monitored.push_back(generate_site_model(i, site_seed));
    std::vector<SiteModel> unmonitored;
    if (cfg.mix.world == World::kOpen) {
      const std::uint64_t other_seed = derive_seed(cfg.seed, "unmonitored-models", 0);
      for (int j = 0; j < cfg.n_unmonitored; ++j) {
        unmonitored.push_back(generate_unmonitored_model(j, other_seed));
      }
    }
    Rng rng(derive_seed(cfg.seed, "synth", 0));
    Dataset dataset = build_dataset(monitored, unmonitored, cfg.mix, cfg.sessions, rng);
    save_dataset(out, dataset);
    return dataset;
  });
}

Dataset stage_defend(const ExperimentConfig& cfg, const std::filesystem::path& in,
                     const std::filesystem::path& out) {
  return staged("defend", [&] {
    Dataset dataset = load_dataset(in);
    if (cfg.defense) {
      const DefenseConfig& defense = *cfg.defense;
      const std::string name = defense_name(defense);
      parallel_for(dataset.sessions.size(), [&](std::size_t i) {
        Rng rng(derive_seed(cfg.seed, "defend", i));
        Session& s = dataset.sessions[i];
        s.trace = apply_defense(s.trace, defense, rng);
        s.defense = name;
      });
    }
    save_dataset(out, dataset);
    return dataset;
  });
}

FeatureSet stage_aggregate(const ExperimentConfig& cfg, const std::filesystem::path& in,
                           const std::filesystem::path& out_bin) {
  return staged("aggregate", [&] {
    validate_aggregation_config(cfg.aggregation);
    const Dataset dataset = load_dataset(in);
    FeatureSet set;
    set.config = cfg.aggregation;
    set.rows = dataset.sessions.size();
    set.n_sites = dataset.n_sites;
    const auto d = static_cast<std::size_t>(cfg.aggregation.feature_len);
    set.data.assign(set.rows * d, 0.0f);
    parallel_for(set.rows, [&](std::size_t i) {
      const FeatureVector fv = aggregate_features(dataset.sessions[i].trace, cfg.aggregation);
      for (std::size_t j = 0; j < d; ++j) set.data[i * d + j] = static_cast<float>(fv.values[j]);
    });
    for (std::size_t i = 0; i < set.rows; ++i) {
      set.ids.push_back(session_id(i));
      set.labels.push_back(dataset.sessions[i].labels.bits);
    }
    save_feature_set(out_bin, set);
    return set;
  });
}

TrainResult stage_train(const ExperimentConfig& cfg, const std::filesystem::path& features,
                        const std::filesystem::path& model_out, const std::filesystem::path& history_out) {
  return staged("train", [&] {
    const FeatureSet set = load_feature_set(features);
    check_features(cfg, set);
    const SplitRanges r = split_ranges(set.rows, cfg.training.split);
    Rng rng(derive_seed(cfg.seed, "train", 0));
    TrainResult result = train(slice(set, 0, r.train_end), slice(set, r.train_end, r.val_end),
                               resolved_model(cfg), cfg.training.train, rng);
    result.model.save(model_out);
    write_text_file(history_out, history_to_csv(result.history));
    return result;
  });
}

Report stage_eval(const ExperimentConfig& cfg, const std::filesystem::path& features,
                  const std::filesystem::path& model_path, const std::filesystem::path& report_out) {
  return staged("eval", [&] {
    const FeatureSet set = load_feature_set(features);
    check_features(cfg, set);
    TransWfModel model = TransWfModel::load(model_path);
    const SplitRanges r = split_ranges(set.rows, cfg.training.split);
    const TrainingSet test = slice(set, r.val_end, r.n);
    const auto preds = model.predict(test.rows);
    std::vector<EvalRecord> records(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
      records[i].y.bits = test.labels[i];
      records[i].y_hat = preds[i];
    }
    const Report report = evaluate(records, cfg.eval.ks, cfg.eval.threshold);
    write_text_file(report_out, report_to_json(report).dump(2) + "\n");
    return report;
  });
}

std::string stage_report(const std::filesystem::path& report_json) {
  return staged("report", [&] { return format_report(report_from_json(json::parse(read_text_file(report_json)))); });
}

Report run_experiment(const ExperimentConfig& cfg) {
  const RunPaths paths{cfg.out_dir};
  staged("config", [&] {
    validate_experiment_config(cfg);
    ordered_json run;
    run["version"] = toolkit_version();
    run["config"] = experiment_config_to_json(cfg);
    write_text_file(paths.run_json(), run.dump(2) + "\n");
    return 0;
  });
  stage_synth(cfg, paths.dataset());
  stage_defend(cfg, paths.dataset(), paths.defended());
  stage_aggregate(cfg, paths.defended(), paths.features());
  stage_train(cfg, paths.features(), paths.model(), paths.history());
  const Report report = stage_eval(cfg, paths.features(), paths.model(), paths.report_json());
  const std::string text = stage_report(paths.report_json());
  staged("report", [&] {
    write_text_file(paths.report_text(), text);
    return 0;
  });
  return report;
}

}  // namespace wfkit
