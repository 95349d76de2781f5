// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset, e.g. `wfkit_acceptance 1 2 9`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "grad_cases.hpp"
#include "oracles.hpp"
#include "wfkit/defenses.hpp"
#include "wfkit/experiment.hpp"
#include "wfkit/parallel.hpp"
#include "wfkit/synth.hpp"

using namespace wfkit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

fs::path config_path(const char* name) { return fs::path(WFKIT_SOURCE_DIR) / "configs" / name; }

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("wfkit_acceptance_" + name);
  fs::remove_all(dir);
  return dir;
}

std::vector<PacketEvent> real_events(const Trace& t) {
  std::vector<PacketEvent> out;
  for (const PacketEvent& e : t.events) {
    if (!e.dummy) out.push_back(e);
  }
  return out;
}

Outcome gradients() {
  const auto start = Clock::now();
  Outcome out;
  double worst = 0.0;
  std::size_t n = 0;
  Rng rng(2024);
  for (const auto& cases : {oracle::op_grad_cases(), oracle::model_grad_cases()}) {
    for (const oracle::GradCase& c : cases) {
      const double err = oracle::gradcheck(c.f, c.make(rng));
      worst = std::max(worst, err);
      ++n;
      if (!(err < 1e-4)) {
        out.pass = false;
        out.detail += std::string(c.name) + " err=" + fmt("%.3g ", err);
      }
    }
  }
  const double elapsed = seconds_since(start);
  if (elapsed >= 30.0) out.pass = false;
  out.detail += std::to_string(n) + " cases, worst rel err " + fmt("%.2e", worst) + ", " + fmt("%.2f s", elapsed);
  return out;
}

Outcome topm_degeneracy() {
  Rng rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto b = static_cast<std::size_t>(rng.uniform_int(1, 32));
    const auto d = static_cast<std::size_t>(rng.uniform_int(1, 16));
    const Tensor q = oracle::random_tensor({b, d}, rng, 2.0, false);
    const Tensor k = oracle::random_tensor({b, d}, rng, 2.0, false);
    const Tensor v = oracle::random_tensor({b, d}, rng, 2.0, false);
    const auto m = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(b), 64));
    const Tensor got = topm_attention(q, k, v, m);
    const auto want = oracle::vanilla_attention(q, k, v);
    for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(got.at(i) - want[i]));
  }
  return {worst < 1e-12, "100 trials, max abs diff " + fmt("%.2e", worst)};
}

Outcome aggregation() {
  Rng rng(12);
  std::size_t mismatches = 0;
  for (int i = 0; i < 1000; ++i) {
    AggregationConfig cfg;  // the defaults: 20 ms, 8000 values
    Trace t;
    if (i % 2 == 0) {
      t = oracle::random_trace(rng, 600, 20.0);
    } else {
      cfg = {rng.uniform(0.005, 0.1), 8 * static_cast<int>(rng.uniform_int(1, 100))};
      t = oracle::random_trace(rng, 300, cfg.interval * cfg.segments() * 1.2);
    }
    mismatches += aggregate_features(t, cfg).values != oracle::brute_aggregate(t, cfg.interval, cfg.feature_len);
  }
  return {mismatches == 0, "1000 traces (500 at 20 ms / 8000), " + std::to_string(mismatches) + " mismatches"};
}

EvalRecord record(std::vector<int> y, std::vector<double> p) {
  EvalRecord r;
  r.y.bits = std::move(y);
  r.y_hat.probs = std::move(p);
  return r;
}

Outcome metrics() {
  Outcome out;
  auto fail = [&](const std::string& what) {
    out.pass = false;
    out.detail += what + "; ";
  };
  if (precision_at_k(record({1, 0, 0}, {0.9, 0.8, 0.1}), 2) != 0.5) fail("P@2 hand case");
  if (map_at_k(record({1, 0, 0}, {0.9, 0.8, 0.1}), 2) != 0.75) fail("MAP@2 hand case");
  const std::vector<EvalRecord> auc_case{record({1}, {0.4}), record({0}, {0.1}), record({0}, {0.7})};
  if (auc_per_label(auc_case, 0) != 0.5) fail("AUC hand case");

  Rng rng(31);
  const std::size_t labels = 8;
  std::vector<EvalRecord> recs;
  for (int i = 0; i < 500; ++i) {
    std::vector<int> y(labels);
    std::vector<double> p(labels);
    for (std::size_t l = 0; l < labels; ++l) {
      y[l] = rng.bernoulli(0.3);
      p[l] = static_cast<double>(rng.uniform_int(0, 20)) / 20.0;
    }
    recs.push_back(record(std::move(y), std::move(p)));
  }
  for (const EvalRecord& r : recs) {
    for (int k = 1; k <= static_cast<int>(labels); ++k) {
      if (precision_at_k(r, k) != oracle::brute_precision_at_k(r.y.bits, r.y_hat.probs, k) ||
          map_at_k(r, k) != oracle::brute_map_at_k(r.y.bits, r.y_hat.probs, k)) {
        fail("P@k/MAP@k mismatch");
        break;
      }
    }
  }
  for (int l = 0; l < static_cast<int>(labels); ++l) {
    std::vector<int> y;
    std::vector<double> p;
    for (const EvalRecord& r : recs) {
      y.push_back(r.y.bits[static_cast<std::size_t>(l)]);
      p.push_back(r.y_hat.probs[static_cast<std::size_t>(l)]);
    }
    const auto [num, den] = oracle::brute_auc_twice(y, p);
    if (auc_per_label(recs, l) != static_cast<double>(num) / static_cast<double>(den)) fail("AUC mismatch");
    for (double threshold : {0.05, 0.3, 0.5, 0.95}) {
      const PrecisionRecall got = precision_recall(recs, l, threshold);
      const auto [precision, recall] = oracle::brute_precision_recall(y, p, threshold);
      if (got.precision != precision || got.recall != recall) fail("precision/recall mismatch");
    }
  }
  out.detail += "hand cases + 500 records x " + std::to_string(labels) + " labels";
  return out;
}

double rayleigh_cdf(double x, double w) { return 1.0 - std::exp(-x * x / (2.0 * w * w)); }

double ks_statistic(std::vector<double> xs, double w) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = rayleigh_cdf(xs[i], w);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

Outcome defenses() {
  Outcome out;
  auto fail = [&](const std::string& what) {
    out.pass = false;
    out.detail += what + "; ";
  };
  Rng rng(5);

  double worst_fraction = 0.0;
  bool random_subseq = true;
  for (int i = 0; i < 500; ++i) {
    Trace t = oracle::random_trace(rng, 400, 5.0);
    if (t.events.empty()) continue;
    const Trace d = apply_random(t, rng.uniform(0.0, 0.2), rng);
    const auto dummies = d.events.size() - real_events(d).size();
    worst_fraction = std::max(worst_fraction, static_cast<double>(dummies) / static_cast<double>(d.events.size()));
    random_subseq = random_subseq && real_events(d) == t.events;
  }
  if (worst_fraction > 0.2) fail("random fraction " + fmt("%.4f", worst_fraction));
  if (!random_subseq) fail("random dropped or moved real events");

  const TamarawDefense tam{0.04, 0.012, 100};
  for (int i = 0; i < 100 && out.pass; ++i) {
    const Trace t = oracle::random_trace(rng, 300, 4.0);
    if (t.events.empty()) continue;
    const Trace d = apply_tamaraw(t, tam);
    for (Direction dir : {Direction::kOutgoing, Direction::kIncoming}) {
      const double rho = dir == Direction::kOutgoing ? tam.rho_out : tam.rho_in;
      std::vector<double> times;
      std::size_t real = 0, original = 0;
      for (const PacketEvent& e : t.events) original += e.direction == dir;
      for (const PacketEvent& e : d.events) {
        if (e.direction != dir) continue;
        times.push_back(e.time);
        real += !e.dummy;
      }
      for (std::size_t j = 0; j < times.size(); ++j) {
        if (times[j] != static_cast<double>(j) * rho) {
          fail("tamaraw off grid");
          break;
        }
      }
      if (times.size() % 100 != 0) fail("tamaraw count not a multiple of L");
      if (real != original) fail("tamaraw lost real packets");
    }
  }

  const double w = 3.0;
  Trace base;
  for (int i = 0; i < 20; ++i) base.events.push_back({10.0 * i, i % 2 ? Direction::kIncoming : Direction::kOutgoing, false});
  std::vector<double> pooled;
  int rejected = 0;
  for (int run = 0; run < 50; ++run) {
    const Trace d = apply_front(base, FrontDefense{500, 500, w, w}, rng);
    std::vector<double> times;
    for (const PacketEvent& e : d.events) {
      if (e.dummy) times.push_back(e.time);
    }
    rejected += ks_statistic(times, w) > 1.628 / std::sqrt(static_cast<double>(times.size()));
    pooled.insert(pooled.end(), times.begin(), times.end());
    if (real_events(d) != base.events) fail("front moved real events");
  }
  const double pooled_d = ks_statistic(pooled, w);
  // At alpha = 0.01 about half a rejection is expected in 50 runs.
  if (rejected > 3) fail("front KS rejected " + std::to_string(rejected) + "/50");
  if (pooled_d >= 1.628 / std::sqrt(static_cast<double>(pooled.size()))) fail("front pooled KS");

  WtfPadDefense never;
  never.gap_histogram = {{0.01}, {0.0}, 1.0};
  never.burst_histogram = {{0.01}, {0.0}, 1.0};
  bool identity = true, pad_subseq = true;
  for (int i = 0; i < 100; ++i) {
    const Trace t = oracle::random_trace(rng, 200, 3.0);
    if (t.events.empty()) continue;
    identity = identity && apply_wtfpad(t, never, rng).events == t.events;
    pad_subseq = pad_subseq && real_events(apply_wtfpad(t, WtfPadDefense{}, rng)) == t.events;
  }
  if (!identity) fail("wtf-pad with infinity mass 1 changed a trace");
  if (!pad_subseq) fail("wtf-pad moved real events");

  out.detail += "random max fraction " + fmt("%.4f", worst_fraction) + ", front KS rejections " +
                std::to_string(rejected) + "/50 (pooled D " + fmt("%.4f", pooled_d) + ")";
  return out;
}

Outcome synthesizer() {
  std::vector<SiteModel> models;
  for (int i = 0; i < 20; ++i) models.push_back(generate_site_model(i, derive_seed(1, "site-models", 0)));
  MixConfig cfg;
  cfg.dynamic = true;
  Rng rng(derive_seed(1, "synth", 0));
  const std::size_t n = 10000;
  const Dataset data = build_dataset(models, {}, cfg, n, rng);
  std::map<int, std::size_t> counts;
  double min_gap = INFINITY, max_gap = -INFINITY, max_time = 0.0;
  for (const Session& s : data.sessions) {
    ++counts[s.tab_count];
    for (std::size_t i = 1; i < s.tab_offsets.size(); ++i) {
      min_gap = std::min(min_gap, s.tab_offsets[i] - s.tab_offsets[i - 1]);
      max_gap = std::max(max_gap, s.tab_offsets[i] - s.tab_offsets[i - 1]);
    }
    for (const PacketEvent& e : s.trace.events) max_time = std::max(max_time, e.time);
  }
  Outcome out;
  std::ostringstream detail;
  const std::map<int, double> want{{2, 0.4}, {3, 0.3}, {4, 0.2}, {5, 0.1}};
  for (const auto& [tabs, share] : want) {
    const double got = static_cast<double>(counts[tabs]) / static_cast<double>(n);
    detail << tabs << "-tab " << fmt("%.4f", got) << " ";
    if (std::abs(got - share) > 0.02) out.pass = false;
  }
  if (counts.size() != want.size()) out.pass = false;
  if (min_gap < 3.0 || max_gap > 10.0 || max_time > 240.0) out.pass = false;
  detail << "gaps [" << fmt("%.3f", min_gap) << ", " << fmt("%.3f", max_gap) << "] max time " << fmt("%.2f", max_time);
  out.detail = detail.str();
  return out;
}

struct E2eResult {
  Report report;
  int epochs = 0;
  double seconds = 0.0;
};

E2eResult run_e2e(const std::optional<DefenseConfig>& defense, const std::string& tag) {
  ExperimentConfig cfg = load_experiment_config(config_path("e2e.json"));
  cfg.defense = defense;
  cfg.out_dir = scratch(tag);
  const auto start = Clock::now();
  E2eResult r;
  r.report = run_experiment(cfg);
  r.seconds = seconds_since(start);
  r.epochs = cfg.training.train.epochs;
  fs::remove_all(cfg.out_dir);
  return r;
}

double map2(const Report& r) {
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    if (r.ks[i] == 2) return r.map_at_k[i];
  }
  return NAN;
}

std::optional<E2eResult> clean_run;

Outcome learnability() {
  clean_run = run_e2e(std::nullopt, "clean");
  const E2eResult& r = *clean_run;
  const double m = map2(r.report);
  const double auc = r.report.auc.value_or(0.0);
  const bool pass = m >= 0.80 && auc >= 0.95 && r.epochs <= 30 && r.seconds <= 900.0;
  return {pass, "MAP@2 " + fmt("%.4f", m) + ", AUC " + fmt("%.4f", auc) + ", " + std::to_string(r.epochs) +
                    " epochs max, " + fmt("%.0f s", r.seconds) + " on " + std::to_string(num_threads()) + " thread(s)"};
}

Outcome robustness() {
  if (!clean_run) clean_run = run_e2e(std::nullopt, "clean");
  const E2eResult defended = run_e2e(RandomDefense{0.2}, "random");
  const double clean = map2(clean_run->report), under = map2(defended.report);
  const double drop = 100.0 * (clean - under);
  return {drop < 15.0, "MAP@2 clean " + fmt("%.4f", clean) + ", random(0.2) " + fmt("%.4f", under) + ", drop " +
                           fmt("%.2f points", drop)};
}

Outcome determinism() {
  ExperimentConfig cfg = load_experiment_config(config_path("quickstart.json"));
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  cfg.out_dir = a;
  const auto start = Clock::now();
  run_experiment(cfg);
  cfg.out_dir = b;
  run_experiment(cfg);
  const std::string ra = read_text_file(RunPaths{a}.report_json());
  const std::string rb = read_text_file(RunPaths{b}.report_json());
  fs::remove_all(a);
  fs::remove_all(b);
  return {ra == rb && !ra.empty(),
          std::string(ra == rb ? "identical" : "different") + " report.json (" + std::to_string(ra.size()) +
              " bytes), two runs in " + fmt("%.0f s", seconds_since(start))};
}

}  // namespace

int main(int argc, char** argv) {
  set_num_threads(std::max(1u, std::thread::hardware_concurrency()));
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria{
      {"gradient oracle", gradients},        {"top-m degeneracy", topm_degeneracy},
      {"aggregation oracle", aggregation},   {"metrics oracle", metrics},
      {"defense envelopes", defenses},       {"synthesizer protocol", synthesizer},
      {"end-to-end learnability", learnability}, {"defense robustness", robustness},
      {"determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.contains(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
