#include "wfkit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "json.hpp"
#include "wfkit/error.hpp"

namespace wfkit {

namespace {

double log_uniform(Rng& rng, double lo, double hi) {
  return std::exp(rng.uniform(std::log(lo), std::log(hi)));
}

SiteModel make_model(int site_id, bool monitored, Rng& rng) {
  SiteModel model;
  model.site_id = site_id;
  model.monitored = monitored;
  model.base_rate = log_uniform(rng, 200.0, 2000.0);
  const auto n_bursts = static_cast<int>(rng.uniform_int(8, 24));
  Direction dir = Direction::kOutgoing;
  for (int i = 0; i < n_bursts; ++i) {
    BurstSpec burst;
    burst.direction = dir;
    burst.mean_packets = dir == Direction::kOutgoing ? log_uniform(rng, 1.0, 8.0)
                                                     : log_uniform(rng, 2.0, 60.0);
    burst.mean_gap = log_uniform(rng, 0.02, 0.6);
    burst.gap_jitter = rng.uniform(0.05, 0.3);
    model.bursts.push_back(burst);
    // Mostly request/response alternation with occasional repeats.
    if (rng.bernoulli(0.8)) {
      dir = dir == Direction::kOutgoing ? Direction::kIncoming : Direction::kOutgoing;
    }
  }
  return model;
}

int sample_tab_count(const MixConfig& cfg, Rng& rng) {
  if (cfg.dynamic) {
    const double u = rng.uniform();
    double acc = 0.0;
    int last = cfg.dynamic_proportions.rbegin()->first;
    for (const auto& [k, frac] : cfg.dynamic_proportions) {
      acc += frac;
      if (u < acc) return k;
    }
    return last;
  }
  const auto pick = rng.uniform_int(0, static_cast<std::int64_t>(cfg.tab_counts.size()) - 1);
  return cfg.tab_counts[static_cast<std::size_t>(pick)];
}

// k distinct indices out of n, partial Fisher-Yates.
std::vector<std::size_t> sample_distinct(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(n) - 1));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace

void validate_mix_config(const MixConfig& cfg) {
  if (!(cfg.gap_min >= 0.0) || !(cfg.gap_min <= cfg.gap_max)) {
    throw Error(ErrorCode::kConfigError, "gap range must satisfy 0 <= low <= high");
  }
  if (!(cfg.session_cap > 0.0)) throw Error(ErrorCode::kConfigError, "session_cap must be > 0");
  if (cfg.dynamic) {
    if (cfg.dynamic_proportions.empty()) {
      throw Error(ErrorCode::kConfigError, "dynamic_proportions is empty");
    }
    double sum = 0.0;
    for (const auto& [k, frac] : cfg.dynamic_proportions) {
      if (k < 1) throw Error(ErrorCode::kConfigError, "tab count must be >= 1");
      if (frac < 0.0) throw Error(ErrorCode::kConfigError, "negative proportion");
      sum += frac;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw Error(ErrorCode::kConfigError, "dynamic_proportions must sum to 1");
    }
  } else {
    if (cfg.tab_counts.empty()) throw Error(ErrorCode::kConfigError, "tab_counts is empty");
    for (int k : cfg.tab_counts) {
      if (k < 1) throw Error(ErrorCode::kConfigError, "tab count must be >= 1");
    }
  }
}

SiteModel generate_site_model(int site_id, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "site-model", static_cast<std::uint64_t>(site_id)));
  return make_model(site_id, true, rng);
}

SiteModel generate_unmonitored_model(int index, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "unmonitored-model", static_cast<std::uint64_t>(index)));
  return make_model(index, false, rng);
}

void validate_site_model(const SiteModel& model) {
  if (model.bursts.size() < 2) throw Error(ErrorCode::kBadConfig, "site model needs >= 2 bursts");
  if (!(model.base_rate > 0.0)) throw Error(ErrorCode::kBadConfig, "base_rate must be > 0");
  for (const BurstSpec& b : model.bursts) {
    if (!(b.mean_packets >= 1.0) || !(b.mean_gap > 0.0) || !(b.gap_jitter > 0.0) ||
        !(b.gap_jitter < 1.0)) {
      throw Error(ErrorCode::kBadConfig, "burst parameters out of range");
    }
  }
}

Trace sample_trace(const SiteModel& model, Rng& rng) {
  Trace trace;
  trace.label = model.monitored ? SiteLabel::monitored(model.site_id) : SiteLabel::unmonitored();
  double t = 0.0;
  bool first = true;
  for (const BurstSpec& burst : model.bursts) {
    if (!first) {
      t += burst.mean_gap * rng.uniform(1.0 - burst.gap_jitter, 1.0 + burst.gap_jitter);
    }
    const std::int64_t n = 1 + rng.poisson(burst.mean_packets - 1.0);
    for (std::int64_t i = 0; i < n; ++i) {
      if (!first) t += rng.exponential(1.0 / model.base_rate);
      first = false;
      trace.events.push_back(PacketEvent{t, burst.direction, false});
    }
  }
  return trace;
}

Session merge_tabs(const std::vector<Trace>& traces, const std::vector<double>& offsets,
                   int n_sites, double session_cap) {
  if (traces.empty()) throw Error(ErrorCode::kEmptyInput, "no tabs to merge");
  if (offsets.size() != traces.size()) {
    throw Error(ErrorCode::kEmptyInput, "one offset per tab required");
  }
  Session session;
  session.labels = LabelVector(n_sites);
  session.tab_count = static_cast<int>(traces.size());
  session.tab_offsets = offsets;
  std::size_t total = 0;
  for (const Trace& t : traces) total += t.events.size();
  session.trace.events.reserve(total);
  for (std::size_t i = 0; i < traces.size(); ++i) {
    session.labels.set(traces[i].label);
    for (PacketEvent e : traces[i].events) {
      e.time += offsets[i];
      if (e.time <= session_cap) session.trace.events.push_back(e);
    }
  }
  std::stable_sort(session.trace.events.begin(), session.trace.events.end(),
                   [](const PacketEvent& a, const PacketEvent& b) { return a.time < b.time; });
  return session;
}

Session synthesize_session(const std::vector<Trace>& traces, int n_sites, Rng& rng,
                           const MixConfig& cfg) {
  if (traces.empty()) throw Error(ErrorCode::kEmptyInput, "no traces");
  std::vector<double> offsets(traces.size(), 0.0);
  for (std::size_t i = 1; i < traces.size(); ++i) {
    offsets[i] = offsets[i - 1] + rng.uniform(cfg.gap_min, cfg.gap_max);
  }
  return merge_tabs(traces, offsets, n_sites, cfg.session_cap);
}

Dataset build_dataset(const std::vector<SiteModel>& monitored,
                      const std::vector<SiteModel>& unmonitored, const MixConfig& cfg,
                      std::size_t count, Rng& rng) {
  validate_mix_config(cfg);
  if (count == 0) throw Error(ErrorCode::kEmptyInput, "session count must be > 0");
  if (monitored.empty()) throw Error(ErrorCode::kEmptyInput, "no monitored site models");
  const bool open = cfg.world == World::kOpen;
  if (open && unmonitored.empty()) {
    throw Error(ErrorCode::kEmptyInput, "open world needs unmonitored site models");
  }
  if (!cfg.dynamic) {
    for (int k : cfg.tab_counts) {
      const auto needed = static_cast<std::size_t>(open ? k - 1 : k);
      if (needed > monitored.size()) {
        throw Error(ErrorCode::kInsufficientSites,
                    std::to_string(needed) + " distinct monitored sites needed, " +
                        std::to_string(monitored.size()) + " available");
      }
    }
  }

  const std::uint64_t master = rng.next_u64();
  Dataset dataset;
  dataset.n_sites = static_cast<int>(monitored.size());
  dataset.world = cfg.world;
  dataset.sessions.resize(count);
  for (std::size_t s = 0; s < count; ++s) {
    Rng child(derive_seed(master, "session", s));
    const int k = sample_tab_count(cfg, child);
    const std::size_t n_monitored = static_cast<std::size_t>(open ? k - 1 : k);
    std::vector<const SiteModel*> tabs;
    if (cfg.dynamic) {
      for (std::size_t i = 0; i < n_monitored; ++i) {
        const auto j = child.uniform_int(0, static_cast<std::int64_t>(monitored.size()) - 1);
        tabs.push_back(&monitored[static_cast<std::size_t>(j)]);
      }
    } else {
      for (std::size_t j : sample_distinct(monitored.size(), n_monitored, child)) {
        tabs.push_back(&monitored[j]);
      }
    }
    if (open) {
      const auto j = child.uniform_int(0, static_cast<std::int64_t>(unmonitored.size()) - 1);
      const auto slot = child.uniform_int(0, static_cast<std::int64_t>(tabs.size()));
      tabs.insert(tabs.begin() + slot, &unmonitored[static_cast<std::size_t>(j)]);
    }
    std::vector<Trace> traces;
    traces.reserve(tabs.size());
    for (const SiteModel* m : tabs) traces.push_back(sample_trace(*m, child));
    dataset.sessions[s] = synthesize_session(traces, dataset.n_sites, child, cfg);
  }
  return dataset;
}

std::string session_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "s%06zu", index);
  return buf;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  using nlohmann::ordered_json;
  std::filesystem::create_directories(dir / "traces");
  DatasetManifest manifest;
  manifest.n_sites = dataset.n_sites;
  ordered_json sessions = ordered_json::array();
  for (std::size_t i = 0; i < dataset.sessions.size(); ++i) {
    const Session& s = dataset.sessions[i];
    const std::string id = session_id(i);
    const std::string rel = "traces/" + id + ".txt";
    save_trace(dir / rel, s.trace);
    // The manifest's single label is the lowest set slot; sessions.json
    // carries the full multi-hot vector.
    SiteLabel first = SiteLabel::unmonitored();
    for (int site = 0; site < s.labels.n_sites(); ++site) {
      if (s.labels.bits[static_cast<std::size_t>(site)] != 0) {
        first = SiteLabel::monitored(site);
        break;
      }
    }
    manifest.entries.push_back(ManifestEntry{rel, first});
    ordered_json entry;
    entry["id"] = id;
    entry["path"] = rel;
    entry["labels"] = s.labels.bits;
    entry["tab_count"] = s.tab_count;
    entry["tab_offsets"] = s.tab_offsets;
    entry["defense"] = s.defense ? ordered_json(*s.defense) : ordered_json(nullptr);
    sessions.push_back(std::move(entry));
  }
  write_text_file(dir / "manifest.json", write_manifest(manifest));
  ordered_json doc;
  doc["n_sites"] = dataset.n_sites;
  doc["world"] = dataset.world == World::kOpen ? "open" : "closed";
  doc["sessions"] = std::move(sessions);
  write_text_file(dir / "sessions.json", doc.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  using nlohmann::json;
  Dataset dataset;
  try {
    const json doc = json::parse(read_text_file(dir / "sessions.json"));
    dataset.n_sites = doc.at("n_sites").get<int>();
    dataset.world = doc.at("world").get<std::string>() == "open" ? World::kOpen : World::kClosed;
    for (const json& entry : doc.at("sessions")) {
      Session s;
      s.trace = load_trace(dir / entry.at("path").get<std::string>());
      s.labels.bits = entry.at("labels").get<std::vector<int>>();
      if (static_cast<int>(s.labels.size()) != dataset.n_sites + 1) {
        throw Error(ErrorCode::kConfigError, "label vector length must be n_sites + 1");
      }
      s.tab_count = entry.at("tab_count").get<int>();
      s.tab_offsets = entry.at("tab_offsets").get<std::vector<double>>();
      if (!entry.at("defense").is_null()) s.defense = entry.at("defense").get<std::string>();
      dataset.sessions.push_back(std::move(s));
    }
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kConfigError, std::string("sessions.json: ") + ex.what());
  }
  return dataset;
}

}  // namespace wfkit
