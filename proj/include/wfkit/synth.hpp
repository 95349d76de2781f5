#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "wfkit/rng.hpp"
#include "wfkit/trace.hpp"

namespace wfkit {

// One burst of a synthetic page load. The packet count is 1 + Poisson(mean - 1)
// so its mean is exactly `mean_packets`; the gap before the burst is uniform on
// mean_gap * [1 - gap_jitter, 1 + gap_jitter].
struct BurstSpec {
  Direction direction = Direction::kOutgoing;
  double mean_packets = 1.0;
  double mean_gap = 0.1;
  double gap_jitter = 0.2;

  friend bool operator==(const BurstSpec&, const BurstSpec&) = default;
};

// Burst-structured renewal process standing in for a real website.
struct SiteModel {
  int site_id = 0;
  bool monitored = true;
  std::vector<BurstSpec> bursts;
  double base_rate = 500.0;  // packets per second inside a burst

  friend bool operator==(const SiteModel&, const SiteModel&) = default;
};

enum class World { kClosed, kOpen };

struct MixConfig {
  std::vector<int> tab_counts{2};
  double gap_min = 3.0;
  double gap_max = 10.0;
  double session_cap = 240.0;
  bool dynamic = false;
  std::map<int, double> dynamic_proportions{{2, 0.40}, {3, 0.30}, {4, 0.20}, {5, 0.10}};
  World world = World::kClosed;
};

// Throws Error{kConfigError}.
void validate_mix_config(const MixConfig& cfg);

SiteModel generate_site_model(int site_id, std::uint64_t seed);
// Models for the open world; their traces carry SiteLabel::unmonitored().
SiteModel generate_unmonitored_model(int index, std::uint64_t seed);
void validate_site_model(const SiteModel& model);

Trace sample_trace(const SiteModel& model, Rng& rng);

// Shifts tab i by offsets[i], merges into one time-sorted stream and drops
// events past `session_cap`. Ties keep tab order.
Session merge_tabs(const std::vector<Trace>& traces, const std::vector<double>& offsets,
                   int n_sites, double session_cap);

// Throws Error{kEmptyInput}.
Session synthesize_session(const std::vector<Trace>& traces, int n_sites, Rng& rng,
                           const MixConfig& cfg);

struct Dataset {
  int n_sites = 0;
  World world = World::kClosed;
  std::vector<Session> sessions;
};

// Throws Error{kEmptyInput | kInsufficientSites | kConfigError}.
Dataset build_dataset(const std::vector<SiteModel>& monitored,
                      const std::vector<SiteModel>& unmonitored, const MixConfig& cfg,
                      std::size_t count, Rng& rng);

std::string session_id(std::size_t index);

// Layout: traces/<id>.txt, manifest.json, sessions.json. Dummy flags are not
// part of the trace file format and do not survive a save/load cycle.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace wfkit
