#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "wfkit/trace.hpp"

namespace wfkit {

inline constexpr int kValuesPerSegment = 8;

// Per-segment layout inside a FeatureVector.
enum SegmentField : int {
  kOutCount = 0,
  kOutMeanIat = 1,
  kOutBursts = 2,
  kOutMeanBurst = 3,
  kInCount = 4,
  kInMeanIat = 5,
  kInBursts = 6,
  kInMeanBurst = 7,
};

struct AggregationConfig {
  double interval = 0.020;  // seconds per segment
  int feature_len = 8000;   // d; segment count is d / 8

  int segments() const { return feature_len / kValuesPerSegment; }
};

// Throws Error{kConfigError}.
void validate_aggregation_config(const AggregationConfig& cfg);

struct FeatureVector {
  std::vector<double> values;
};

struct BurstStats {
  int count = 0;
  double mean_size = 0.0;

  friend bool operator==(const BurstStats&, const BurstStats&) = default;
};

// Event e goes to segment floor(e.time / interval); events at or past
// segments() * interval are dropped.
std::vector<std::vector<PacketEvent>> segment_trace(const Trace& trace,
                                                    const AggregationConfig& cfg);

// Bursts are maximal runs of `target` inside `directions`.
BurstStats burst_stats(std::span<const Direction> directions, Direction target);

FeatureVector aggregate_features(const Trace& trace, const AggregationConfig& cfg);

// Row-major float32 matrix of features with its labels, as written by the
// `aggregate` stage: <stem>.bin (little-endian) plus <stem>.json sidecar.
struct FeatureSet {
  AggregationConfig config;
  std::size_t rows = 0;
  std::vector<float> data;  // rows * feature_len
  std::vector<std::string> ids;
  std::vector<std::vector<int>> labels;  // rows x (n_sites + 1)
  int n_sites = 0;

  std::span<const float> row(std::size_t i) const {
    const auto d = static_cast<std::size_t>(config.feature_len);
    return {data.data() + i * d, d};
  }
};

void save_feature_set(const std::filesystem::path& bin_path, const FeatureSet& set);
FeatureSet load_feature_set(const std::filesystem::path& bin_path);

}  // namespace wfkit
