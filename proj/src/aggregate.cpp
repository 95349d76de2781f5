#include "wfkit/aggregate.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "wfkit/error.hpp"

namespace wfkit {

void validate_aggregation_config(const AggregationConfig& cfg) {
  if (!(cfg.interval > 0.0)) throw Error(ErrorCode::kConfigError, "interval must be > 0");
  if (cfg.feature_len <= 0 || cfg.feature_len % kValuesPerSegment != 0) {
    throw Error(ErrorCode::kConfigError, "feature_len must be a positive multiple of 8");
  }
}

namespace {

long segment_of(double time, double interval) {
  return static_cast<long>(std::floor(time / interval));
}

// Mean of consecutive differences, accumulated left to right.
double mean_gap(const std::vector<double>& times) {
  if (times.size() < 2) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 1; i < times.size(); ++i) sum += times[i] - times[i - 1];
  return sum / static_cast<double>(times.size() - 1);
}

void fill_segment(std::span<const PacketEvent> events, double* out) {
  std::vector<double> out_times;
  std::vector<double> in_times;
  std::vector<Direction> dirs;
  dirs.reserve(events.size());
  for (const PacketEvent& e : events) {
    (e.direction == Direction::kOutgoing ? out_times : in_times).push_back(e.time);
    dirs.push_back(e.direction);
  }
  const BurstStats out_bursts = burst_stats(dirs, Direction::kOutgoing);
  const BurstStats in_bursts = burst_stats(dirs, Direction::kIncoming);
  out[kOutCount] = static_cast<double>(out_times.size());
  out[kOutMeanIat] = mean_gap(out_times);
  out[kOutBursts] = out_bursts.count;
  out[kOutMeanBurst] = out_bursts.mean_size;
  out[kInCount] = static_cast<double>(in_times.size());
  out[kInMeanIat] = mean_gap(in_times);
  out[kInBursts] = in_bursts.count;
  out[kInMeanBurst] = in_bursts.mean_size;
}

}  // namespace

std::vector<std::vector<PacketEvent>> segment_trace(const Trace& trace,
                                                    const AggregationConfig& cfg) {
  validate_aggregation_config(cfg);
  const long n_segments = cfg.segments();
  std::vector<std::vector<PacketEvent>> segments(static_cast<std::size_t>(n_segments));
  for (const PacketEvent& e : trace.events) {
    const long s = segment_of(e.time, cfg.interval);
    if (s >= 0 && s < n_segments) segments[static_cast<std::size_t>(s)].push_back(e);
  }
  return segments;
}

BurstStats burst_stats(std::span<const Direction> directions, Direction target) {
  BurstStats stats;
  int packets = 0;
  bool in_run = false;
  for (Direction d : directions) {
    if (d == target) {
      ++packets;
      if (!in_run) ++stats.count;
      in_run = true;
    } else {
      in_run = false;
    }
  }
  if (stats.count > 0) stats.mean_size = static_cast<double>(packets) / stats.count;
  return stats;
}

FeatureVector aggregate_features(const Trace& trace, const AggregationConfig& cfg) {
  validate_aggregation_config(cfg);
  FeatureVector features;
  features.values.assign(static_cast<std::size_t>(cfg.feature_len), 0.0);
  const long n_segments = cfg.segments();
  // Events are time-sorted, so each segment is a contiguous run.
  std::size_t begin = 0;
  const auto& events = trace.events;
  while (begin < events.size()) {
    const long s = segment_of(events[begin].time, cfg.interval);
    std::size_t end = begin + 1;
    while (end < events.size() && segment_of(events[end].time, cfg.interval) == s) ++end;
    if (s >= n_segments) break;
    if (s >= 0) {
      fill_segment(std::span<const PacketEvent>(events.data() + begin, end - begin),
                   features.values.data() + static_cast<std::size_t>(s) * kValuesPerSegment);
    }
    begin = end;
  }
  return features;
}

void save_feature_set(const std::filesystem::path& bin_path, const FeatureSet& set) {
  static_assert(std::endian::native == std::endian::little, "little-endian host expected");
  if (bin_path.has_parent_path()) std::filesystem::create_directories(bin_path.parent_path());
  {
    std::ofstream out(bin_path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + bin_path.string());
    out.write(reinterpret_cast<const char*>(set.data.data()),
              static_cast<std::streamsize>(set.data.size() * sizeof(float)));
    if (!out) throw Error(ErrorCode::kIoError, "short write to " + bin_path.string());
  }
  nlohmann::ordered_json doc;
  doc["n_sessions"] = set.rows;
  doc["feature_len"] = set.config.feature_len;
  doc["interval"] = set.config.interval;
  doc["dtype"] = "float32-le";
  doc["n_sites"] = set.n_sites;
  doc["ids"] = set.ids;
  doc["labels"] = set.labels;
  std::filesystem::path sidecar = bin_path;
  sidecar.replace_extension(".json");
  write_text_file(sidecar, doc.dump(1) + "\n");
}

FeatureSet load_feature_set(const std::filesystem::path& bin_path) {
  FeatureSet set;
  std::filesystem::path sidecar = bin_path;
  sidecar.replace_extension(".json");
  try {
    const auto doc = nlohmann::json::parse(read_text_file(sidecar));
    set.rows = doc.at("n_sessions").get<std::size_t>();
    set.config.feature_len = doc.at("feature_len").get<int>();
    set.config.interval = doc.at("interval").get<double>();
    set.n_sites = doc.at("n_sites").get<int>();
    set.ids = doc.at("ids").get<std::vector<std::string>>();
    set.labels = doc.at("labels").get<std::vector<std::vector<int>>>();
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kConfigError, std::string("feature sidecar: ") + ex.what());
  }
  validate_aggregation_config(set.config);
  if (set.labels.size() != set.rows || set.ids.size() != set.rows) {
    throw Error(ErrorCode::kConfigError, "feature sidecar: row count mismatch");
  }
  const std::string blob = read_text_file(bin_path);
  const std::size_t expected = set.rows * static_cast<std::size_t>(set.config.feature_len);
  if (blob.size() != expected * sizeof(float)) {
    throw Error(ErrorCode::kIoError, "feature blob size does not match sidecar shape");
  }
  set.data.resize(expected);
  std::memcpy(set.data.data(), blob.data(), blob.size());
  return set;
}

}  // namespace wfkit
