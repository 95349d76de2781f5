#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace wfkit {

// +1 is client to server. Tor cells are fixed-size, so direction and time are
// the whole observable record.
enum class Direction : std::int8_t { kOutgoing = 1, kIncoming = -1 };

inline int sign(Direction d) { return static_cast<int>(d); }

struct PacketEvent {
  double time = 0.0;  // seconds since session start
  Direction direction = Direction::kOutgoing;
  bool dummy = false;  // injected by a defense

  friend bool operator==(const PacketEvent&, const PacketEvent&) = default;
};

// A site index in [0, n_sites) or the shared unmonitored class.
struct SiteLabel {
  static constexpr int kUnmonitored = -1;
  int site = kUnmonitored;

  static SiteLabel monitored(int index) { return SiteLabel{index}; }
  static SiteLabel unmonitored() { return SiteLabel{}; }
  bool is_monitored() const { return site >= 0; }

  friend bool operator==(const SiteLabel&, const SiteLabel&) = default;
};

struct Trace {
  std::vector<PacketEvent> events;
  SiteLabel label;

  friend bool operator==(const Trace&, const Trace&) = default;
};

// Multi-hot targets of length n_sites + 1; the last slot is "any unmonitored
// site". Entries are plain ints so that malformed vectors can be represented
// and reported by validate_session.
struct LabelVector {
  std::vector<int> bits;

  LabelVector() = default;
  explicit LabelVector(int n_sites) : bits(static_cast<std::size_t>(n_sites) + 1, 0) {}

  int n_sites() const { return static_cast<int>(bits.size()) - 1; }
  std::size_t size() const { return bits.size(); }
  std::size_t unmonitored_slot() const { return bits.size() - 1; }
  void set(const SiteLabel& label);
  int count() const;

  friend bool operator==(const LabelVector&, const LabelVector&) = default;
};

struct Session {
  Trace trace;  // trace.label is unused
  LabelVector labels;
  int tab_count = 1;
  std::vector<double> tab_offsets;
  std::optional<std::string> defense;

  friend bool operator==(const Session&, const Session&) = default;
};

// Throws Error{kMalformedLine | kNonMonotonicTime | kEmptyTrace}.
Trace parse_trace(std::string_view text);
// Empty traces serialize to "" even though parse_trace rejects them.
std::string write_trace(const Trace& trace);

Trace load_trace(const std::filesystem::path& path);
void save_trace(const std::filesystem::path& path, const Trace& trace);

// Empty result means the session is well-formed.
std::vector<std::string> validate_session(const Session& session);

bool is_time_sorted(const std::vector<PacketEvent>& events);

struct ManifestEntry {
  std::string path;
  SiteLabel label;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

// {"n_sites": int, "entries": [{"path": str, "label": int | "unmonitored"}]}
struct DatasetManifest {
  int n_sites = 0;
  std::vector<ManifestEntry> entries;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

DatasetManifest parse_manifest(std::string_view json_text);
std::string write_manifest(const DatasetManifest& manifest);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace wfkit
