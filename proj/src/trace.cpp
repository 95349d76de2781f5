#include "wfkit/trace.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "wfkit/error.hpp"

namespace wfkit {

namespace {

std::string line_msg(std::size_t line, std::string_view what) {
  return "line " + std::to_string(line) + ": " + std::string(what);
}

bool parse_time(std::string_view token, double& out) {
  if (token.empty()) return false;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out) && out >= 0.0;
}

}  // namespace

void LabelVector::set(const SiteLabel& label) {
  if (label.is_monitored()) {
    bits.at(static_cast<std::size_t>(label.site)) = 1;
  } else {
    bits.at(unmonitored_slot()) = 1;
  }
}

int LabelVector::count() const {
  int n = 0;
  for (int b : bits) n += b != 0 ? 1 : 0;
  return n;
}

Trace parse_trace(std::string_view text) {
  Trace trace;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;

    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos) {
      throw Error(ErrorCode::kMalformedLine, line_msg(line_no, "expected <time>\\t<direction>"), line_no);
    }
    double time = 0.0;
    if (!parse_time(line.substr(0, tab), time)) {
      throw Error(ErrorCode::kMalformedLine, line_msg(line_no, "bad time"), line_no);
    }
    const std::string_view dir = line.substr(tab + 1);
    Direction direction;
    if (dir == "1") {
      direction = Direction::kOutgoing;
    } else if (dir == "-1") {
      direction = Direction::kIncoming;
    } else {
      throw Error(ErrorCode::kMalformedLine, line_msg(line_no, "direction must be 1 or -1"), line_no);
    }
    if (!trace.events.empty() && time < trace.events.back().time) {
      throw Error(ErrorCode::kNonMonotonicTime, line_msg(line_no, "time decreases"), line_no);
    }
    trace.events.push_back(PacketEvent{time, direction, false});
  }
  if (trace.events.empty()) throw Error(ErrorCode::kEmptyTrace, "no events");
  return trace;
}

std::string write_trace(const Trace& trace) {
  std::string out;
  out.reserve(trace.events.size() * 16);
  char buf[64];
  for (const PacketEvent& e : trace.events) {
    // Shortest representation that round-trips exactly.
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), e.time);
    out.append(buf, ptr);
    out += e.direction == Direction::kOutgoing ? "\t1\n" : "\t-1\n";
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorCode::kIoError, "short write to " + path.string());
}

Trace load_trace(const std::filesystem::path& path) {
  return parse_trace(read_text_file(path));
}

void save_trace(const std::filesystem::path& path, const Trace& trace) {
  write_text_file(path, write_trace(trace));
}

bool is_time_sorted(const std::vector<PacketEvent>& events) {
  for (std::size_t i = 1; i < events.size(); ++i) {
    if (events[i].time < events[i - 1].time) return false;
  }
  return true;
}

std::vector<std::string> validate_session(const Session& session) {
  std::vector<std::string> violations;
  if (session.tab_count < 1) violations.emplace_back("tab_count below 1");
  if (static_cast<int>(session.tab_offsets.size()) != session.tab_count) {
    violations.emplace_back("tab_offsets length differs from tab_count");
  }
  if (!session.tab_offsets.empty() && session.tab_offsets.front() != 0.0) {
    violations.emplace_back("first offset not zero");
  }
  for (std::size_t i = 1; i < session.tab_offsets.size(); ++i) {
    if (!(session.tab_offsets[i] > session.tab_offsets[i - 1])) {
      violations.emplace_back("offsets not increasing");
      break;
    }
  }
  if (session.labels.size() < 2) violations.emplace_back("label vector too short");
  bool binary = true;
  for (int b : session.labels.bits) binary = binary && (b == 0 || b == 1);
  if (!binary) violations.emplace_back("label not binary");
  if (session.labels.count() > session.tab_count) {
    violations.emplace_back("more labels set than tabs");
  }
  if (!is_time_sorted(session.trace.events)) violations.emplace_back("times not monotonic");
  for (const PacketEvent& e : session.trace.events) {
    if (!(e.time >= 0.0)) {
      violations.emplace_back("negative time");
      break;
    }
  }
  for (const PacketEvent& e : session.trace.events) {
    if (e.direction != Direction::kOutgoing && e.direction != Direction::kIncoming) {
      violations.emplace_back("direction not +1/-1");
      break;
    }
  }
  return violations;
}

DatasetManifest parse_manifest(std::string_view json_text) {
  using nlohmann::json;
  DatasetManifest manifest;
  try {
    const json doc = json::parse(json_text);
    manifest.n_sites = doc.at("n_sites").get<int>();
    if (manifest.n_sites < 0) throw Error(ErrorCode::kConfigError, "n_sites must be >= 0");
    for (const json& entry : doc.at("entries")) {
      ManifestEntry e;
      e.path = entry.at("path").get<std::string>();
      const json& label = entry.at("label");
      if (label.is_string()) {
        if (label.get<std::string>() != "unmonitored") {
          throw Error(ErrorCode::kConfigError, "label string must be \"unmonitored\"");
        }
        e.label = SiteLabel::unmonitored();
      } else {
        const int site = label.get<int>();
        if (site < 0 || site >= manifest.n_sites) {
          throw Error(ErrorCode::kConfigError, "label out of range: " + std::to_string(site));
        }
        e.label = SiteLabel::monitored(site);
      }
      manifest.entries.push_back(std::move(e));
    }
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kConfigError, std::string("manifest: ") + ex.what());
  }
  return manifest;
}

std::string write_manifest(const DatasetManifest& manifest) {
  using nlohmann::ordered_json;
  ordered_json doc;
  doc["n_sites"] = manifest.n_sites;
  doc["entries"] = ordered_json::array();
  for (const ManifestEntry& e : manifest.entries) {
    ordered_json entry;
    entry["path"] = e.path;
    if (e.label.is_monitored()) {
      entry["label"] = e.label.site;
    } else {
      entry["label"] = "unmonitored";
    }
    doc["entries"].push_back(std::move(entry));
  }
  return doc.dump(2) + "\n";
}

}  // namespace wfkit
