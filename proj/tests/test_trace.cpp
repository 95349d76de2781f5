#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "oracles.hpp"
#include "wfkit/error.hpp"
#include "wfkit/trace.hpp"

using namespace wfkit;

namespace {

ErrorCode code_of(std::string_view text) {
  try {
    parse_trace(text);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error for: " << text;
  return ErrorCode::kIoError;
}

std::size_t line_of(std::string_view text) {
  try {
    parse_trace(text);
  } catch (const Error& e) {
    return e.line();
  }
  return 0;
}

Session two_tab_session() {
  Session s;
  s.trace.events = {{0.0, Direction::kOutgoing, false}, {0.5, Direction::kIncoming, false}};
  s.labels = LabelVector(4);
  s.labels.set(SiteLabel::monitored(1));
  s.labels.set(SiteLabel::monitored(3));
  s.tab_count = 2;
  s.tab_offsets = {0.0, 4.0};
  return s;
}

}  // namespace

TEST(ParseTrace, TwoEvents) {
  const Trace t = parse_trace("0.0\t1\n0.01\t-1");
  ASSERT_EQ(t.events.size(), 2u);
  EXPECT_EQ(t.events[0], (PacketEvent{0.0, Direction::kOutgoing, false}));
  EXPECT_EQ(t.events[1], (PacketEvent{0.01, Direction::kIncoming, false}));
}

TEST(ParseTrace, Errors) {
  EXPECT_EQ(code_of(""), ErrorCode::kEmptyTrace);
  EXPECT_EQ(code_of("\n\n"), ErrorCode::kEmptyTrace);
  EXPECT_EQ(code_of("0.5\t0"), ErrorCode::kMalformedLine);
  EXPECT_EQ(line_of("0.5\t0"), 1u);
  EXPECT_EQ(code_of("0.1\t1\n0.05\t1\n"), ErrorCode::kNonMonotonicTime);
  EXPECT_EQ(line_of("0.1\t1\n0.05\t1\n"), 2u);
  EXPECT_EQ(code_of("-0.1\t1"), ErrorCode::kMalformedLine);
  EXPECT_EQ(code_of("abc\t1"), ErrorCode::kMalformedLine);
  EXPECT_EQ(code_of("0.1 1"), ErrorCode::kMalformedLine);
  EXPECT_EQ(code_of("0.1\t+1"), ErrorCode::kMalformedLine);
  EXPECT_EQ(code_of("nan\t1"), ErrorCode::kMalformedLine);
}

TEST(ParseTrace, AcceptsCrlfAndEqualTimes) {
  const Trace t = parse_trace("0\t1\r\n0\t-1\r\n");
  EXPECT_EQ(t.events.size(), 2u);
}

TEST(WriteTrace, SingleEventAndEmpty) {
  Trace t;
  EXPECT_EQ(write_trace(t), "");
  t.events.push_back({0.0, Direction::kOutgoing, false});
  EXPECT_EQ(write_trace(t), "0\t1\n");
}

TEST(WriteTrace, RoundTripProperty) {
  Rng rng(99);
  for (int i = 0; i < 1000; ++i) {
    Trace t = oracle::random_trace(rng, 60, 5.0);
    if (t.events.empty()) t.events.push_back({rng.uniform(0.0, 1.0), Direction::kIncoming, false});
    const Trace back = parse_trace(write_trace(t));
    ASSERT_EQ(back.events, t.events) << "trace " << i;
  }
}

TEST(Trace, SaveAndLoad) {
  const auto path = std::filesystem::temp_directory_path() / "wfkit_trace_test" / "t.txt";
  Trace t;
  t.events = {{0.0, Direction::kOutgoing, false}, {1.25, Direction::kIncoming, false}};
  save_trace(path, t);
  EXPECT_EQ(load_trace(path).events, t.events);
  std::filesystem::remove_all(path.parent_path());
  EXPECT_THROW(load_trace(path), Error);
}

TEST(LabelVector, UnmonitoredSlotIsLast) {
  LabelVector y(3);
  EXPECT_EQ(y.size(), 4u);
  y.set(SiteLabel::unmonitored());
  y.set(SiteLabel::monitored(0));
  EXPECT_EQ(y.bits, (std::vector<int>{1, 0, 0, 1}));
  EXPECT_EQ(y.count(), 2);
}

TEST(ValidateSession, WellFormed) { EXPECT_TRUE(validate_session(two_tab_session()).empty()); }

TEST(ValidateSession, Violations) {
  auto has = [](const std::vector<std::string>& v, const char* what) {
    return std::find(v.begin(), v.end(), what) != v.end();
  };
  Session s = two_tab_session();
  s.tab_count = 3;
  s.tab_offsets = {0, 2, 1};
  EXPECT_TRUE(has(validate_session(s), "offsets not increasing"));

  s = two_tab_session();
  s.labels.bits[0] = 2;
  EXPECT_TRUE(has(validate_session(s), "label not binary"));

  s = two_tab_session();
  s.tab_offsets = {1.0, 4.0};
  EXPECT_TRUE(has(validate_session(s), "first offset not zero"));

  s = two_tab_session();
  std::swap(s.trace.events[0], s.trace.events[1]);
  EXPECT_TRUE(has(validate_session(s), "times not monotonic"));
}

TEST(Manifest, RoundTrip) {
  DatasetManifest m;
  m.n_sites = 5;
  m.entries = {{"traces/a.txt", SiteLabel::monitored(4)}, {"traces/b.txt", SiteLabel::unmonitored()}};
  EXPECT_EQ(parse_manifest(write_manifest(m)), m);
}

TEST(Manifest, Rejects) {
  EXPECT_THROW(parse_manifest(R"({"n_sites": 2, "entries": [{"path": "x", "label": 2}]})"), Error);
  EXPECT_THROW(parse_manifest(R"({"n_sites": 2, "entries": [{"path": "x", "label": "other"}]})"), Error);
  EXPECT_THROW(parse_manifest("not json"), Error);
}
