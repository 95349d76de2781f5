#include <gtest/gtest.h>

#include "oracles.hpp"
#include "wfkit/error.hpp"
#include "wfkit/metrics.hpp"

using namespace wfkit;

namespace {

EvalRecord record(std::vector<int> y, std::vector<double> p) {
  EvalRecord r;
  r.y.bits = std::move(y);
  r.y_hat.probs = std::move(p);
  return r;
}

// Probabilities on a coarse grid so ties are common.
std::vector<EvalRecord> random_records(Rng& rng, std::size_t n, std::size_t labels) {
  std::vector<EvalRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<int> y(labels);
    std::vector<double> p(labels);
    for (std::size_t l = 0; l < labels; ++l) {
      y[l] = rng.bernoulli(0.3);
      p[l] = static_cast<double>(rng.uniform_int(0, 20)) / 20.0;
    }
    out.push_back(record(std::move(y), std::move(p)));
  }
  return out;
}

}  // namespace

TEST(Metrics, HandCases) {
  EXPECT_EQ(precision_at_k(record({1, 0, 0}, {0.9, 0.8, 0.1}), 2), 0.5);
  EXPECT_EQ(map_at_k(record({1, 0, 0}, {0.9, 0.8, 0.1}), 2), 0.75);
  const std::vector<EvalRecord> auc_case{record({1}, {0.4}), record({0}, {0.1}), record({0}, {0.7})};
  EXPECT_EQ(auc_per_label(auc_case, 0), 0.5);
}

TEST(Metrics, TiesRankLowerIndexFirst) {
  const auto r = record({0, 1, 0}, {0.5, 0.5, 0.5});
  EXPECT_EQ(precision_at_k(r, 1), 0.0);
  EXPECT_EQ(rank_labels(r.y_hat), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Metrics, Errors) {
  const auto r = record({1, 0}, {0.2, 0.3});
  EXPECT_THROW(precision_at_k(r, 0), Error);
  EXPECT_THROW(map_at_k(r, 3), Error);
  const std::vector<EvalRecord> all_pos{record({1}, {0.4}), record({1}, {0.6})};
  try {
    auc_per_label(all_pos, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateLabel);
  }
  try {
    evaluate({}, std::vector<int>{1}, 0.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyInput);
  }
}

TEST(Metrics, PrecisionUndefinedWithoutPredictions) {
  const std::vector<EvalRecord> recs{record({1, 0}, {0.1, 0.2}), record({0, 1}, {0.3, 0.9})};
  const PrecisionRecall first = precision_recall(recs, 0, 0.5);
  EXPECT_FALSE(first.precision.has_value());
  EXPECT_EQ(first.recall, 0.0);
  const PrecisionRecall second = precision_recall(recs, 1, 0.5);
  EXPECT_EQ(second.precision, 1.0);
  EXPECT_EQ(second.recall, 1.0);
}

TEST(Metrics, MatchBruteForce) {
  Rng rng(31);
  const auto recs = random_records(rng, 500, 6);
  for (const EvalRecord& r : recs) {
    for (int k = 1; k <= 6; ++k) {
      ASSERT_EQ(precision_at_k(r, k), oracle::brute_precision_at_k(r.y.bits, r.y_hat.probs, k));
      ASSERT_EQ(map_at_k(r, k), oracle::brute_map_at_k(r.y.bits, r.y_hat.probs, k));
    }
  }
  for (int l = 0; l < 6; ++l) {
    std::vector<int> y;
    std::vector<double> p;
    for (const EvalRecord& r : recs) {
      y.push_back(r.y.bits[static_cast<std::size_t>(l)]);
      p.push_back(r.y_hat.probs[static_cast<std::size_t>(l)]);
    }
    const auto [num, den] = oracle::brute_auc_twice(y, p);
    EXPECT_EQ(auc_per_label(recs, l), static_cast<double>(num) / static_cast<double>(den));
  }
}

TEST(Metrics, EvaluateMacroAverages) {
  const std::vector<EvalRecord> recs{record({1, 0, 0}, {0.9, 0.2, 0.6}), record({0, 1, 1}, {0.3, 0.7, 0.4}),
                                     record({1, 0, 1}, {0.8, 0.1, 0.55})};
  const std::vector<int> ks{1, 2};
  const Report rep = evaluate(recs, ks, 0.5);
  EXPECT_EQ(rep.n_records, 3u);
  ASSERT_EQ(rep.p_at_k.size(), 2u);
  EXPECT_DOUBLE_EQ(rep.p_at_k[0], (1.0 + 1.0 + 1.0) / 3.0);
  ASSERT_TRUE(rep.auc_m.has_value());
  ASSERT_TRUE(rep.auc_n.has_value());
  const double auc0 = auc_per_label(recs, 0), auc1 = auc_per_label(recs, 1), auc2 = auc_per_label(recs, 2);
  EXPECT_DOUBLE_EQ(*rep.auc_m, (auc0 + auc1) / 2.0);
  EXPECT_EQ(*rep.auc_n, auc2);
  EXPECT_DOUBLE_EQ(*rep.auc, (auc0 + auc1 + auc2) / 3.0);
  EXPECT_EQ(rep.pr_curve.size(), 19u);
}

TEST(Metrics, ReportJsonRoundTrip) {
  Rng rng(2);
  const auto recs = random_records(rng, 40, 4);
  const std::vector<int> ks{1, 2, 3};
  const Report rep = evaluate(recs, ks, 0.4);
  const Report back = report_from_json(report_to_json(rep));
  EXPECT_EQ(report_to_json(back).dump(), report_to_json(rep).dump());
  EXPECT_NE(format_report(rep).find("MAP@k"), std::string::npos);
}
