#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "wfkit/model.hpp"
#include "wfkit/trace.hpp"

namespace wfkit {

struct EvalRecord {
  LabelVector y;
  PredictionVector y_hat;
};

// Label indices by descending probability, lowest index first on ties.
std::vector<std::size_t> rank_labels(const PredictionVector& pred);

// Throws Error{kBadK} unless 1 <= k <= N + 1.
double precision_at_k(const EvalRecord& record, int k);
// Mean of P@1..P@k over one ranking. Throws Error{kBadK}.
double map_at_k(const EvalRecord& record, int k);

// Exact pairwise AUC: P(score+ > score-) + P(tie) / 2. Throws
// Error{kDegenerateLabel} when the label lacks positives or negatives.
double auc_per_label(std::span<const EvalRecord> records, int label);

struct PrecisionRecall {
  std::optional<double> precision;  // nullopt when nothing is predicted
  std::optional<double> recall;     // nullopt when the label has no positives
};

// Predictions are probs >= threshold. Throws Error{kBadThreshold}.
PrecisionRecall precision_recall(std::span<const EvalRecord> records, int label, double threshold);

struct CurvePoint {
  double threshold = 0.0;
  std::optional<double> precision;
  std::optional<double> recall;
};

// Macro precision/recall at each threshold.
std::vector<CurvePoint> precision_recall_curve(std::span<const EvalRecord> records,
                                               std::span<const double> thresholds);

struct Report {
  std::size_t n_records = 0;
  std::vector<int> ks;
  std::vector<double> p_at_k;    // parallel to ks
  std::vector<double> map_at_k;  // parallel to ks
  std::optional<double> auc;     // macro over every non-degenerate label
  std::optional<double> auc_m;   // macro over monitored labels
  std::optional<double> auc_n;   // the unmonitored label
  double threshold = 0.5;
  std::optional<double> precision;  // macro over labels with a defined value
  std::optional<double> recall;
  std::vector<CurvePoint> pr_curve;
};

// Instance metrics are averaged over records; label metrics are macro
// averages over labels with at least one positive. Throws Error{kEmptyInput}.
Report evaluate(std::span<const EvalRecord> records, std::span<const int> ks, double threshold);

nlohmann::ordered_json report_to_json(const Report& report);
Report report_from_json(const nlohmann::json& doc);
// Aligned text table for terminals.
std::string format_report(const Report& report);

}  // namespace wfkit
