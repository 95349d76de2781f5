#include "wfkit/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "wfkit/error.hpp"

namespace wfkit {

namespace {

void check_k(const EvalRecord& record, int k) {
  if (record.y.size() != record.y_hat.probs.size()) {
    throw Error(ErrorCode::kShapeMismatch, "label and prediction lengths differ");
  }
  if (k < 1 || static_cast<std::size_t>(k) > record.y.size()) {
    throw Error(ErrorCode::kBadK, "k=" + std::to_string(k) + " outside [1, " +
                                      std::to_string(record.y.size()) + "]");
  }
}

void check_threshold(double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw Error(ErrorCode::kBadThreshold, "threshold must lie in (0, 1)");
  }
}

std::size_t label_count(std::span<const EvalRecord> records) {
  return records.empty() ? 0 : records.front().y.size();
}

std::optional<double> macro(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

}  // namespace

std::vector<std::size_t> rank_labels(const PredictionVector& pred) {
  std::vector<std::size_t> order(pred.probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pred.probs[a] > pred.probs[b];
  });
  return order;
}

double precision_at_k(const EvalRecord& record, int k) {
  check_k(record, k);
  const auto order = rank_labels(record.y_hat);
  int hits = 0;
  for (int i = 0; i < k; ++i) hits += record.y.bits[order[static_cast<std::size_t>(i)]] != 0;
  return static_cast<double>(hits) / k;
}

double map_at_k(const EvalRecord& record, int k) {
  check_k(record, k);
  const auto order = rank_labels(record.y_hat);
  int hits = 0;
  double total = 0.0;
  for (int i = 1; i <= k; ++i) {
    hits += record.y.bits[order[static_cast<std::size_t>(i - 1)]] != 0;
    total += static_cast<double>(hits) / i;
  }
  return total / k;
}

double auc_per_label(std::span<const EvalRecord> records, int label) {
  std::vector<double> neg;
  std::vector<double> pos;
  for (const EvalRecord& r : records) {
    const auto l = static_cast<std::size_t>(label);
    if (label < 0 || l >= r.y.size() || l >= r.y_hat.probs.size()) {
      throw Error(ErrorCode::kShapeMismatch, "label index out of range");
    }
    (r.y.bits[l] != 0 ? pos : neg).push_back(r.y_hat.probs[l]);
  }
  if (pos.empty() || neg.empty()) {
    throw Error(ErrorCode::kDegenerateLabel,
                "label " + std::to_string(label) + " needs positives and negatives");
  }
  std::sort(neg.begin(), neg.end());
  // Twice the Mann-Whitney count stays an exact integer in a double.
  double twice_wins = 0.0;
  for (double s : pos) {
    const auto lower = std::lower_bound(neg.begin(), neg.end(), s) - neg.begin();
    const auto upper = std::upper_bound(neg.begin(), neg.end(), s) - neg.begin();
    twice_wins += 2.0 * static_cast<double>(lower) + static_cast<double>(upper - lower);
  }
  return twice_wins / 2.0 / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

PrecisionRecall precision_recall(std::span<const EvalRecord> records, int label, double threshold) {
  check_threshold(threshold);
  long tp = 0, fp = 0, fn = 0;
  const auto l = static_cast<std::size_t>(label);
  for (const EvalRecord& r : records) {
    if (label < 0 || l >= r.y.size() || l >= r.y_hat.probs.size()) {
      throw Error(ErrorCode::kShapeMismatch, "label index out of range");
    }
    const bool truth = r.y.bits[l] != 0;
    const bool predicted = r.y_hat.probs[l] >= threshold;
    tp += truth && predicted;
    fp += !truth && predicted;
    fn += truth && !predicted;
  }
  PrecisionRecall pr;
  if (tp + fp > 0) pr.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn > 0) pr.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return pr;
}

std::vector<CurvePoint> precision_recall_curve(std::span<const EvalRecord> records,
                                               std::span<const double> thresholds) {
  std::vector<CurvePoint> curve;
  const std::size_t n_labels = label_count(records);
  for (double t : thresholds) {
    std::vector<double> precisions, recalls;
    for (std::size_t l = 0; l < n_labels; ++l) {
      bool any_positive = false;
      for (const EvalRecord& r : records) any_positive = any_positive || r.y.bits[l] != 0;
      if (!any_positive) continue;
      const PrecisionRecall pr = precision_recall(records, static_cast<int>(l), t);
      if (pr.precision) precisions.push_back(*pr.precision);
      if (pr.recall) recalls.push_back(*pr.recall);
    }
    curve.push_back(CurvePoint{t, macro(precisions), macro(recalls)});
  }
  return curve;
}

Report evaluate(std::span<const EvalRecord> records, std::span<const int> ks, double threshold) {
  if (records.empty()) throw Error(ErrorCode::kEmptyInput, "no records to evaluate");
  check_threshold(threshold);
  Report report;
  report.n_records = records.size();
  report.threshold = threshold;
  const double n = static_cast<double>(records.size());
  for (int k : ks) {
    double p_sum = 0.0, map_sum = 0.0;
    for (const EvalRecord& r : records) {
      p_sum += precision_at_k(r, k);
      map_sum += map_at_k(r, k);
    }
    report.ks.push_back(k);
    report.p_at_k.push_back(p_sum / n);
    report.map_at_k.push_back(map_sum / n);
  }

  const std::size_t n_labels = label_count(records);
  std::vector<double> auc_all, auc_monitored, precisions, recalls;
  for (std::size_t l = 0; l < n_labels; ++l) {
    std::size_t positives = 0;
    for (const EvalRecord& r : records) positives += r.y.bits[l] != 0;
    if (positives == 0) continue;
    if (positives < records.size()) {
      const double auc = auc_per_label(records, static_cast<int>(l));
      auc_all.push_back(auc);
      if (l + 1 < n_labels) {
        auc_monitored.push_back(auc);
      } else {
        report.auc_n = auc;
      }
    }
    const PrecisionRecall pr = precision_recall(records, static_cast<int>(l), threshold);
    if (pr.precision) precisions.push_back(*pr.precision);
    if (pr.recall) recalls.push_back(*pr.recall);
  }
  report.auc = macro(auc_all);
  report.auc_m = macro(auc_monitored);
  report.precision = macro(precisions);
  report.recall = macro(recalls);

  std::vector<double> grid;
  for (int i = 1; i <= 19; ++i) grid.push_back(i * 0.05);
  report.pr_curve = precision_recall_curve(records, grid);
  return report;
}

namespace {

nlohmann::ordered_json opt(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

std::optional<double> opt_from(const nlohmann::json& doc, const char* key) {
  if (!doc.contains(key) || doc.at(key).is_null()) return std::nullopt;
  return doc.at(key).get<double>();
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *v);
  return buf;
}

}  // namespace

nlohmann::ordered_json report_to_json(const Report& report) {
  nlohmann::ordered_json doc;
  doc["n_records"] = report.n_records;
  doc["threshold"] = report.threshold;
  nlohmann::ordered_json at_k = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < report.ks.size(); ++i) {
    nlohmann::ordered_json row;
    row["k"] = report.ks[i];
    row["p_at_k"] = report.p_at_k[i];
    row["map_at_k"] = report.map_at_k[i];
    at_k.push_back(std::move(row));
  }
  doc["at_k"] = std::move(at_k);
  doc["auc"] = opt(report.auc);
  doc["auc_m"] = opt(report.auc_m);
  doc["auc_n"] = opt(report.auc_n);
  doc["precision"] = opt(report.precision);
  doc["recall"] = opt(report.recall);
  nlohmann::ordered_json curve = nlohmann::ordered_json::array();
  for (const CurvePoint& p : report.pr_curve) {
    nlohmann::ordered_json row;
    row["threshold"] = p.threshold;
    row["precision"] = opt(p.precision);
    row["recall"] = opt(p.recall);
    curve.push_back(std::move(row));
  }
  doc["pr_curve"] = std::move(curve);
  return doc;
}

Report report_from_json(const nlohmann::json& doc) {
  Report report;
  try {
    report.n_records = doc.at("n_records").get<std::size_t>();
    report.threshold = doc.at("threshold").get<double>();
    for (const auto& row : doc.at("at_k")) {
      report.ks.push_back(row.at("k").get<int>());
      report.p_at_k.push_back(row.at("p_at_k").get<double>());
      report.map_at_k.push_back(row.at("map_at_k").get<double>());
    }
    report.auc = opt_from(doc, "auc");
    report.auc_m = opt_from(doc, "auc_m");
    report.auc_n = opt_from(doc, "auc_n");
    report.precision = opt_from(doc, "precision");
    report.recall = opt_from(doc, "recall");
    if (doc.contains("pr_curve")) {
      for (const auto& row : doc.at("pr_curve")) {
        report.pr_curve.push_back(CurvePoint{row.at("threshold").get<double>(),
                                             opt_from(row, "precision"), opt_from(row, "recall")});
      }
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kConfigError, std::string("report: ") + ex.what());
  }
  return report;
}

std::string format_report(const Report& report) {
  std::string out;
  char line[128];
  std::snprintf(line, sizeof(line), "records    %zu\n", report.n_records);
  out += line;
  std::snprintf(line, sizeof(line), "%-4s %10s %10s\n", "k", "P@k", "MAP@k");
  out += line;
  for (std::size_t i = 0; i < report.ks.size(); ++i) {
    std::snprintf(line, sizeof(line), "%-4d %10.4f %10.4f\n", report.ks[i], report.p_at_k[i],
                  report.map_at_k[i]);
    out += line;
  }
  std::snprintf(line, sizeof(line), "%-12s %10s\n", "AUC", fmt(report.auc).c_str());
  out += line;
  std::snprintf(line, sizeof(line), "%-12s %10s\n", "AUC_M", fmt(report.auc_m).c_str());
  out += line;
  std::snprintf(line, sizeof(line), "%-12s %10s\n", "AUC_N", fmt(report.auc_n).c_str());
  out += line;
  std::snprintf(line, sizeof(line), "%-12s %10s  (theta=%.2f)\n", "precision",
                fmt(report.precision).c_str(), report.threshold);
  out += line;
  std::snprintf(line, sizeof(line), "%-12s %10s\n", "recall", fmt(report.recall).c_str());
  out += line;
  return out;
}

}  // namespace wfkit
