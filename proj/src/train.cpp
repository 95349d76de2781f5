#include "wfkit/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "wfkit/error.hpp"
#include "wfkit/metrics.hpp"
#include "wfkit/optim.hpp"

namespace wfkit {

namespace {

void check_set(const TrainingSet& set, const ModelConfig& cfg, const char* name) {
  if (set.rows.size() != set.labels.size()) {
    throw Error(ErrorCode::kShapeMismatch, std::string(name) + ": rows and labels differ in count");
  }
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set.rows[i].size() != static_cast<std::size_t>(cfg.feature_len)) {
      throw Error(ErrorCode::kShapeMismatch, std::string(name) + ": feature row " + std::to_string(i) +
                                                 " has length " + std::to_string(set.rows[i].size()));
    }
    if (set.labels[i].size() != static_cast<std::size_t>(cfg.n_sites) + 1) {
      throw Error(ErrorCode::kShapeMismatch, std::string(name) + ": label vector " + std::to_string(i) +
                                                 " has length " + std::to_string(set.labels[i].size()));
    }
  }
}

using Snapshot = std::vector<std::vector<double>>;

Snapshot snapshot(const TransWfModel& model) {
  Snapshot snap;
  for (const NamedTensor& nt : model.state()) {
    snap.emplace_back(nt.tensor.data().begin(), nt.tensor.data().end());
  }
  return snap;
}

void restore(TransWfModel& model, const Snapshot& snap) {
  std::vector<NamedTensor> tensors = model.state();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    tensors[i].tensor = Tensor::from(tensors[i].tensor.shape(), snap[i]);
  }
  model.load_state(tensors);
}

// Mean BCE and MAP@k of inference-mode predictions.
std::pair<double, double> validate(TransWfModel& model, const TrainingSet& set, int map_k) {
  const auto preds = model.predict(set.rows);
  double loss = 0.0;
  double map = 0.0;
  const int k = std::min<int>(map_k, static_cast<int>(model.n_outputs()));
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& p = preds[i].probs;
    double l = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double q = std::clamp(p[j], 1e-12, 1.0 - 1e-12);
      l -= set.labels[i][j] != 0 ? std::log(q) : std::log(1.0 - q);
    }
    loss += l / static_cast<double>(p.size());
    EvalRecord rec;
    rec.y.bits = set.labels[i];
    rec.y_hat = preds[i];
    map += map_at_k(rec, k);
  }
  const double n = static_cast<double>(set.size());
  return {loss / n, map / n};
}

}  // namespace

TrainResult train(const TrainingSet& train_set, const TrainingSet& val_set, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg, Rng& rng) {
  if (train_set.size() == 0) throw Error(ErrorCode::kEmptyDataset, "training set is empty");
  if (train_cfg.epochs < 1 || train_cfg.batch_size < 1 || !(train_cfg.lr > 0.0) ||
      train_cfg.val_map_k < 1) {
    throw Error(ErrorCode::kConfigError, "training epochs, batch size, lr and val_map_k must be positive");
  }
  validate_model_config(model_cfg);
  check_set(train_set, model_cfg, "train");
  check_set(val_set, model_cfg, "validation");
  const TrainingSet& selection_set = val_set.size() > 0 ? val_set : train_set;

  TrainResult result{TransWfModel(model_cfg, rng.next_u64()), {}, 0};
  TransWfModel& model = result.model;
  model.fit_input_transform(train_set.rows);

  const auto d = static_cast<std::size_t>(model_cfg.feature_len);
  const std::size_t n_out = model.n_outputs();
  std::vector<std::vector<double>> inputs;
  inputs.reserve(train_set.size());
  for (const auto& row : train_set.rows) inputs.push_back(model.transform_input(row));

  Adam optimizer(model.parameters(), AdamConfig{train_cfg.lr, 0.9, 0.999, 1e-8, train_cfg.weight_decay});
  Rng shuffle_rng(rng.next_u64());
  Rng dropout_rng(rng.next_u64());
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  double best_map = -1.0;
  Snapshot best;
  int since_best = 0;
  const auto batch_size = static_cast<std::size_t>(train_cfg.batch_size);
  for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t n = std::min(batch_size, order.size() - start);
      std::vector<double> x;
      std::vector<double> y;
      x.reserve(n * d);
      y.reserve(n * n_out);
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t idx = order[start + b];
        x.insert(x.end(), inputs[idx].begin(), inputs[idx].end());
        for (int bit : train_set.labels[idx]) y.push_back(bit != 0 ? 1.0 : 0.0);
      }
      optimizer.zero_grad();
      const Tensor logits = model.logits(Tensor::from({n, 1, d}, std::move(x)), true, dropout_rng);
      const Tensor loss = bce_with_logits(logits, Tensor::from({n, n_out}, std::move(y)));
      backward(loss);
      optimizer.step();
      loss_sum += loss.item();
      ++batches;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(batches);
    std::tie(stats.val_loss, stats.val_map) = validate(model, selection_set, train_cfg.val_map_k);
    result.history.push_back(stats);
    if (stats.val_map > best_map) {
      best_map = stats.val_map;
      best = snapshot(model);
      result.best_epoch = epoch;
      since_best = 0;
    } else if (train_cfg.patience > 0 && ++since_best >= train_cfg.patience) {
      break;
    }
  }
  restore(model, best);
  return result;
}

std::string history_to_csv(const std::vector<EpochStats>& history) {
  std::string out = "epoch,train_loss,val_loss,val_MAP\n";
  char line[128];
  for (const EpochStats& e : history) {
    std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_loss,
                  e.val_map);
    out += line;
  }
  return out;
}

}  // namespace wfkit
