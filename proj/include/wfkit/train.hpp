#pragma once

#include <span>
#include <string>
#include <vector>

#include "wfkit/model.hpp"
#include "wfkit/rng.hpp"

namespace wfkit {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.0;
  int patience = 5;  // epochs without validation improvement; 0 disables
  int val_map_k = 2;
};

// Non-owning view of feature rows and their multi-hot targets.
struct TrainingSet {
  std::vector<std::span<const float>> rows;
  std::vector<std::vector<int>> labels;

  std::size_t size() const { return rows.size(); }
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_map = 0.0;
};

struct TrainResult {
  TransWfModel model;
  std::vector<EpochStats> history;
  int best_epoch = 0;
};

// Minimizes the mean per-label binary cross-entropy with Adam and returns the
// weights from the epoch with the best validation MAP@val_map_k. An empty
// validation set falls back to the training set. Throws
// Error{kEmptyDataset | kShapeMismatch | kConfigError}.
TrainResult train(const TrainingSet& train_set, const TrainingSet& val_set, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg, Rng& rng);

// Columns: epoch,train_loss,val_loss,val_MAP
std::string history_to_csv(const std::vector<EpochStats>& history);

}  // namespace wfkit
