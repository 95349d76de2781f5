#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "wfkit/aggregate.hpp"
#include "wfkit/checkpoint.hpp"
#include "wfkit/rng.hpp"
#include "wfkit/tensor.hpp"

namespace wfkit {

struct LocalProfilerConfig {
  int blocks = 4;
  int kernel_size = 7;
  int pool_window = 8;
  int pool_stride = 4;
  int channels_out = 256;
  double dropout = 0.1;
};

struct AttentionConfig {
  int heads = 2;
  int layers = 4;
  int m = 20;
  int model_dim = 256;
  double mask_value = -1e9;
  double dropout = 0.1;
  double droppath = 0.1;
  double ln_eps = 1e-5;
  int mlp_ratio = 4;
  bool positional_encoding = false;
};

struct ModelConfig {
  int n_sites = 0;  // the model emits n_sites + 1 probabilities
  int feature_len = 8000;
  LocalProfilerConfig profiler;
  AttentionConfig attention;
  // Input scaling: log1p on the packet/burst count fields, then optional
  // per-field standardization with training-set statistics.
  bool log1p_counts = true;
  bool standardize = false;
  double bn_momentum = 0.1;
};

// Throws Error{kConfigError}.
void validate_model_config(const ModelConfig& cfg);
// Sequence length the profiler hands to attention for `feature_len` inputs.
std::size_t profiler_output_length(const ModelConfig& cfg);

nlohmann::ordered_json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& doc);

// Independent per-label probabilities; not a simplex.
struct PredictionVector {
  std::vector<double> probs;
};

// softmax(topm_mask(Q K^T / sqrt(d))) V with d the width of Q. Q, K, V are
// [b x d] or [B x b x d]. Throws Error{kShapeMismatch}.
Tensor topm_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t m,
                      double mask_value = -1e9);

struct MultiHeadParams {
  Tensor wq, wk, wv;                   // [d_m x d]
  std::vector<Tensor> head_q, head_k, head_v;  // per head [d x d_h]
  Tensor wo;                           // [d x d]
};

// Shared projections, per-head projections and top-m attention, concatenated
// heads, output projection. X is [b x d_m] or [B x b x d_m].
Tensor multihead_topm(const Tensor& x, const MultiHeadParams& params, const AttentionConfig& cfg);

struct AttentionBlockParams {
  MultiHeadParams attention;
  Tensor ln_gain, ln_bias;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct ConvBlockParams {
  Tensor conv1, conv2;  // [C_out x C_in x k], [C_out x C_out x k]
  Tensor bn1_gamma, bn1_beta, bn2_gamma, bn2_beta;
  BatchNormState bn1, bn2;
  Tensor proj_w, proj_b;  // 1x1 projection, only when C_in != C_out
};

// Shared-trunk network: local profiler, stacked top-m attention blocks,
// mean-pool over the sequence, one logit per label.
class TransWfModel {
 public:
  TransWfModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::size_t n_outputs() const { return static_cast<std::size_t>(cfg_.n_sites) + 1; }

  // Fits standardization statistics (when enabled) on training rows.
  void fit_input_transform(const std::vector<std::span<const float>>& rows);
  // Raw aggregation features -> scaled values, row by row.
  std::vector<double> transform_input(std::span<const float> row) const;
  std::vector<double> transform_input(std::span<const double> row) const;

  // [B x 1 x d] -> [B x L' x C].
  Tensor local_profile(const Tensor& input, bool training, Rng& rng);
  // [B x b x d_m] -> [B x b x d] through all attention blocks.
  Tensor attend(const Tensor& local, bool training, Rng& rng);
  // [B x b x d] -> [B x (N+1)] logits.
  Tensor head(const Tensor& attended);
  // Full forward from scaled inputs [B x 1 x d] to logits.
  Tensor logits(const Tensor& input, bool training, Rng& rng);

  // Inference on raw features; deterministic.
  std::vector<PredictionVector> predict(const std::vector<std::span<const float>>& rows,
                                        std::size_t batch_size = 64);
  PredictionVector predict(const FeatureVector& features);

  std::vector<Tensor> parameters() const;
  // Parameters, batch-norm running statistics and input statistics.
  std::vector<NamedTensor> state() const;
  void load_state(const std::vector<NamedTensor>& tensors);

  std::vector<ConvBlockParams>& conv_blocks() { return conv_blocks_; }
  std::vector<AttentionBlockParams>& attention_blocks() { return attention_blocks_; }
  Tensor& head_weight() { return head_w_; }
  Tensor& head_bias() { return head_b_; }

  void save(const std::filesystem::path& json_path) const;
  static TransWfModel load(const std::filesystem::path& json_path);

 private:
  ModelConfig cfg_;
  std::vector<ConvBlockParams> conv_blocks_;
  std::vector<AttentionBlockParams> attention_blocks_;
  Tensor head_w_, head_b_;
  std::array<double, kValuesPerSegment> input_mean_{};
  std::array<double, kValuesPerSegment> input_std_{};
};

// X is one session's local features [b x d_m] (or a batch [B x b x d_m]);
// returns one PredictionVector per session.
std::vector<PredictionVector> identify(const Tensor& local_features, TransWfModel& model,
                                       bool training, Rng& rng);

// {i : probs[i] >= threshold}. Throws Error{kBadThreshold} unless 0 < threshold < 1.
std::vector<int> predict_set(const PredictionVector& pred, double threshold = 0.5);

}  // namespace wfkit
