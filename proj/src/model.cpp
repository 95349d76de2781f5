#include "wfkit/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "wfkit/error.hpp"

namespace wfkit {

namespace {

constexpr int kCountFields[] = {kOutCount, kOutBursts, kInCount, kInBursts};

Tensor init_normal(Shape shape, double stddev, Rng& rng) {
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = stddev * rng.normal();
  return Tensor::from(std::move(shape), std::move(values), true);
}

Tensor ones(std::size_t n) { return Tensor::full({n}, 1.0, true); }
Tensor zeros(std::size_t n) { return Tensor::zeros({n}, true); }

BatchNormState bn_state(std::size_t channels, double momentum) {
  return BatchNormState{Tensor::zeros({channels}), Tensor::full({channels}, 1.0), momentum, 1e-5};
}

void config_error(const std::string& what) { throw Error(ErrorCode::kConfigError, what); }

Tensor sinusoidal_table(std::size_t batch, std::size_t len, std::size_t dim) {
  std::vector<double> table(batch * len * dim);
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
      const double v = i % 2 == 0 ? std::sin(static_cast<double>(pos) * freq)
                                  : std::cos(static_cast<double>(pos) * freq);
      for (std::size_t b = 0; b < batch; ++b) table[(b * len + pos) * dim + i] = v;
    }
  }
  return Tensor::from({batch, len, dim}, std::move(table));
}

}  // namespace

void validate_model_config(const ModelConfig& cfg) {
  const auto& p = cfg.profiler;
  const auto& a = cfg.attention;
  if (cfg.n_sites < 1) config_error("n_sites must be >= 1");
  if (cfg.feature_len <= 0 || cfg.feature_len % kValuesPerSegment != 0) {
    config_error("feature_len must be a positive multiple of 8");
  }
  if (p.blocks < 1 || p.kernel_size < 1 || p.pool_window < 1 || p.pool_stride < 1 ||
      p.channels_out < 1) {
    config_error("profiler sizes must be positive");
  }
  if (!(p.dropout >= 0.0 && p.dropout < 1.0)) config_error("profiler dropout must be in [0, 1)");
  if (a.heads < 1 || a.layers < 0 || a.m < 1 || a.model_dim < 1 || a.mlp_ratio < 1) {
    config_error("attention sizes must be positive");
  }
  if (a.model_dim % a.heads != 0) config_error("model_dim must be divisible by heads");
  if (p.channels_out != a.model_dim) config_error("profiler channels_out must equal model_dim");
  if (!(a.dropout >= 0.0 && a.dropout < 1.0)) config_error("attention dropout must be in [0, 1)");
  if (!(a.droppath >= 0.0 && a.droppath <= 1.0)) config_error("droppath must be in [0, 1]");
  if (profiler_output_length(cfg) < 1) config_error("feature_len too short for the profiler");
}

std::size_t profiler_output_length(const ModelConfig& cfg) {
  long len = cfg.feature_len;
  for (int b = 0; b < cfg.profiler.blocks; ++b) {
    if (len < cfg.profiler.pool_window) return 0;
    len = (len - cfg.profiler.pool_window) / cfg.profiler.pool_stride + 1;
  }
  return static_cast<std::size_t>(len);
}

nlohmann::ordered_json model_config_to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json doc;
  doc["n_sites"] = cfg.n_sites;
  doc["feature_len"] = cfg.feature_len;
  doc["log1p_counts"] = cfg.log1p_counts;
  doc["standardize"] = cfg.standardize;
  doc["bn_momentum"] = cfg.bn_momentum;
  auto& p = doc["profiler"];
  p["blocks"] = cfg.profiler.blocks;
  p["kernel_size"] = cfg.profiler.kernel_size;
  p["pool_window"] = cfg.profiler.pool_window;
  p["pool_stride"] = cfg.profiler.pool_stride;
  p["channels_out"] = cfg.profiler.channels_out;
  p["dropout"] = cfg.profiler.dropout;
  auto& a = doc["attention"];
  a["heads"] = cfg.attention.heads;
  a["layers"] = cfg.attention.layers;
  a["m"] = cfg.attention.m;
  a["model_dim"] = cfg.attention.model_dim;
  a["mask_value"] = cfg.attention.mask_value;
  a["dropout"] = cfg.attention.dropout;
  a["droppath"] = cfg.attention.droppath;
  a["ln_eps"] = cfg.attention.ln_eps;
  a["mlp_ratio"] = cfg.attention.mlp_ratio;
  a["positional_encoding"] = cfg.attention.positional_encoding;
  return doc;
}

ModelConfig model_config_from_json(const nlohmann::json& doc) {
  ModelConfig cfg;
  try {
    cfg.n_sites = doc.value("n_sites", cfg.n_sites);
    cfg.feature_len = doc.value("feature_len", cfg.feature_len);
    cfg.log1p_counts = doc.value("log1p_counts", cfg.log1p_counts);
    cfg.standardize = doc.value("standardize", cfg.standardize);
    cfg.bn_momentum = doc.value("bn_momentum", cfg.bn_momentum);
    if (doc.contains("profiler")) {
      const auto& p = doc["profiler"];
      auto& c = cfg.profiler;
      c.blocks = p.value("blocks", c.blocks);
      c.kernel_size = p.value("kernel_size", c.kernel_size);
      c.pool_window = p.value("pool_window", c.pool_window);
      c.pool_stride = p.value("pool_stride", c.pool_stride);
      c.channels_out = p.value("channels_out", c.channels_out);
      c.dropout = p.value("dropout", c.dropout);
    }
    if (doc.contains("attention")) {
      const auto& a = doc["attention"];
      auto& c = cfg.attention;
      c.heads = a.value("heads", c.heads);
      c.layers = a.value("layers", c.layers);
      c.m = a.value("m", c.m);
      c.model_dim = a.value("model_dim", c.model_dim);
      c.mask_value = a.value("mask_value", c.mask_value);
      c.dropout = a.value("dropout", c.dropout);
      c.droppath = a.value("droppath", c.droppath);
      c.ln_eps = a.value("ln_eps", c.ln_eps);
      c.mlp_ratio = a.value("mlp_ratio", c.mlp_ratio);
      c.positional_encoding = a.value("positional_encoding", c.positional_encoding);
    }
  } catch (const nlohmann::json::exception& ex) {
    config_error(std::string("model config: ") + ex.what());
  }
  return cfg;
}

// ---------------------------------------------------------------------------

Tensor topm_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t m,
                      double mask_value) {
  if (q.rank() != k.rank() || q.rank() != v.rank() || (q.rank() != 2 && q.rank() != 3) ||
      q.shape() != k.shape() || q.shape()[q.rank() - 2] != v.shape()[v.rank() - 2] ||
      (q.rank() == 3 && q.dim(0) != v.dim(0))) {
    throw Error(ErrorCode::kShapeMismatch, "topm_attention: Q " + shape_str(q.shape()) + ", K " +
                                               shape_str(k.shape()) + ", V " + shape_str(v.shape()));
  }
  const double width = static_cast<double>(q.shape().back());
  Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(width));
  return matmul(softmax_rowwise(topm_mask(scores, m, mask_value)), v);
}

Tensor multihead_topm(const Tensor& x, const MultiHeadParams& params, const AttentionConfig& cfg) {
  const std::size_t heads = params.head_q.size();
  if (heads == 0 || params.head_k.size() != heads || params.head_v.size() != heads) {
    throw Error(ErrorCode::kShapeMismatch, "multihead_topm: inconsistent head parameters");
  }
  const Tensor q = matmul(x, params.wq);
  const Tensor k = matmul(x, params.wk);
  const Tensor v = matmul(x, params.wv);
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    outputs.push_back(topm_attention(matmul(q, params.head_q[h]), matmul(k, params.head_k[h]),
                                     matmul(v, params.head_v[h]), static_cast<std::size_t>(cfg.m),
                                     cfg.mask_value));
  }
  return matmul(heads == 1 ? outputs.front() : concat_last(outputs), params.wo);
}

// ---------------------------------------------------------------------------

TransWfModel::TransWfModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  validate_model_config(cfg_);
  Rng rng(derive_seed(seed, "model-init"));
  const auto& p = cfg_.profiler;
  const auto c = static_cast<std::size_t>(p.channels_out);
  const auto k = static_cast<std::size_t>(p.kernel_size);
  std::size_t c_in = 1;
  for (int b = 0; b < p.blocks; ++b) {
    ConvBlockParams block;
    block.conv1 = init_normal({c, c_in, k}, std::sqrt(2.0 / static_cast<double>(c_in * k)), rng);
    block.conv2 = init_normal({c, c, k}, std::sqrt(2.0 / static_cast<double>(c * k)), rng);
    block.bn1_gamma = ones(c);
    block.bn1_beta = zeros(c);
    block.bn2_gamma = ones(c);
    block.bn2_beta = zeros(c);
    block.bn1 = bn_state(c, cfg_.bn_momentum);
    block.bn2 = bn_state(c, cfg_.bn_momentum);
    if (c_in != c) {
      block.proj_w = init_normal({c, c_in, 1}, std::sqrt(1.0 / static_cast<double>(c_in)), rng);
      block.proj_b = zeros(c);
    }
    conv_blocks_.push_back(std::move(block));
    c_in = c;
  }

  const auto& a = cfg_.attention;
  const auto d = static_cast<std::size_t>(a.model_dim);
  const auto dh = d / static_cast<std::size_t>(a.heads);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (int l = 0; l < a.layers; ++l) {
    AttentionBlockParams block;
    auto& mh = block.attention;
    mh.wq = init_normal({d, d}, sd, rng);
    mh.wk = init_normal({d, d}, sd, rng);
    mh.wv = init_normal({d, d}, sd, rng);
    for (int h = 0; h < a.heads; ++h) {
      mh.head_q.push_back(init_normal({d, dh}, sd, rng));
      mh.head_k.push_back(init_normal({d, dh}, sd, rng));
      mh.head_v.push_back(init_normal({d, dh}, sd, rng));
    }
    mh.wo = init_normal({d, d}, sd, rng);
    block.ln_gain = ones(d);
    block.ln_bias = zeros(d);
    const std::size_t hidden = d * static_cast<std::size_t>(a.mlp_ratio);
    block.mlp_w1 = init_normal({d, hidden}, std::sqrt(2.0 / static_cast<double>(d)), rng);
    block.mlp_b1 = zeros(hidden);
    block.mlp_w2 = init_normal({hidden, d}, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
    block.mlp_b2 = zeros(d);
    attention_blocks_.push_back(std::move(block));
  }
  head_w_ = init_normal({d, n_outputs()}, sd, rng);
  head_b_ = zeros(n_outputs());
  input_mean_.fill(0.0);
  input_std_.fill(1.0);
}

namespace {

template <typename T>
std::vector<double> scale_row(std::span<const T> row, bool log1p_counts, bool standardize,
                              const std::array<double, kValuesPerSegment>& mean,
                              const std::array<double, kValuesPerSegment>& stddev) {
  std::vector<double> out(row.begin(), row.end());
  if (log1p_counts) {
    for (std::size_t s = 0; s + kValuesPerSegment <= out.size(); s += kValuesPerSegment) {
      for (int f : kCountFields) out[s + f] = std::log1p(out[s + f]);
    }
  }
  if (standardize) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      const std::size_t f = i % kValuesPerSegment;
      out[i] = (out[i] - mean[f]) / stddev[f];
    }
  }
  return out;
}

}  // namespace

void TransWfModel::fit_input_transform(const std::vector<std::span<const float>>& rows) {
  input_mean_.fill(0.0);
  input_std_.fill(1.0);
  if (!cfg_.standardize || rows.empty()) return;
  std::array<double, kValuesPerSegment> sum{}, sum_sq{};
  std::size_t count = 0;
  for (const auto& row : rows) {
    // Statistics are taken after log1p only.
    const std::vector<double> scaled =
        scale_row(row, cfg_.log1p_counts, false, input_mean_, input_std_);
    for (std::size_t i = 0; i < scaled.size(); ++i) {
      sum[i % kValuesPerSegment] += scaled[i];
      sum_sq[i % kValuesPerSegment] += scaled[i] * scaled[i];
    }
    count += scaled.size() / kValuesPerSegment;
  }
  for (int f = 0; f < kValuesPerSegment; ++f) {
    const double mu = sum[f] / static_cast<double>(count);
    const double var = std::max(0.0, sum_sq[f] / static_cast<double>(count) - mu * mu);
    input_mean_[f] = mu;
    input_std_[f] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
}


std::vector<double> TransWfModel::transform_input(std::span<const float> row) const {
  return scale_row(row, cfg_.log1p_counts, cfg_.standardize, input_mean_, input_std_);
}

std::vector<double> TransWfModel::transform_input(std::span<const double> row) const {
  return scale_row(row, cfg_.log1p_counts, cfg_.standardize, input_mean_, input_std_);
}

Tensor TransWfModel::local_profile(const Tensor& input, bool training, Rng& rng) {
  if (input.rank() != 3 || input.dim(1) != 1 ||
      input.dim(2) != static_cast<std::size_t>(cfg_.feature_len)) {
    throw Error(ErrorCode::kShapeMismatch,
                "local_profile expects [B x 1 x " + std::to_string(cfg_.feature_len) + "], got " +
                    shape_str(input.shape()));
  }
  const auto& p = cfg_.profiler;
  Tensor x = input;
  for (ConvBlockParams& block : conv_blocks_) {
    Tensor h = conv1d(x, block.conv1, Tensor(), Padding::kSame);
    h = relu(batch_norm1d(h, block.bn1_gamma, block.bn1_beta, block.bn1, training));
    h = conv1d(h, block.conv2, Tensor(), Padding::kSame);
    h = batch_norm1d(h, block.bn2_gamma, block.bn2_beta, block.bn2, training);
    const Tensor skip = block.proj_w.defined() ? conv1d(x, block.proj_w, block.proj_b, Padding::kSame) : x;
    h = relu(add(h, skip));
    h = maxpool1d(h, static_cast<std::size_t>(p.pool_window), static_cast<std::size_t>(p.pool_stride));
    x = dropout(h, p.dropout, rng, training);
  }
  return transpose(x);
}

Tensor TransWfModel::attend(const Tensor& local, bool training, Rng& rng) {
  const auto& a = cfg_.attention;
  Tensor x = local;
  if (x.rank() == 2) x = reshape(x, {1, x.dim(0), x.dim(1)});
  if (x.rank() != 3 || x.dim(2) != static_cast<std::size_t>(a.model_dim)) {
    throw Error(ErrorCode::kShapeMismatch, "attention input " + shape_str(local.shape()) +
                                               " does not end in model_dim " +
                                               std::to_string(a.model_dim));
  }
  if (a.positional_encoding) x = add(x, sinusoidal_table(x.dim(0), x.dim(1), x.dim(2)));
  for (AttentionBlockParams& block : attention_blocks_) {
    Tensor branch = multihead_topm(x, block.attention, a);
    branch = droppath(dropout(branch, a.dropout, rng, training), a.droppath, rng, training);
    const Tensor y = layer_norm(add(x, branch), block.ln_gain, block.ln_bias, a.ln_eps);
    Tensor mlp = relu(add_bias(matmul(y, block.mlp_w1), block.mlp_b1));
    mlp = add_bias(matmul(mlp, block.mlp_w2), block.mlp_b2);
    x = add(y, droppath(mlp, a.droppath, rng, training));
  }
  return x;
}

Tensor TransWfModel::head(const Tensor& attended) {
  return add_bias(matmul(mean_over_sequence(attended), head_w_), head_b_);
}

Tensor TransWfModel::logits(const Tensor& input, bool training, Rng& rng) {
  return head(attend(local_profile(input, training, rng), training, rng));
}

std::vector<PredictionVector> TransWfModel::predict(const std::vector<std::span<const float>>& rows,
                                                    std::size_t batch_size) {
  NoGradGuard no_grad;
  Rng unused(0);
  std::vector<PredictionVector> out;
  out.reserve(rows.size());
  const auto d = static_cast<std::size_t>(cfg_.feature_len);
  for (std::size_t start = 0; start < rows.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, rows.size() - start);
    std::vector<double> values;
    values.reserve(n * d);
    for (std::size_t i = 0; i < n; ++i) {
      if (rows[start + i].size() != d) {
        throw Error(ErrorCode::kShapeMismatch, "feature row length " +
                                                   std::to_string(rows[start + i].size()) +
                                                   " != feature_len " + std::to_string(d));
      }
      const auto scaled = transform_input(rows[start + i]);
      values.insert(values.end(), scaled.begin(), scaled.end());
    }
    const Tensor probs = sigmoid(logits(Tensor::from({n, 1, d}, std::move(values)), false, unused));
    const std::size_t k = n_outputs();
    for (std::size_t i = 0; i < n; ++i) {
      PredictionVector p;
      p.probs.assign(probs.data().begin() + static_cast<std::ptrdiff_t>(i * k),
                     probs.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
      out.push_back(std::move(p));
    }
  }
  return out;
}

PredictionVector TransWfModel::predict(const FeatureVector& features) {
  std::vector<float> row(features.values.begin(), features.values.end());
  return predict(std::vector<std::span<const float>>{row}).front();
}

std::vector<Tensor> TransWfModel::parameters() const {
  std::vector<Tensor> params;
  for (const NamedTensor& nt : state()) {
    if (nt.tensor.requires_grad()) params.push_back(nt.tensor);
  }
  return params;
}

std::vector<NamedTensor> TransWfModel::state() const {
  std::vector<NamedTensor> out;
  for (std::size_t b = 0; b < conv_blocks_.size(); ++b) {
    const ConvBlockParams& blk = conv_blocks_[b];
    const std::string pre = "profiler." + std::to_string(b) + ".";
    out.push_back({pre + "conv1", blk.conv1});
    out.push_back({pre + "bn1.gamma", blk.bn1_gamma});
    out.push_back({pre + "bn1.beta", blk.bn1_beta});
    out.push_back({pre + "bn1.running_mean", blk.bn1.running_mean});
    out.push_back({pre + "bn1.running_var", blk.bn1.running_var});
    out.push_back({pre + "conv2", blk.conv2});
    out.push_back({pre + "bn2.gamma", blk.bn2_gamma});
    out.push_back({pre + "bn2.beta", blk.bn2_beta});
    out.push_back({pre + "bn2.running_mean", blk.bn2.running_mean});
    out.push_back({pre + "bn2.running_var", blk.bn2.running_var});
    if (blk.proj_w.defined()) {
      out.push_back({pre + "proj.w", blk.proj_w});
      out.push_back({pre + "proj.b", blk.proj_b});
    }
  }
  for (std::size_t l = 0; l < attention_blocks_.size(); ++l) {
    const AttentionBlockParams& blk = attention_blocks_[l];
    const std::string pre = "attention." + std::to_string(l) + ".";
    out.push_back({pre + "wq", blk.attention.wq});
    out.push_back({pre + "wk", blk.attention.wk});
    out.push_back({pre + "wv", blk.attention.wv});
    for (std::size_t h = 0; h < blk.attention.head_q.size(); ++h) {
      const std::string hp = pre + "head" + std::to_string(h) + ".";
      out.push_back({hp + "q", blk.attention.head_q[h]});
      out.push_back({hp + "k", blk.attention.head_k[h]});
      out.push_back({hp + "v", blk.attention.head_v[h]});
    }
    out.push_back({pre + "wo", blk.attention.wo});
    out.push_back({pre + "ln.gain", blk.ln_gain});
    out.push_back({pre + "ln.bias", blk.ln_bias});
    out.push_back({pre + "mlp.w1", blk.mlp_w1});
    out.push_back({pre + "mlp.b1", blk.mlp_b1});
    out.push_back({pre + "mlp.w2", blk.mlp_w2});
    out.push_back({pre + "mlp.b2", blk.mlp_b2});
  }
  out.push_back({"head.w", head_w_});
  out.push_back({"head.b", head_b_});
  out.push_back({"input.mean", Tensor::from({kValuesPerSegment},
                                            std::vector<double>(input_mean_.begin(), input_mean_.end()))});
  out.push_back({"input.std", Tensor::from({kValuesPerSegment},
                                           std::vector<double>(input_std_.begin(), input_std_.end()))});
  return out;
}

void TransWfModel::load_state(const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const Tensor*> by_name;
  for (const NamedTensor& nt : tensors) by_name[nt.name] = &nt.tensor;
  for (NamedTensor& target : state()) {
    auto it = by_name.find(target.name);
    if (it == by_name.end()) {
      throw Error(ErrorCode::kConfigError, "checkpoint is missing tensor " + target.name);
    }
    const Tensor& src = *it->second;
    if (src.shape() != target.tensor.shape()) {
      throw Error(ErrorCode::kShapeMismatch, target.name + ": checkpoint " + shape_str(src.shape()) +
                                                 " vs model " + shape_str(target.tensor.shape()));
    }
    if (target.name == "input.mean") {
      std::copy(src.data().begin(), src.data().end(), input_mean_.begin());
    } else if (target.name == "input.std") {
      std::copy(src.data().begin(), src.data().end(), input_std_.begin());
    } else {
      std::copy(src.data().begin(), src.data().end(), target.tensor.mutable_data().begin());
    }
  }
}

void TransWfModel::save(const std::filesystem::path& json_path) const {
  save_checkpoint(json_path, state(), model_config_to_json(cfg_));
}

TransWfModel TransWfModel::load(const std::filesystem::path& json_path) {
  const Checkpoint ckpt = load_checkpoint(json_path);
  TransWfModel model(model_config_from_json(ckpt.config), 0);
  model.load_state(ckpt.tensors);
  return model;
}

// ---------------------------------------------------------------------------

std::vector<PredictionVector> identify(const Tensor& local_features, TransWfModel& model,
                                       bool training, Rng& rng) {
  const Tensor probs = sigmoid(model.head(model.attend(local_features, training, rng)));
  const std::size_t k = model.n_outputs();
  std::vector<PredictionVector> out(probs.numel() / k);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].probs.assign(probs.data().begin() + static_cast<std::ptrdiff_t>(i * k),
                        probs.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
  }
  return out;
}

std::vector<int> predict_set(const PredictionVector& pred, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw Error(ErrorCode::kBadThreshold, "threshold must lie in (0, 1)");
  }
  std::vector<int> labels;
  for (std::size_t i = 0; i < pred.probs.size(); ++i) {
    if (pred.probs[i] >= threshold) labels.push_back(static_cast<int>(i));
  }
  return labels;
}

}  // namespace wfkit
