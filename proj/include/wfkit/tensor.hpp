#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "wfkit/rng.hpp"

namespace wfkit {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// One vertex of the autodiff graph. Leaves have no parents; interior nodes
// keep their parents alive and know how to push their gradient into them.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::span<double> ensure_grad();
};

// Shared handle to a Node. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  // Empty when no gradient has been accumulated.
  std::span<const double> grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad.assign(node_->grad.size(), 0.0); }
  double item() const;
  double at(std::size_t i) const { return node_->value.at(i); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Nodes reachable from a root, parents before children.
class Graph {
 public:
  static Graph trace(const Tensor& root);
  const std::vector<Node*>& order() const { return order_; }

 private:
  std::vector<Node*> order_;
};

// Populates .grad of every node feeding `loss` that requires gradients.
// Gradients accumulate, so zero parameters between steps. Throws
// Error{kNotScalarLoss}.
void backward(const Tensor& loss);

// ---- elementwise ----------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// b has shape [c] and is added to every row of a's trailing dimension.
Tensor add_bias(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// ---- reductions -----------------------------------------------------------
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// [B x L x C] -> [B x C], average over L.
Tensor mean_over_sequence(const Tensor& a);

// ---- shape ----------------------------------------------------------------
Tensor reshape(const Tensor& a, Shape shape);
// Swaps the last two axes of a rank-2 or rank-3 tensor.
Tensor transpose(const Tensor& a);
// Concatenates along the last axis; leading axes must match.
Tensor concat_last(const std::vector<Tensor>& parts);

// ---- linear algebra -------------------------------------------------------
// [m x k] . [k x n], [B x m x k] . [B x k x n], or [B x m x k] . [k x n].
// Throws Error{kShapeMismatch}.
Tensor matmul(const Tensor& a, const Tensor& b);

enum class Padding { kSame, kValid };

// Cross-correlation. x is [C_in x L] or [B x C_in x L]; w is [C_out x C_in x k];
// bias (optional) is [C_out]. Same padding zero-pads (k - 1) / 2 on the left.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, Padding padding);
// L' = floor((L - window) / stride) + 1; gradient goes to the first argmax.
Tensor maxpool1d(const Tensor& x, std::size_t window, std::size_t stride);

// ---- normalization & attention pieces --------------------------------------
// Softmax over the last axis, max-subtracted.
Tensor softmax_rowwise(const Tensor& x);
// Keeps the m largest entries of each row (last axis), lowest index first on
// ties, and writes mask_value elsewhere. Gradient reaches kept entries only.
Tensor topm_mask(const Tensor& x, std::size_t m, double mask_value);
// Per row of the last axis: (x - mean) * g / sqrt(var + eps) + b with the
// population variance.
Tensor layer_norm(const Tensor& x, const Tensor& g, const Tensor& b, double eps = 1e-5);

// Running statistics are plain tensors updated in place while training.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};
// x is [B x C x L]; statistics per channel over (B, L).
Tensor batch_norm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    BatchNormState& state, bool training);

// ---- regularizers ---------------------------------------------------------
// Inverted dropout. Identity when !training or rate == 0. Throws
// Error{kBadRate} unless 0 <= rate < 1.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training);
// Zeros whole samples (axis 0) of a residual branch and rescales survivors.
// rate == 1 closes every gate. Throws Error{kBadRate} unless 0 <= rate <= 1.
Tensor droppath(const Tensor& x, double rate, Rng& rng, bool training);

// ---- losses ---------------------------------------------------------------
// Mean over all entries of binary cross-entropy between sigmoid(logits) and
// targets, computed stably from the logits.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

}  // namespace wfkit
