#pragma once

#include <vector>

#include "wfkit/tensor.hpp"

namespace wfkit {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW-style)
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg);

  // Applies one update from the accumulated gradients; parameters without a
  // gradient are left untouched.
  void step();
  void zero_grad();
  long steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long t_ = 0;
};

}  // namespace wfkit
