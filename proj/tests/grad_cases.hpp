#pragma once

#include <functional>
#include <vector>

#include "oracles.hpp"
#include "wfkit/model.hpp"

namespace oracle {

struct GradCase {
  const char* name;
  std::function<std::vector<wfkit::Tensor>(wfkit::Rng&)> make;
  std::function<wfkit::Tensor(const std::vector<wfkit::Tensor>&)> f;
};

// One finite-difference case per differentiable tensor op.
std::vector<GradCase> op_grad_cases();

// Small model used by the composed-block cases and the model tests.
wfkit::ModelConfig tiny_model_config();
// Multi-head top-m attention, one attention block, and the whole network.
std::vector<GradCase> model_grad_cases();

}  // namespace oracle
