#pragma once

#include <cstddef>
#include <functional>

namespace wfkit {

// Worker count used by parallel_for; 1 runs inline. Results never depend on
// it: every index is computed independently and reductions stay sequential.
void set_num_threads(std::size_t n);
std::size_t num_threads();

// Calls fn(i) for i in [0, n), statically chunked across workers.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace wfkit
