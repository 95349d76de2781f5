#pragma once

// Independent reference implementations used by the unit and acceptance tests.

#include <functional>
#include <optional>
#include <vector>

#include "wfkit/aggregate.hpp"
#include "wfkit/metrics.hpp"
#include "wfkit/rng.hpp"
#include "wfkit/tensor.hpp"
#include "wfkit/trace.hpp"

namespace oracle {

// Norm-wise relative error ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-12)
// of d sum(f(inputs) * R) / d input, worst over inputs. R is a fixed random
// weighting so every output element carries a distinct cotangent.
double gradcheck(const std::function<wfkit::Tensor(const std::vector<wfkit::Tensor>&)>& f,
                 std::vector<wfkit::Tensor> inputs, std::uint64_t seed = 1, double step = 1e-5);

wfkit::Tensor random_tensor(wfkit::Shape shape, wfkit::Rng& rng, double scale = 1.0,
                            bool requires_grad = true);

// Straightforward O(segments x events) recomputation of the aggregated features.
std::vector<double> brute_aggregate(const wfkit::Trace& trace, double interval, int feature_len);

// Random trace with a mix of bursts, ties and empty stretches.
wfkit::Trace random_trace(wfkit::Rng& rng, std::size_t max_events, double max_time);

double brute_precision_at_k(const std::vector<int>& y, const std::vector<double>& p, int k);
double brute_map_at_k(const std::vector<int>& y, const std::vector<double>& p, int k);
// Pairwise AUC with 1/2 credit for ties; returns a rational as num / den.
std::pair<long long, long long> brute_auc_twice(const std::vector<int>& y, const std::vector<double>& p);

// softmax(Q K^T / sqrt(d)) V with plain loops; Q, K, V are [b x d].
std::vector<double> vanilla_attention(const wfkit::Tensor& q, const wfkit::Tensor& k, const wfkit::Tensor& v);

// Counts TP/FP/FN for one label; nullopt where the ratio is undefined.
std::pair<std::optional<double>, std::optional<double>> brute_precision_recall(
    const std::vector<int>& y, const std::vector<double>& p, double threshold);

}  // namespace oracle
