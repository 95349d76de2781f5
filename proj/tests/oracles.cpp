#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace oracle {

using wfkit::Direction;
using wfkit::Tensor;

Tensor random_tensor(wfkit::Shape shape, wfkit::Rng& rng, double scale, bool requires_grad) {
  std::vector<double> v(wfkit::shape_numel(shape));
  for (double& x : v) x = scale * rng.uniform(-1.0, 1.0);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

double gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
                 std::uint64_t seed, double step) {
  wfkit::Rng rng(seed);
  const Tensor probe = f(inputs);
  const Tensor weights = random_tensor(probe.shape(), rng, 1.0, false);
  auto objective = [&] { return wfkit::sum(wfkit::mul(f(inputs), weights)); };

  for (Tensor& t : inputs) t.zero_grad();
  wfkit::backward(objective());
  double worst = 0.0;
  for (Tensor& t : inputs) {
    if (!t.requires_grad()) continue;
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    analytic.resize(t.numel(), 0.0);
    std::vector<double> numeric(t.numel());
    {
      wfkit::NoGradGuard guard;
      for (std::size_t i = 0; i < t.numel(); ++i) {
        const double saved = t.data()[i];
        t.mutable_data()[i] = saved + step;
        const double up = objective().item();
        t.mutable_data()[i] = saved - step;
        const double down = objective().item();
        t.mutable_data()[i] = saved;
        numeric[i] = (up - down) / (2.0 * step);
      }
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    worst = std::max(worst, std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12}));
  }
  return worst;
}

std::vector<double> brute_aggregate(const wfkit::Trace& trace, double interval, int feature_len) {
  const int segments = feature_len / 8;
  std::vector<double> out(static_cast<std::size_t>(feature_len), 0.0);
  for (int s = 0; s < segments; ++s) {
    std::vector<wfkit::PacketEvent> seg;
    for (const auto& e : trace.events) {
      if (static_cast<long>(std::floor(e.time / interval)) == s) seg.push_back(e);
    }
    for (int side = 0; side < 2; ++side) {
      const Direction dir = side == 0 ? Direction::kOutgoing : Direction::kIncoming;
      std::vector<double> times;
      for (const auto& e : seg) {
        if (e.direction == dir) times.push_back(e.time);
      }
      double iat = 0.0;
      if (times.size() >= 2) {
        for (std::size_t i = 1; i < times.size(); ++i) iat += times[i] - times[i - 1];
        iat /= static_cast<double>(times.size() - 1);
      }
      // A burst starts wherever the direction switches to `dir`.
      int bursts = 0;
      for (std::size_t i = 0; i < seg.size(); ++i) {
        if (seg[i].direction == dir && (i == 0 || seg[i - 1].direction != dir)) ++bursts;
      }
      double* slot = out.data() + 8 * s + 4 * side;
      slot[0] = static_cast<double>(times.size());
      slot[1] = iat;
      slot[2] = bursts;
      slot[3] = bursts ? static_cast<double>(times.size()) / bursts : 0.0;
    }
  }
  return out;
}

wfkit::Trace random_trace(wfkit::Rng& rng, std::size_t max_events, double max_time) {
  wfkit::Trace t;
  const auto n = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(max_events)));
  double time = 0.0;
  Direction dir = Direction::kOutgoing;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = rng.uniform();
    if (r < 0.1) {
      // tie with the previous timestamp
    } else if (r < 0.15) {
      time += rng.uniform(0.0, max_time / 10.0);  // idle stretch
    } else {
      time += rng.exponential(max_time / (4.0 * static_cast<double>(max_events) + 1.0));
    }
    if (rng.bernoulli(0.3)) dir = dir == Direction::kOutgoing ? Direction::kIncoming : Direction::kOutgoing;
    t.events.push_back({time, dir, false});
  }
  return t;
}

double brute_precision_at_k(const std::vector<int>& y, const std::vector<double>& p, int k) {
  // Selection by repeated argmax; the first maximum wins.
  std::vector<bool> taken(p.size(), false);
  int hits = 0;
  for (int r = 0; r < k; ++r) {
    std::size_t best = p.size();
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!taken[i] && (best == p.size() || p[i] > p[best])) best = i;
    }
    taken[best] = true;
    hits += y[best];
  }
  return static_cast<double>(hits) / k;
}

double brute_map_at_k(const std::vector<int>& y, const std::vector<double>& p, int k) {
  double total = 0.0;
  for (int i = 1; i <= k; ++i) total += brute_precision_at_k(y, p, i);
  return total / k;
}

std::pair<long long, long long> brute_auc_twice(const std::vector<int>& y, const std::vector<double>& p) {
  long long twice = 0, pairs = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (y[j]) continue;
      ++pairs;
      twice += p[i] > p[j] ? 2 : (p[i] == p[j] ? 1 : 0);
    }
  }
  return {twice, 2 * pairs};
}

std::vector<double> vanilla_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const std::size_t b = q.dim(0), d = q.dim(1), dv = v.dim(1);
  std::vector<double> out(b * dv, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double> s(b);
    double mx = -INFINITY;
    for (std::size_t j = 0; j < b; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += q.at(i * d + c) * k.at(j * d + c);
      s[j] = dot / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, s[j]);
    }
    double z = 0.0;
    for (double& x : s) z += (x = std::exp(x - mx));
    for (std::size_t j = 0; j < b; ++j)
      for (std::size_t c = 0; c < dv; ++c) out[i * dv + c] += s[j] / z * v.at(j * dv + c);
  }
  return out;
}

std::pair<std::optional<double>, std::optional<double>> brute_precision_recall(
    const std::vector<int>& y, const std::vector<double>& p, double threshold) {
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (p[i] >= threshold) {
      (y[i] ? tp : fp) += 1;
    } else if (y[i]) {
      ++fn;
    }
  }
  std::optional<double> precision, recall;
  if (tp + fp) precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn) recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return {precision, recall};
}

}  // namespace oracle
