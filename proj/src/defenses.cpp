#include "wfkit/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "wfkit/error.hpp"

namespace wfkit {

namespace {

void require_non_empty(const Trace& trace) {
  if (trace.events.empty()) throw Error(ErrorCode::kEmptyTrace, "defense input has no events");
}

Direction random_direction(Rng& rng) {
  return rng.bernoulli(0.5) ? Direction::kOutgoing : Direction::kIncoming;
}

// Real events keep their relative order; at equal times they precede dummies
// inserted after them.
Trace with_dummies(const Trace& trace, std::vector<PacketEvent> dummies) {
  Trace out;
  out.label = trace.label;
  out.events.reserve(trace.events.size() + dummies.size());
  out.events = trace.events;
  out.events.insert(out.events.end(), dummies.begin(), dummies.end());
  std::stable_sort(out.events.begin(), out.events.end(),
                   [](const PacketEvent& a, const PacketEvent& b) { return a.time < b.time; });
  return out;
}

void validate_histogram(const GapHistogram& h, const char* name) {
  if (h.gaps.size() != h.masses.size()) {
    throw Error(ErrorCode::kBadHistogram, std::string(name) + ": gaps/masses length differ");
  }
  double sum = h.infinity_mass;
  if (h.infinity_mass < 0.0) throw Error(ErrorCode::kBadHistogram, std::string(name) + ": negative mass");
  for (std::size_t i = 0; i < h.gaps.size(); ++i) {
    if (!(h.gaps[i] > 0.0)) throw Error(ErrorCode::kBadHistogram, std::string(name) + ": gaps must be > 0");
    if (h.masses[i] < 0.0) throw Error(ErrorCode::kBadHistogram, std::string(name) + ": negative mass");
    sum += h.masses[i];
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw Error(ErrorCode::kBadHistogram, std::string(name) + ": masses must sum to 1");
  }
}

// nullopt is the "infinity" outcome.
std::optional<double> sample_gap(const GapHistogram& h, Rng& rng) {
  const double u = rng.uniform();
  if (u < h.infinity_mass) return std::nullopt;
  double acc = h.infinity_mass;
  for (std::size_t i = 0; i < h.gaps.size(); ++i) {
    acc += h.masses[i];
    if (u < acc) return h.gaps[i];
  }
  // Rounding residue: fall back to the last bin with positive mass.
  for (std::size_t i = h.gaps.size(); i-- > 0;) {
    if (h.masses[i] > 0.0) return h.gaps[i];
  }
  return std::nullopt;
}

}  // namespace

Trace apply_random(const Trace& trace, double target_fraction, Rng& rng) {
  if (!(target_fraction >= 0.0 && target_fraction <= 0.2)) {
    throw Error(ErrorCode::kBadFraction, "target fraction must lie in [0, 0.2]");
  }
  require_non_empty(trace);
  const auto n = static_cast<std::int64_t>(trace.events.size());
  auto dummies_needed = static_cast<std::int64_t>(
      std::floor(target_fraction * static_cast<double>(n) / (1.0 - target_fraction) + 1e-9));
  while (dummies_needed > 0 && static_cast<double>(dummies_needed) /
                                       static_cast<double>(n + dummies_needed) >
                                   target_fraction) {
    --dummies_needed;
  }
  const double last = trace.events.back().time;
  std::vector<PacketEvent> dummies;
  dummies.reserve(static_cast<std::size_t>(dummies_needed));
  for (std::int64_t i = 0; i < dummies_needed; ++i) {
    const double t = rng.uniform(0.0, last);
    dummies.push_back(PacketEvent{t, random_direction(rng), true});
  }
  return with_dummies(trace, std::move(dummies));
}

Trace apply_front(const Trace& trace, const FrontDefense& cfg, Rng& rng) {
  if (cfg.n_min < 0 || cfg.n_min > cfg.n_max) {
    throw Error(ErrorCode::kBadConfig, "front: need 0 <= n_min <= n_max");
  }
  if (!(cfg.w_min > 0.0) || cfg.w_min > cfg.w_max) {
    throw Error(ErrorCode::kBadConfig, "front: need 0 < w_min <= w_max");
  }
  require_non_empty(trace);
  const double span = trace.events.back().time;
  std::vector<PacketEvent> dummies;
  for (Direction dir : {Direction::kOutgoing, Direction::kIncoming}) {
    const auto count = rng.uniform_int(cfg.n_min, cfg.n_max);
    const double window = rng.uniform(cfg.w_min, cfg.w_max);
    // Inverse CDF of Rayleigh(window) truncated to [0, span].
    const double mass_in_span = 1.0 - std::exp(-span * span / (2.0 * window * window));
    for (std::int64_t i = 0; i < count; ++i) {
      const double u = rng.uniform();
      double t = window * std::sqrt(-2.0 * std::log1p(-u * mass_in_span));
      t = std::min(t, span);
      dummies.push_back(PacketEvent{t, dir, true});
    }
  }
  return with_dummies(trace, std::move(dummies));
}

Trace apply_wtfpad(const Trace& trace, const WtfPadDefense& cfg, Rng& rng) {
  validate_histogram(cfg.gap_histogram, "gap_histogram");
  validate_histogram(cfg.burst_histogram, "burst_histogram");
  require_non_empty(trace);
  const double horizon = trace.events.back().time + cfg.tail;
  std::vector<PacketEvent> dummies;
  for (Direction dir : {Direction::kOutgoing, Direction::kIncoming}) {
    std::vector<double> real;
    for (const PacketEvent& e : trace.events) {
      if (e.direction == dir) real.push_back(e.time);
    }
    for (std::size_t j = 0; j < real.size(); ++j) {
      const double next_real = j + 1 < real.size() ? real[j + 1] : horizon;
      double last = real[j];
      // Gap state: one draw from the inter-burst histogram.
      std::optional<double> gap = sample_gap(cfg.gap_histogram, rng);
      while (gap && last + *gap < next_real && last + *gap <= horizon) {
        last += *gap;
        dummies.push_back(PacketEvent{last, dir, true});
        // Burst state: keep padding until "infinity" or real traffic resumes.
        gap = sample_gap(cfg.burst_histogram, rng);
      }
    }
  }
  return with_dummies(trace, std::move(dummies));
}

Trace apply_tamaraw(const Trace& trace, const TamarawDefense& cfg) {
  if (!(cfg.rho_out > 0.0) || !(cfg.rho_in > 0.0) || cfg.pad_multiple < 1) {
    throw Error(ErrorCode::kBadConfig, "tamaraw: rates must be > 0 and L >= 1");
  }
  require_non_empty(trace);
  Trace out;
  out.label = trace.label;
  for (Direction dir : {Direction::kOutgoing, Direction::kIncoming}) {
    const double rho = dir == Direction::kOutgoing ? cfg.rho_out : cfg.rho_in;
    std::vector<double> real;
    for (const PacketEvent& e : trace.events) {
      if (e.direction == dir) real.push_back(e.time);
    }
    std::size_t sent = 0;
    std::size_t slot = 0;
    while (sent < real.size() || slot % static_cast<std::size_t>(cfg.pad_multiple) != 0) {
      const double t = static_cast<double>(slot) * rho;
      const bool carries_real = sent < real.size() && real[sent] <= t;
      if (carries_real) ++sent;
      out.events.push_back(PacketEvent{t, dir, !carries_real});
      ++slot;
    }
  }
  std::stable_sort(out.events.begin(), out.events.end(),
                   [](const PacketEvent& a, const PacketEvent& b) { return a.time < b.time; });
  return out;
}

Trace apply_defense(const Trace& trace, const DefenseConfig& cfg, Rng& rng) {
  return std::visit(
      [&](const auto& variant) -> Trace {
        using T = std::decay_t<decltype(variant)>;
        if constexpr (std::is_same_v<T, RandomDefense>) {
          return apply_random(trace, variant.target_fraction, rng);
        } else if constexpr (std::is_same_v<T, FrontDefense>) {
          return apply_front(trace, variant, rng);
        } else if constexpr (std::is_same_v<T, WtfPadDefense>) {
          return apply_wtfpad(trace, variant, rng);
        } else {
          return apply_tamaraw(trace, variant);
        }
      },
      cfg);
}

std::string defense_name(const DefenseConfig& cfg) {
  static constexpr const char* kNames[] = {"random", "front", "wtfpad", "tamaraw"};
  return kNames[cfg.index()];
}

namespace {

GapHistogram histogram_from_json(const nlohmann::json& doc) {
  GapHistogram h;
  h.gaps = doc.at("gaps").get<std::vector<double>>();
  h.masses = doc.at("masses").get<std::vector<double>>();
  h.infinity_mass = doc.at("infinity_mass").get<double>();
  return h;
}

nlohmann::ordered_json histogram_to_json(const GapHistogram& h) {
  nlohmann::ordered_json doc;
  doc["gaps"] = h.gaps;
  doc["masses"] = h.masses;
  doc["infinity_mass"] = h.infinity_mass;
  return doc;
}

}  // namespace

DefenseConfig defense_from_json(const nlohmann::json& doc) {
  try {
    const std::string variant = doc.at("variant").get<std::string>();
    if (variant == "random") {
      RandomDefense d;
      d.target_fraction = doc.value("target_fraction", d.target_fraction);
      if (!(d.target_fraction >= 0.0 && d.target_fraction <= 0.2)) {
        throw Error(ErrorCode::kConfigError, "random: target_fraction must lie in [0, 0.2]");
      }
      return d;
    }
    if (variant == "front") {
      FrontDefense d;
      d.n_min = doc.value("n_min", d.n_min);
      d.n_max = doc.value("n_max", d.n_max);
      d.w_min = doc.value("w_min", d.w_min);
      d.w_max = doc.value("w_max", d.w_max);
      if (d.n_min < 0 || d.n_min > d.n_max || !(d.w_min > 0.0) || d.w_min > d.w_max) {
        throw Error(ErrorCode::kConfigError, "front: bad bounds");
      }
      return d;
    }
    if (variant == "wtfpad") {
      WtfPadDefense d;
      if (doc.contains("gap_histogram")) d.gap_histogram = histogram_from_json(doc["gap_histogram"]);
      if (doc.contains("burst_histogram")) {
        d.burst_histogram = histogram_from_json(doc["burst_histogram"]);
      }
      if (doc.contains("infinity_mass")) {
        d.gap_histogram.infinity_mass = doc["infinity_mass"].get<double>();
      }
      d.tail = doc.value("tail", d.tail);
      return d;
    }
    if (variant == "tamaraw") {
      TamarawDefense d;
      d.rho_out = doc.value("rho_out", d.rho_out);
      d.rho_in = doc.value("rho_in", d.rho_in);
      d.pad_multiple = doc.value("pad_multiple", d.pad_multiple);
      if (!(d.rho_out > 0.0) || !(d.rho_in > 0.0) || d.pad_multiple < 1) {
        throw Error(ErrorCode::kConfigError, "tamaraw: bad parameters");
      }
      return d;
    }
    throw Error(ErrorCode::kConfigError, "unknown defense variant \"" + variant + "\"");
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kConfigError, std::string("defense: ") + ex.what());
  }
}

nlohmann::ordered_json defense_to_json(const DefenseConfig& cfg) {
  nlohmann::ordered_json doc;
  doc["variant"] = defense_name(cfg);
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, RandomDefense>) {
          doc["target_fraction"] = v.target_fraction;
        } else if constexpr (std::is_same_v<T, FrontDefense>) {
          doc["n_min"] = v.n_min;
          doc["n_max"] = v.n_max;
          doc["w_min"] = v.w_min;
          doc["w_max"] = v.w_max;
        } else if constexpr (std::is_same_v<T, WtfPadDefense>) {
          doc["gap_histogram"] = histogram_to_json(v.gap_histogram);
          doc["burst_histogram"] = histogram_to_json(v.burst_histogram);
          doc["tail"] = v.tail;
        } else {
          doc["rho_out"] = v.rho_out;
          doc["rho_in"] = v.rho_in;
          doc["pad_multiple"] = v.pad_multiple;
        }
      },
      cfg);
  return doc;
}

}  // namespace wfkit
