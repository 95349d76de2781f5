#pragma once

#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "wfkit/rng.hpp"
#include "wfkit/trace.hpp"

namespace wfkit {

// Inserts floor(rho * n / (1 - rho)) dummies so the dummy share never exceeds
// rho; rho is capped at 0.2.
struct RandomDefense {
  double target_fraction = 0.2;
};

struct FrontDefense {
  int n_min = 1;
  int n_max = 2500;
  double w_min = 1.0;
  double w_max = 14.0;
};

// Discrete distribution over gaps in seconds plus a mass for "never".
struct GapHistogram {
  std::vector<double> gaps;
  std::vector<double> masses;
  double infinity_mass = 0.0;
};

struct WtfPadDefense {
  GapHistogram gap_histogram{{0.005, 0.01, 0.02, 0.05, 0.1}, {0.1, 0.1, 0.1, 0.1, 0.1}, 0.5};
  GapHistogram burst_histogram{{0.001, 0.002, 0.005, 0.01}, {0.15, 0.15, 0.15, 0.15}, 0.4};
  // Padding stops this many seconds after the last real packet of the trace.
  double tail = 2.0;
};

struct TamarawDefense {
  double rho_out = 0.04;   // seconds per outgoing packet
  double rho_in = 0.012;   // seconds per incoming packet
  int pad_multiple = 100;  // L
};

using DefenseConfig = std::variant<RandomDefense, FrontDefense, WtfPadDefense, TamarawDefense>;

// Throws Error{kBadFraction}.
Trace apply_random(const Trace& trace, double target_fraction, Rng& rng);
// Throws Error{kBadConfig}.
Trace apply_front(const Trace& trace, const FrontDefense& cfg, Rng& rng);
// Throws Error{kBadHistogram}.
Trace apply_wtfpad(const Trace& trace, const WtfPadDefense& cfg, Rng& rng);
// Deterministic. Real packets are re-timed onto each direction's constant-rate
// grid; a real packet arriving exactly at a slot time takes that slot.
Trace apply_tamaraw(const Trace& trace, const TamarawDefense& cfg);
Trace apply_defense(const Trace& trace, const DefenseConfig& cfg, Rng& rng);

std::string defense_name(const DefenseConfig& cfg);

// Tagged by "variant": "random" | "front" | "wtfpad" | "tamaraw".
// Throws Error{kConfigError}.
DefenseConfig defense_from_json(const nlohmann::json& doc);
nlohmann::ordered_json defense_to_json(const DefenseConfig& cfg);

}  // namespace wfkit
