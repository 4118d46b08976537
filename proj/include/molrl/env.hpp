#pragma once

#include <optional>
#include <string>

#include "molrl/chemcore.hpp"
#include "molrl/energy.hpp"
#include "molrl/molgraph.hpp"

namespace molrl {

/// Linear ramp between (start_iter, start_value) and (end_iter, end_value), flat outside.
struct LinearSchedule {
  long start_iter = 0;
  long end_iter = 0;
  double start_value = 0.0;
  double end_value = 0.0;

  double value(long iter) const;
  void validate() const;
  /// "start:end:v0:v1"
  static LinearSchedule parse(const std::string& text);
};

double schedule_value(const LinearSchedule& s, long iter);

struct RewardConfig {
  double coef_atomization = 0.0;
  double coef_formation = 0.0;
  double coef_validity = 0.0;
  double shaping_per_step = 0.05;
  double kill_reward = -3.0;
  double kill_distance = 0.6;  // Angstrom
  double energy_scale = 1.0;   // 1/eV
  std::optional<LinearSchedule> dipole_schedule;

  void validate() const;
};

/// Coefficient presets for the five agents: A, AV, F, FV, AFV.
RewardConfig agent_preset(const std::string& name);

/// Piecewise atomization transform: x + x^2/2 for x > 0, x otherwise.
double atomization_transform(double x);

/// Policy action. Spatial values are the raw (pre-clamp) samples; `placement()` applies the
/// environment's interpretation.
struct Action {
  int focus = 0;
  Element element = Element::H;
  SphericalCoords raw;

  SphericalCoords placement() const;
};

inline constexpr double kMinPlacementDistance = 0.1;
inline constexpr double kMaxPlacementDistance = 3.0;

struct RewardComponents {
  double atomization = 0.0;
  double formation = 0.0;
  double validity = 0.0;
  double shaping = 0.0;
  double kill = 0.0;
  double dipole = 0.0;

  double total() const { return atomization + formation + validity + shaping + kill + dipole; }
};

struct TerminalInfo {
  bool valid = false;
  double delta_e = 0.0;  // eV
  std::optional<double> dipole_magnitude;
};

struct StepOutcome {
  State next;
  double reward = 0.0;
  RewardComponents components;
  bool done = false;
  bool kill = false;
  bool calculator_failed = false;
  std::optional<TerminalInfo> terminal;  // set when the bag was exhausted
};

/// Deterministic molecule-construction MDP. One instance per worker; owns no randomness.
class MoleculeEnv {
 public:
  MoleculeEnv(RewardConfig config, Calculator& calc, BondPerceptionConfig bonds = {});

  State reset(const Bag& bag) const;
  StepOutcome step(const State& state, const Action& action, long iter);

  const RewardConfig& config() const { return config_; }
  void set_config(RewardConfig config);
  Calculator& calculator() { return calc_; }
  const BondPerceptionConfig& bond_config() const { return bonds_; }

 private:
  double canvas_energy(const Canvas& canvas);

  RewardConfig config_;
  Calculator& calc_;
  BondPerceptionConfig bonds_;
};

}  // namespace molrl
