#include "molrl/env.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace molrl {

double LinearSchedule::value(long iter) const {
  if (iter <= start_iter) return start_value;
  if (iter >= end_iter) return end_value;
  const double t = static_cast<double>(iter - start_iter) / static_cast<double>(end_iter - start_iter);
  return start_value + t * (end_value - start_value);
}

void LinearSchedule::validate() const {
  if (end_iter < start_iter) throw std::invalid_argument("schedule end_iter must be >= start_iter");
  if (!std::isfinite(start_value) || !std::isfinite(end_value)) throw std::invalid_argument("schedule values must be finite");
}

LinearSchedule LinearSchedule::parse(const std::string& text) {
  std::istringstream in(text);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(in, part, ':')) parts.push_back(part);
  if (parts.size() != 4) throw std::invalid_argument("ramp must look like start:end:v0:v1, got '" + text + "'");
  LinearSchedule s;
  try {
    std::size_t used = 0;
    s.start_iter = std::stol(parts[0], &used);
    if (used != parts[0].size()) throw std::invalid_argument(parts[0]);
    s.end_iter = std::stol(parts[1], &used);
    if (used != parts[1].size()) throw std::invalid_argument(parts[1]);
    s.start_value = std::stod(parts[2], &used);
    if (used != parts[2].size()) throw std::invalid_argument(parts[2]);
    s.end_value = std::stod(parts[3], &used);
    if (used != parts[3].size()) throw std::invalid_argument(parts[3]);
  } catch (const std::exception&) {
    throw std::invalid_argument("malformed ramp '" + text + "'");
  }
  s.validate();
  return s;
}

double schedule_value(const LinearSchedule& s, long iter) { return s.value(iter); }

void RewardConfig::validate() const {
  if (kill_reward > 0) throw std::invalid_argument("kill_reward must be <= 0");
  if (!(kill_distance >= 0)) throw std::invalid_argument("kill_distance must be >= 0");
  if (!(energy_scale > 0)) throw std::invalid_argument("energy_scale must be > 0");
  if (dipole_schedule) dipole_schedule->validate();
}

RewardConfig agent_preset(const std::string& name) {
  RewardConfig c;
  if (name == "A") {
    c.coef_atomization = 1;
  } else if (name == "AV") {
    c.coef_atomization = 1;
    c.coef_validity = 3;
  } else if (name == "F") {
    c.coef_formation = 1;
  } else if (name == "FV") {
    c.coef_formation = 1;
    c.coef_validity = 3;
  } else if (name == "AFV") {
    c.coef_atomization = 1;
    c.coef_formation = 1;
    c.coef_validity = 3;
  } else {
    throw std::invalid_argument("unknown agent preset '" + name + "' (A, AV, F, FV, AFV)");
  }
  return c;
}

double atomization_transform(double x) { return x > 0 ? x + 0.5 * x * x : x; }

SphericalCoords Action::placement() const {
  SphericalCoords c;
  c.distance = std::clamp(raw.distance, kMinPlacementDistance, kMaxPlacementDistance);
  c.alpha = clamp_alpha(raw.alpha);
  c.psi = wrap_angle(raw.psi);
  return c;
}

// ---------------------------------------------------------------------------

MoleculeEnv::MoleculeEnv(RewardConfig config, Calculator& calc, BondPerceptionConfig bonds)
    : config_(std::move(config)), calc_(calc), bonds_(std::move(bonds)) {
  config_.validate();
}

void MoleculeEnv::set_config(RewardConfig config) {
  config.validate();
  config_ = std::move(config);
}

State MoleculeEnv::reset(const Bag& bag) const {
  if (bag.empty()) throw std::invalid_argument("reset: empty bag");
  State s;
  s.bag = bag;
  s.step = 0;
  s.horizon = bag.total();
  return s;
}

double MoleculeEnv::canvas_energy(const Canvas& canvas) {
  if (canvas.empty()) return 0.0;
  return calc_.calculate(canvas, {}).energy;
}

StepOutcome MoleculeEnv::step(const State& state, const Action& action, long iter) {
  if (state.bag.count(action.element) <= 0) {
    throw std::invalid_argument("step: no " + std::string(symbol(action.element)) + " left in bag");
  }
  const Canvas& canvas = state.canvas;
  if (!canvas.empty() && (action.focus < 0 || static_cast<std::size_t>(action.focus) >= canvas.size())) {
    throw std::out_of_range("step: focus index out of range");
  }

  Vec3 position;
  if (!canvas.empty()) {
    position = place_atom(build_frame(canvas, static_cast<std::size_t>(action.focus)), action.placement());
  }

  StepOutcome out;
  out.next = state;
  out.next.canvas.append(action.element, position);
  out.next.bag.take(action.element);
  out.next.step = state.step + 1;

  auto killed = [&](bool calculator_failed) {
    out.components = {};
    out.components.kill = config_.kill_reward;
    out.reward = config_.kill_reward;
    out.done = true;
    out.kill = true;
    out.calculator_failed = calculator_failed;
    out.terminal.reset();
    return out;
  };

  for (const auto& a : canvas.atoms()) {
    if (distance(a.position, position) < config_.kill_distance) return killed(false);
  }

  try {
    out.components.shaping = config_.shaping_per_step;
    if (config_.coef_formation != 0.0) {
      const double before = canvas_energy(canvas) + calc_.atom_reference_energy(action.element);
      const double after = canvas_energy(out.next.canvas);
      out.components.formation = config_.coef_formation * config_.energy_scale * (before - after);
    }
    if (out.next.bag.empty()) {
      out.done = true;
      const bool want_dipole = config_.dipole_schedule.has_value();
      const CalculatorResult final_state = calc_.calculate(out.next.canvas, {.dipole = want_dipole});
      double references = 0.0;
      for (const auto& a : out.next.canvas.atoms()) references += calc_.atom_reference_energy(a.element);
      TerminalInfo info;
      info.delta_e = references - final_state.energy;
      info.valid = is_valid(out.next.canvas, bonds_);
      out.components.atomization =
          config_.coef_atomization * atomization_transform(config_.energy_scale * info.delta_e);
      out.components.validity = config_.coef_validity * (info.valid ? 1.0 : 0.0);
      if (want_dipole) {
        if (!final_state.dipole) throw CalculatorError("calculator returned no dipole");
        info.dipole_magnitude = norm(*final_state.dipole);
        out.components.dipole = config_.dipole_schedule->value(iter) * *info.dipole_magnitude;
      }
      if (!std::isfinite(info.delta_e)) throw CalculatorError("non-finite atomization energy");
      out.terminal = info;
    }
  } catch (const CalculatorError&) {
    return killed(true);
  }
  out.reward = out.components.total();
  return out;
}

}  // namespace molrl
