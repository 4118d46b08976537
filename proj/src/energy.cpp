#include "molrl/energy.hpp"

#include <algorithm>
#include <cmath>

#include "molrl/protocol.hpp"

namespace molrl {

namespace {

constexpr double kDebyePerElectronAngstrom = 4.80320471;

void set_pair(PairTable& t, Element a, Element b, double v) {
  t[index_of(a)][index_of(b)] = v;
  t[index_of(b)][index_of(a)] = v;
}

}  // namespace

SurrogateParams SurrogateParams::defaults() {
  SurrogateParams p;
  using E = Element;
  for (Element a : kAllElements) {
    for (Element b : kAllElements) {
      const bool has_s = (a == E::S || b == E::S);
      set_pair(p.well_depth, a, b, has_s ? 2.5 : 2.0);
      set_pair(p.width, a, b, 2.0);
      set_pair(p.equilibrium, a, b, p.radii[index_of(a)] + p.radii[index_of(b)]);
    }
  }
  set_pair(p.well_depth, E::H, E::H, 4.5);
  set_pair(p.well_depth, E::C, E::H, 4.3);
  set_pair(p.well_depth, E::C, E::C, 3.6);
  set_pair(p.well_depth, E::N, E::H, 4.0);
  set_pair(p.well_depth, E::O, E::H, 4.8);
  set_pair(p.well_depth, E::C, E::N, 3.2);
  set_pair(p.well_depth, E::C, E::O, 3.7);
  set_pair(p.well_depth, E::N, E::N, 2.0);
  set_pair(p.well_depth, E::O, E::O, 1.5);
  return p;
}

void SurrogateParams::validate() const {
  for (int a = 0; a < kNumElements; ++a) {
    for (int b = 0; b < kNumElements; ++b) {
      if (!(well_depth[a][b] > 0) || !(width[a][b] > 0) || !(equilibrium[a][b] > 0)) {
        throw std::invalid_argument("surrogate pair parameters must be positive");
      }
    }
  }
  if (!(valence_weight >= 0)) throw std::invalid_argument("valence_weight must be >= 0");
  if (!(coordination_onset >= 0) || !(coordination_cutoff > coordination_onset)) {
    throw std::invalid_argument("need 0 <= coordination_onset < coordination_cutoff");
  }
}

double morse(double r, double depth, double width, double r_eq) {
  const double x = 1.0 - std::exp(-width * (r - r_eq));
  return depth * (x * x - 1.0);
}

std::pair<double, double> coordination_switch(double r, double onset, double cutoff) {
  if (r <= onset) return {1.0, 0.0};
  if (r >= cutoff) return {0.0, 0.0};
  const double span = cutoff - onset;
  const double t = (r - onset) / span;
  return {0.5 * (std::cos(kPi * t) + 1.0), -0.5 * kPi * std::sin(kPi * t) / span};
}

SurrogateCalculator::SurrogateCalculator(SurrogateParams params) : params_(std::move(params)) {
  params_.validate();
}

double SurrogateCalculator::energy(const Canvas& canvas, const SurrogateParams& p, std::vector<Vec3>* forces) {
  const std::size_t n = canvas.size();
  std::vector<double> coordination(n, 0.0);
  double e = 0.0;

  struct PairTerm {
    double r;
    double dmorse;
    double dswitch;
  };
  std::vector<PairTerm> terms;
  terms.reserve(n * (n > 0 ? n - 1 : 0) / 2);

  for (std::size_t i = 0; i < n; ++i) {
    const int ei = index_of(canvas[i].element);
    for (std::size_t j = i + 1; j < n; ++j) {
      const int ej = index_of(canvas[j].element);
      const double r = distance(canvas[i].position, canvas[j].position);
      const double depth = p.well_depth[ei][ej];
      const double a = p.width[ei][ej];
      const double ex = std::exp(-a * (r - p.equilibrium[ei][ej]));
      const double radius_sum = p.radii[ei] + p.radii[ej];
      e += depth * ((1.0 - ex) * (1.0 - ex) - 1.0);
      const auto [s, ds] = coordination_switch(r, p.coordination_onset * radius_sum, p.coordination_cutoff * radius_sum);
      coordination[i] += s;
      coordination[j] += s;
      terms.push_back({r, 2.0 * depth * a * (1.0 - ex) * ex, ds});
    }
  }
  std::vector<double> excess(n);
  for (std::size_t i = 0; i < n; ++i) {
    excess[i] = coordination[i] - element_info(canvas[i].element).target_valence;
    e += p.valence_weight * excess[i] * excess[i];
  }

  if (forces) {
    forces->assign(n, Vec3{});
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j, ++k) {
        const PairTerm& t = terms[k];
        if (t.r == 0.0) continue;
        const double de_dr = t.dmorse + 2.0 * p.valence_weight * (excess[i] + excess[j]) * t.dswitch;
        const Vec3 u = (canvas[i].position - canvas[j].position) * (1.0 / t.r);
        (*forces)[i] -= de_dr * u;
        (*forces)[j] += de_dr * u;
      }
    }
  }
  return e;
}

Vec3 SurrogateCalculator::dipole(const Canvas& canvas, const SurrogateParams& p) {
  if (canvas.empty()) return {};
  Vec3 centroid;
  for (const auto& a : canvas.atoms()) centroid += a.position;
  centroid *= 1.0 / static_cast<double>(canvas.size());
  Vec3 mu;
  for (const auto& a : canvas.atoms()) mu += p.dipole_charges[index_of(a.element)] * (a.position - centroid);
  return mu * kDebyePerElectronAngstrom;
}

CalculatorResult SurrogateCalculator::calculate(const Canvas& canvas, PropertyRequest props) {
  CalculatorResult r;
  if (props.forces) {
    std::vector<Vec3> f;
    r.energy = energy(canvas, params_, &f);
    r.forces = std::move(f);
  } else {
    r.energy = energy(canvas, params_);
  }
  if (props.dipole) r.dipole = dipole(canvas, params_);
  return r;
}

double atomization_delta(const Canvas& canvas, Calculator& calc) {
  double atoms = 0.0;
  for (const auto& a : canvas.atoms()) atoms += calc.atom_reference_energy(a.element);
  return atoms - calc.calculate(canvas, {}).energy;
}

// ---------------------------------------------------------------------------

double max_atom_force(const std::vector<Vec3>& forces) {
  double m = 0.0;
  for (const auto& f : forces) m = std::max(m, norm(f));
  return m;
}

RelaxResult relax(const Canvas& canvas, Calculator& calc, const RelaxOptions& opt) {
  RelaxResult out;
  std::vector<Atom> atoms(canvas.atoms().begin(), canvas.atoms().end());
  auto evaluate = [&](const std::vector<Atom>& xs) {
    CalculatorResult r = calc.calculate(Canvas(xs), {.forces = true});
    if (!r.forces || r.forces->size() != xs.size()) throw CalculatorError("relax: calculator returned no forces");
    return r;
  };
  CalculatorResult current = evaluate(atoms);
  out.energies.push_back(current.energy);
  out.max_forces.push_back(max_atom_force(*current.forces));

  while (true) {
    const double fmax = out.max_forces.back();
    if (fmax < opt.fmax) {
      out.converged = true;
      break;
    }
    if (out.steps >= opt.max_steps) break;
    // Search direction: forces scaled so the most-pushed atom moves by `step` Angstrom.
    const auto& f = *current.forces;
    double slope = 0.0;  // dE/dt along the scaled direction
    for (const auto& fi : f) slope -= dot(fi, fi) / fmax;
    double step = opt.initial_step;
    bool accepted = false;
    for (int k = 0; k <= opt.max_shrinks; ++k) {
      std::vector<Atom> trial = atoms;
      for (std::size_t i = 0; i < trial.size(); ++i) trial[i].position += (step / fmax) * f[i];
      CalculatorResult r = evaluate(trial);
      if (r.energy <= current.energy + opt.armijo_c * step * slope) {
        atoms = std::move(trial);
        current = std::move(r);
        accepted = true;
        break;
      }
      step *= opt.shrink;
    }
    if (!accepted) {
      out.stalled = true;
      break;
    }
    ++out.steps;
    out.energies.push_back(current.energy);
    out.max_forces.push_back(max_atom_force(*current.forces));
  }
  out.canvas = Canvas(std::move(atoms));
  return out;
}

// ---------------------------------------------------------------------------

ExternalCalculator::ExternalCalculator(ExternalOptions options) : options_(std::move(options)) {
  if (options_.command.empty()) throw std::invalid_argument("external calculator needs a command");
}

ExternalCalculator::~ExternalCalculator() = default;

void ExternalCalculator::ensure_running() {
  if (!process_ || !process_->running()) process_ = std::make_unique<Subprocess>(options_.command);
}

CalculatorResult ExternalCalculator::calculate(const Canvas& canvas, PropertyRequest props) {
  ensure_running();
  const protocol::Request req = protocol::make_request(next_id_++, canvas, props);
  try {
    process_->write_line(protocol::encode(req));
    const std::string line = process_->read_line(options_.timeout);
    return protocol::to_result(req, protocol::decode_response(line));
  } catch (const CalculatorError& err) {
    // Stream state is unknown after a failure; the next call starts a fresh adapter.
    const bool reported = std::string_view(err.what()).starts_with("adapter error:");
    if (!reported) process_.reset();
    throw;
  }
}

double ExternalCalculator::atom_reference_energy(Element e) {
  auto& slot = reference_cache_[index_of(e)];
  if (!slot) {
    Canvas single;
    single.append(e, {});
    slot = calculate(single, {}).energy;
  }
  return *slot;
}

std::unique_ptr<Calculator> make_calculator(const std::string& spec, const SurrogateParams& surrogate,
                                            std::chrono::milliseconds timeout) {
  if (spec == "surrogate") return std::make_unique<SurrogateCalculator>(surrogate);
  constexpr std::string_view prefix = "external:";
  if (spec.rfind(prefix, 0) == 0) {
    return std::make_unique<ExternalCalculator>(ExternalOptions{spec.substr(prefix.size()), timeout});
  }
  throw std::invalid_argument("unknown calculator '" + spec + "' (expected surrogate or external:<command>)");
}

}  // namespace molrl
