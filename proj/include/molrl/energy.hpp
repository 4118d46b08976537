#pragma once

#include <array>
#include <chrono>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "molrl/chemcore.hpp"

namespace molrl {

class CalculatorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PropertyRequest {
  bool forces = false;
  bool dipole = false;
};

struct CalculatorResult {
  double energy = 0.0;                      // eV
  std::optional<std::vector<Vec3>> forces;  // eV/Angstrom, one per atom
  std::optional<Vec3> dipole;               // Debye
};

/// Energy backend used for rewards and relaxation. Implementations may hold a subprocess, so they
/// are not shared between threads.
class Calculator {
 public:
  virtual ~Calculator() = default;
  virtual CalculatorResult calculate(const Canvas& canvas, PropertyRequest props) = 0;
  /// Energy of an isolated atom of `e`, computed with the same backend as `calculate`.
  virtual double atom_reference_energy(Element e) = 0;
  virtual std::string name() const = 0;
};

// ---------------------------------------------------------------------------
// Built-in surrogate potential
// ---------------------------------------------------------------------------

using PairTable = std::array<std::array<double, kNumElements>, kNumElements>;

/// Morse pair terms plus a quadratic penalty on the deviation of a smooth coordination number from
/// each atom's target valence.
struct SurrogateParams {
  PairTable well_depth{};     // D_e, eV
  PairTable width{};          // a, 1/Angstrom
  PairTable equilibrium{};    // r_e, Angstrom
  double valence_weight = 1.0;  // lambda_v, eV
  /// Coordination switch for pair (i,j) with R = r_cov_i + r_cov_j: 1 below onset*R, cosine taper
  /// to 0 at cutoff*R. onset = 0 gives the plain 0.5*(cos(pi r / r_c) + 1) switch.
  double coordination_onset = 1.1;
  double coordination_cutoff = 1.3;
  RadiusTable radii = default_covalent_radii();
  /// Pseudo-charges (e) for the geometry-dependent dipole stub.
  std::array<double, kNumElements> dipole_charges{0.15, -0.05, -0.25, -0.35, -0.1};

  static SurrogateParams defaults();
  /// Throws std::invalid_argument when an invariant (D_e, a, r_e > 0, lambda_v >= 0) is violated.
  void validate() const;
};

class SurrogateCalculator final : public Calculator {
 public:
  explicit SurrogateCalculator(SurrogateParams params = SurrogateParams::defaults());

  CalculatorResult calculate(const Canvas& canvas, PropertyRequest props) override;
  /// Isolated-atom references are 0 by construction.
  double atom_reference_energy(Element) override { return 0.0; }
  std::string name() const override { return "surrogate"; }

  const SurrogateParams& params() const { return params_; }

  /// Pure evaluation helpers (thread safe).
  static double energy(const Canvas& canvas, const SurrogateParams& p, std::vector<Vec3>* forces = nullptr);
  static Vec3 dipole(const Canvas& canvas, const SurrogateParams& p);

 private:
  SurrogateParams params_;
};

double morse(double r, double depth, double width, double r_eq);
/// Coordination switch value and derivative with respect to r.
std::pair<double, double> coordination_switch(double r, double onset, double cutoff);

/// Sum of isolated-atom energies minus the molecule energy, both from `calc`.
double atomization_delta(const Canvas& canvas, Calculator& calc);

// ---------------------------------------------------------------------------
// Relaxation
// ---------------------------------------------------------------------------

struct RelaxOptions {
  int max_steps = 500;
  double fmax = 1e-3;         // eV/Angstrom
  double initial_step = 0.05;  // Angstrom, largest single-atom displacement of a trial step
  double armijo_c = 1e-4;
  double shrink = 0.5;
  int max_shrinks = 30;
};

struct RelaxResult {
  Canvas canvas;
  int steps = 0;
  bool converged = false;
  bool stalled = false;
  std::vector<double> energies;  // energy at the start and after each accepted step
  std::vector<double> max_forces;
};

RelaxResult relax(const Canvas& canvas, Calculator& calc, const RelaxOptions& options = {});

double max_atom_force(const std::vector<Vec3>& forces);

// ---------------------------------------------------------------------------
// External calculator (JSON-lines over a subprocess)
// ---------------------------------------------------------------------------

class Subprocess;

struct ExternalOptions {
  std::string command;  // run through /bin/sh -c
  std::chrono::milliseconds timeout{60000};
};

class ExternalCalculator final : public Calculator {
 public:
  explicit ExternalCalculator(ExternalOptions options);
  ~ExternalCalculator() override;
  ExternalCalculator(const ExternalCalculator&) = delete;
  ExternalCalculator& operator=(const ExternalCalculator&) = delete;

  CalculatorResult calculate(const Canvas& canvas, PropertyRequest props) override;
  /// Single-atom requests, cached per element.
  double atom_reference_energy(Element e) override;
  std::string name() const override { return "external:" + options_.command; }

 private:
  void ensure_running();

  ExternalOptions options_;
  std::unique_ptr<Subprocess> process_;
  long next_id_ = 0;
  std::array<std::optional<double>, kNumElements> reference_cache_{};
};

/// "surrogate" or "external:<command>".
std::unique_ptr<Calculator> make_calculator(const std::string& spec,
                                            const SurrogateParams& surrogate = SurrogateParams::defaults(),
                                            std::chrono::milliseconds timeout = std::chrono::milliseconds(60000));

}  // namespace molrl
