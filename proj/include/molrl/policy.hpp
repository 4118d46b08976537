#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "molrl/chemcore.hpp"
#include "molrl/env.hpp"
#include "molrl/json.hpp"
#include "molrl/nn.hpp"
#include "molrl/random.hpp"

namespace molrl {

struct NetConfig {
  int interactions = 2;
  int width = 64;
  double cutoff = 5.0;  // Angstrom
  int num_rbf = 16;
  double rbf_gamma = 10.0;  // 1/Angstrom^2
  double d_min = 0.8;
  double d_max = 1.8;
  double init_sigma_d = 0.1;
  double init_sigma_alpha = 0.25;
  double init_sigma_psi = 0.25;

  void validate() const;
  /// Stable hash of the architecture fields; checkpoints refuse to load across a change.
  std::uint64_t hash() const;
};

void to_json(Json& j, const NetConfig& c);
void from_json(const Json& j, NetConfig& c);

/// Per-head log-probabilities of one action. Heads that are not sampled (focus and spatial at
/// t = 0) contribute 0.
struct HeadLogProbs {
  double focus = 0.0;
  double element = 0.0;
  double distance = 0.0;
  double alpha = 0.0;
  double psi = 0.0;

  double total() const { return focus + element + distance + alpha + psi; }
};

struct PolicySample {
  Action action;
  HeadLogProbs log_probs;
  double value = 0.0;
};

/// Scalar view of every head for one state (inference only).
struct PolicyOutput {
  std::vector<double> focus_log_probs;              // one per atom; empty at t = 0
  std::array<double, kNumElements> element_log_probs;  // -inf for exhausted elements
  double mu_d = 0.0;
  double mu_alpha = 0.0;
  double mu_psi = 0.0;
  double log_sigma_d = 0.0;
  double log_sigma_alpha = 0.0;
  double log_sigma_psi = 0.0;
  double value = 0.0;
};

/// Batched differentiable evaluation of stored actions.
struct PolicyEvaluation {
  nn::Tensor log_prob;  // [B x 1]
  nn::Tensor entropy;   // [B x 1], focus + element categorical entropy
  nn::Tensor value;     // [B x 1]
};

/// Invariant message-passing actor-critic with a shared trunk.
class Policy {
 public:
  explicit Policy(NetConfig cfg, std::uint64_t seed = 0);

  const NetConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  std::size_t parameter_count() const { return params_.parameter_count(); }

  /// Samples (focus, element, d, alpha, psi). `greedy` takes argmax categories and Gaussian means.
  PolicySample sample(const State& state, Rng& rng, bool greedy = false) const;
  /// Heads evaluated for a single state. The element and spatial heads are conditioned on `focus`
  /// and `element`, which default to the focus mode and element mode.
  PolicyOutput output(const State& state, int focus = -1, int element = -1) const;
  double value(const State& state) const;

  PolicyEvaluation evaluate(std::span<const State* const> states, std::span<const Action> actions) const;

  /// Per-atom features after the interaction blocks, [n_atoms x width] (inference only).
  std::vector<std::vector<double>> atom_features(const Canvas& canvas) const;

  std::array<double, 3> sigmas() const;

 private:
  struct Trunk;
  Trunk run_trunk(std::span<const State* const> states) const;
  nn::Tensor mlp(const std::string& prefix, const nn::Tensor& x) const;
  nn::Tensor focus_log_softmax(const Trunk& t) const;                 // [N x 1]
  nn::Tensor focal_features(const Trunk& t, std::span<const int> focus) const;  // [B x w]
  nn::Tensor element_log_softmax(const Trunk& t, const nn::Tensor& focal,
                                 std::span<const State* const> states) const;  // [B x 5]
  std::array<nn::Tensor, 3> spatial_means(const nn::Tensor& focal, std::span<const int> elements) const;
  std::array<nn::Tensor, 3> log_sigma_columns(int batch) const;
  nn::Tensor critic(const Trunk& t) const;  // [B x 1]
  void add_linear(const std::string& name, int in, int out, Rng& rng);
  void add_mlp(const std::string& prefix, int in, int hidden, int out, Rng& rng);

  NetConfig cfg_;
  nn::ParamStore params_;
};

/// Bag features fed to the network: remaining counts per element, scaled by 1/4.
std::array<double, kNumElements> bag_features(const Bag& bag);

}  // namespace molrl
