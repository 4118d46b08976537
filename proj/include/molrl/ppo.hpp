#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "molrl/discovery.hpp"
#include "molrl/energy.hpp"
#include "molrl/env.hpp"
#include "molrl/json.hpp"
#include "molrl/nn.hpp"
#include "molrl/policy.hpp"
#include "molrl/random.hpp"

namespace molrl {

struct TrainConfig {
  double gamma = 1.0;
  double lam = 0.97;
  double clip_ratio = 0.2;
  double vf_coef = 0.5;
  double lr = 5e-5;
  double grad_clip = 0.5;
  int minibatch = 256;
  int steps_per_iter = 512;
  int workers = 8;
  int epochs = 4;
  LinearSchedule entropy{0, 30000, 0.15, 0.25};
  bool normalize_advantages = true;

  void validate() const;
};

void to_json(Json& j, const TrainConfig& c);
void from_json(const Json& j, TrainConfig& c);

struct Transition {
  State state;
  Action action;
  double reward = 0.0;
  double value = 0.0;
  double log_prob = 0.0;
  bool done = false;
  int bag_id = 0;
  int worker_id = 0;
  long iter = 0;
};

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// `values` holds V(s_0..s_{n-1}) plus one bootstrap entry V(s_n) for the state after the last
/// transition (ignored when that transition is terminal).
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> dones, double gamma, double lam);

/// Mean 0, std 1 (population std floored at 1e-8).
std::vector<double> normalize(std::span<const double> x);

struct LossTerms {
  nn::Tensor total;  // minimized
  double clip = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
};

class LossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

LossTerms ppo_losses(const Policy& policy, std::span<const Transition* const> batch, std::span<const double> advantages,
                     std::span<const double> returns, double entropy_coef, const TrainConfig& cfg);

struct IterationMetrics {
  long iter = 0;
  long env_steps = 0;
  long episodes = 0;
  double mean_episode_return = 0.0;
  double mean_terminal_reward = 0.0;
  double validity_rate = 0.0;
  double kill_rate = 0.0;
  std::optional<double> mean_delta_e;
  double loss_clip = 0.0;
  double loss_value = 0.0;
  double entropy = 0.0;
  double loss_total = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  double entropy_coef = 0.0;
  std::array<double, 3> sigma{};
  std::size_t unique_isomers = 0;

  Json to_json() const;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using CalculatorFactory = std::function<std::unique_ptr<Calculator>()>;

/// Synchronous PPO: parallel collection into per-worker segments merged in worker order, then
/// K epochs of shuffled minibatch updates on the trainer thread.
class Trainer {
 public:
  Trainer(TrainConfig train, RewardConfig reward, NetConfig net, std::vector<Bag> bags, CalculatorFactory calculators,
          std::uint64_t seed, BondPerceptionConfig bonds = {});
  ~Trainer();
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  IterationMetrics train_iteration();

  long iteration() const { return iter_; }
  long env_steps() const { return env_steps_; }
  Policy& policy() { return policy_; }
  const Policy& policy() const { return policy_; }
  nn::Adam& optimizer() { return adam_; }
  DiscoveryBuffer& discovery() { return discovery_; }
  const TrainConfig& train_config() const { return train_; }
  /// Reward terms may change between iterations (fine-tuning); the critic and optimizer are kept.
  void set_reward_config(const RewardConfig& reward);

  /// Versioned little-endian container; `config_hash` is checked on load.
  void save_checkpoint(const std::string& path, std::uint64_t config_hash) const;
  void load_checkpoint(const std::string& path, std::uint64_t config_hash);
  /// Loads only parameters, optimizer state and iteration; used to fine-tune under a new config.
  void load_weights(const std::string& path);

 private:
  struct Worker;
  std::vector<Transition> collect(Worker& w, int steps, std::vector<double>& bootstrap_out);

  TrainConfig train_;
  RewardConfig reward_;
  std::vector<Bag> bags_;
  std::uint64_t seed_;
  BondPerceptionConfig bonds_;
  Policy policy_;
  nn::Adam adam_;
  Rng rng_;
  std::vector<std::unique_ptr<Worker>> workers_;
  DiscoveryBuffer discovery_;
  long iter_ = 0;
  long env_steps_ = 0;
};

struct CheckpointInfo {
  std::uint64_t config_hash = 0;
  std::uint64_t net_hash = 0;
  long iteration = 0;
  long env_steps = 0;
};

/// Validates the container (magic, version, checksum) and reads the header fields.
CheckpointInfo read_checkpoint_info(const std::string& path);
/// Copies the saved parameters into `policy` (inference use); optimizer and worker state are skipped.
CheckpointInfo load_policy_weights(const std::string& path, Policy& policy);

/// Iterations (1-based, after which to save) for `count` evenly spaced checkpoints over `total`.
std::vector<long> checkpoint_schedule(long total, int count);

}  // namespace molrl
