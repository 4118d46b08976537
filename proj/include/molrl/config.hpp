#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "molrl/chemcore.hpp"
#include "molrl/energy.hpp"
#include "molrl/env.hpp"
#include "molrl/json.hpp"
#include "molrl/molgraph.hpp"
#include "molrl/policy.hpp"
#include "molrl/ppo.hpp"

namespace molrl {

/// Bad or inconsistent configuration; the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Environment variable naming the adapter command used by `"calculator": "external"`.
inline constexpr const char* kAdapterEnvVar = "MOLRL_ADAPTER";

struct RunConfig {
  std::uint64_t seed = 0;
  /// Preset name (A, AV, F, FV, AFV) or "custom"; explicit reward fields override the preset.
  std::string agent = "AV";
  TrainConfig train;
  NetConfig net;
  RewardConfig reward = agent_preset("AV");
  SurrogateParams surrogate = SurrogateParams::defaults();
  BondPerceptionConfig bonds;
  std::string calculator = "surrogate";
  double calculator_timeout_s = 30.0;
  std::string train_bags;  // resolved paths
  std::string eval_bags;
  long iterations = 100;
  int checkpoints = 4;
  std::string output_dir = "run";

  /// Checks invariants and that referenced files exist.
  void validate() const;
  /// Canonical JSON of every field (paths as resolved).
  Json to_json() const;
  /// Hash over the fields that define the run; output_dir, iterations and checkpoints are excluded.
  std::uint64_t hash() const;
  std::string hash_hex() const;
};

/// Parses the document; relative bag paths are resolved against `base_dir`. Throws ConfigError.
RunConfig parse_run_config(const Json& doc, const std::string& base_dir = ".");
/// Reads a JSON file and applies `overrides` ("a.b=value", value parsed as JSON, else as string)
/// before parsing.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {});
void apply_override(Json& doc, const std::string& assignment);

/// One formula per line; blank lines and text after '#' are ignored. Throws ConfigError.
std::vector<Bag> load_bag_file(const std::string& path);
std::vector<Bag> parse_bag_list(std::istream& in, const std::string& name = "<bags>");

/// "surrogate", "external:<command>" or "external" (command from MOLRL_ADAPTER).
std::unique_ptr<Calculator> make_run_calculator(const RunConfig& cfg);

std::string hex64(std::uint64_t v);

}  // namespace molrl
