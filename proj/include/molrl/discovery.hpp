#pragma once

#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "molrl/chemcore.hpp"
#include "molrl/energy.hpp"
#include "molrl/env.hpp"
#include "molrl/json.hpp"
#include "molrl/molgraph.hpp"
#include "molrl/policy.hpp"

namespace molrl {

/// {"elements": [...], "positions": [[x, y, z], ...]}
Json canvas_to_json(const Canvas& canvas);
Canvas canvas_from_json(const Json& j);
Json components_to_json(const RewardComponents& c);

// ---------------------------------------------------------------------------
// Reference isomers
// ---------------------------------------------------------------------------

struct ReferenceEntry {
  std::set<CanonicalKey> keys;
  std::vector<double> energies;  // eV, may be empty
};

/// formula key -> reference isomers (and optional energies).
class ReferenceSet {
 public:
  /// JSONL rows {"formula", "canonical_key" | "xyz", "energy_ev"?}. An "xyz" block is keyed with
  /// this library's bond perception. Throws std::runtime_error citing the line on bad input.
  static ReferenceSet load_jsonl(const std::string& path, const BondPerceptionConfig& bonds = {});
  static ReferenceSet parse_jsonl(std::istream& in, const BondPerceptionConfig& bonds = {});

  void add(const std::string& formula, const CanonicalKey& key, std::optional<double> energy = std::nullopt);
  const ReferenceEntry* find(const std::string& formula) const;
  std::size_t count(const std::string& formula) const;
  const std::map<std::string, ReferenceEntry>& entries() const { return entries_; }

 private:
  std::map<std::string, ReferenceEntry> entries_;
};

// ---------------------------------------------------------------------------
// Cumulative discovery buffer
// ---------------------------------------------------------------------------

struct DiscoveryRecord {
  CanonicalKey key;
  long first_iter = 0;
  long count = 0;
  double best_delta_e = 0.0;
  Canvas best_canvas;
};

struct FormulaDiscoveries {
  long sampled = 0;
  long valid = 0;
  std::map<CanonicalKey, DiscoveryRecord> isomers;
};

/// Thread-safe append-only store of every generated molecule, keyed per formula.
class DiscoveryBuffer {
 public:
  DiscoveryBuffer() = default;
  DiscoveryBuffer(const DiscoveryBuffer& other);
  DiscoveryBuffer& operator=(const DiscoveryBuffer& other);

  /// Counts the sample; valid molecules are keyed by their connectivity and keep the best delta E.
  /// Returns true when a new isomer was added.
  bool record(const std::string& formula, const Canvas& canvas, double delta_e, long iter,
              const BondPerceptionConfig& bonds = {});
  /// Same with validity and key already known.
  bool record_known(const std::string& formula, bool valid, const std::optional<CanonicalKey>& key,
                    const Canvas& canvas, double delta_e, long iter);

  std::map<std::string, FormulaDiscoveries> snapshot() const;
  std::size_t unique_count(const std::string& formula) const;
  std::size_t total_unique() const;

  Json to_json() const;
  static DiscoveryBuffer from_json(const Json& j);
  /// One JSON object per isomer, sorted by formula then key; `extra` fields are added to each row.
  void write_jsonl(std::ostream& out, const Json& extra = Json::object()) const;

 private:
  mutable std::mutex mutex_;
  std::map<std::string, FormulaDiscoveries> formulas_;
};

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct RatioCounts {
  std::size_t n_unique = 0;
  std::size_t n_rediscovered = 0;
  std::size_t n_novel = 0;
  std::size_t n_reference = 0;
  std::optional<double> rediscovery;  // null when the formula is not in the reference
  std::optional<double> expansion;    // null when the formula is not in the reference
};

RatioCounts ratios(const std::set<CanonicalKey>& discovered, const ReferenceEntry* reference);

/// E minus the mean reference energy. Throws on an empty reference list.
double rae(double energy, const std::vector<double>& reference_energies);
/// Root mean square displacement without alignment. Throws on atom count mismatch.
double rmsd(const Canvas& before, const Canvas& after);
/// True when relaxation preserved the connectivity key.
bool relax_stability(const Canvas& before, const Canvas& after, const BondPerceptionConfig& bonds = {});

struct BagMetrics {
  std::string formula;
  long n_sampled = 0;
  long n_valid = 0;
  double validity = 0.0;
  RatioCounts counts;
  std::optional<double> mean_rae;
  std::optional<double> mean_rrae;
  long rrae_count = 0;  // valid molecules whose relaxation converged
  std::optional<double> mean_rmsd;
  std::optional<double> relax_stability;
  std::optional<double> uniqueness;  // unique / valid, reported only on request
};

/// Weighted by n_sampled. Optional fields average over the bags where they are defined.
BagMetrics aggregate(const std::vector<BagMetrics>& per_bag);

/// One generated molecule, as written to molecules.jsonl.
struct MoleculeRecord {
  std::string formula;
  int bag_index = 0;
  long episode = 0;
  Canvas canvas;
  bool killed = false;
  bool valid = false;
  std::optional<CanonicalKey> key;
  std::optional<double> delta_e;
  RewardComponents reward;
  double total_reward = 0.0;

  Json to_json() const;
  static MoleculeRecord from_json(const Json& j);
};

struct EvaluateOptions {
  bool relax = true;
  RelaxOptions relax_options;
  bool uniqueness = false;
  BondPerceptionConfig bonds;
};

/// Per-bag metrics for the records of one formula. `calc` is used for energies and relaxation.
BagMetrics evaluate_bag(const std::string& formula, const std::vector<const MoleculeRecord*>& records,
                        const ReferenceSet& reference, Calculator& calc, const EvaluateOptions& options);

/// Groups records by formula (sorted), evaluates each, returns per-bag rows plus the aggregate.
std::pair<std::vector<BagMetrics>, BagMetrics> evaluate_records(const std::vector<MoleculeRecord>& records,
                                                                const ReferenceSet& reference, Calculator& calc,
                                                                const EvaluateOptions& options);

void write_report_csv(std::ostream& out, const std::vector<BagMetrics>& rows, const BagMetrics& total,
                      bool uniqueness, const std::string& header_comment);

// ---------------------------------------------------------------------------
// Sampling protocols
// ---------------------------------------------------------------------------

enum class SampleMode { FixedCount, Proportional };

struct SampleOptions {
  SampleMode mode = SampleMode::FixedCount;
  long count = 10000;          // episodes per bag in fixed-count mode
  double proportionality = 100;  // N_i = P * N_i^ref in proportional mode
  bool greedy = false;         // one deterministic episode per bag
  std::uint64_t seed = 0;
  long iter = 0;               // passed to the reward schedule
};

/// Episodes per bag under `options`; proportional mode needs the reference.
std::vector<long> sample_counts(const std::vector<Bag>& bags, const SampleOptions& options,
                                const ReferenceSet* reference);

/// Runs one episode from `bag` with the policy; returns the final record.
MoleculeRecord run_episode(const Policy& policy, MoleculeEnv& env, const Bag& bag, Rng& rng, bool greedy, long iter);

/// Rolls out every bag in order. Each bag gets its own RNG stream so the stream is reproducible.
/// `sink` receives every record; valid ones are also added to `buffer` when given.
void sample_protocol(const Policy& policy, const std::vector<Bag>& bags, MoleculeEnv& env,
                     const SampleOptions& options, const ReferenceSet* reference, DiscoveryBuffer* buffer,
                     const std::function<void(const MoleculeRecord&)>& sink);

}  // namespace molrl
