#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "molrl/chemcore.hpp"

namespace molrl {

struct BondPerceptionConfig {
  double scale = 1.2;
  RadiusTable radii = default_covalent_radii();
  int max_bond_order = 3;
};

using Edge = std::pair<int, int>;  // always first < second

/// Element-labelled connectivity graph with optional integer bond orders (parallel to `edges`).
class MolecularGraph {
 public:
  MolecularGraph() = default;
  /// Edges are normalized (i < j), sorted and de-duplicated; self loops and bad indices throw.
  MolecularGraph(std::vector<Element> nodes, std::vector<Edge> edges);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<Element>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::optional<std::vector<int>>& bond_orders() const { return bond_orders_; }
  void set_bond_orders(std::vector<int> orders);

  std::vector<std::vector<int>> adjacency() const;
  std::vector<int> degrees() const;
  /// Connected-component label per node plus the component count.
  std::pair<std::vector<int>, int> components() const;
  bool connected() const;

  /// Same graph with node `i` moved to position `perm[i]`.
  MolecularGraph permuted(const std::vector<int>& perm) const;

 private:
  std::vector<Element> nodes_;
  std::vector<Edge> edges_;
  std::optional<std::vector<int>> bond_orders_;
};

MolecularGraph perceive_bonds(const Canvas& canvas, const BondPerceptionConfig& cfg = {});

/// Backtracking over edges in index order (orders tried 1..max) until every atom's bond-order sum
/// equals its target valence. nullopt when no assignment exists.
std::optional<MolecularGraph> assign_bond_orders(const MolecularGraph& graph, int max_bond_order = 3);

/// Connected, covering all atoms and valence-satisfiable. A single atom is never valid.
bool is_valid(const Canvas& canvas, const BondPerceptionConfig& cfg = {});
bool is_valid_graph(const MolecularGraph& graph, int max_bond_order = 3);

struct CanonicalKey {
  std::string key;
  friend bool operator==(const CanonicalKey&, const CanonicalKey&) = default;
  friend auto operator<=>(const CanonicalKey&, const CanonicalKey&) = default;
};

inline constexpr std::string_view kCanonicalKeyPrefix = "v1:";

/// Permutation-invariant key over elements and connectivity (bond orders ignored), e.g.
/// "v1:CCHHHHHHO|0-1,0-2,...". Colour refinement followed by individualization over the first
/// non-trivial cell; the lexicographically smallest edge encoding over all leaves wins.
CanonicalKey canonical_key(const MolecularGraph& graph);

/// Canonical relabeling used for the key: `order[k]` is the original node at canonical position k.
std::vector<int> canonical_order(const MolecularGraph& graph);

/// All connected connectivity graphs for `bag` that admit a valence-satisfying bond-order
/// assignment, de-duplicated by canonical key and sorted by key.
std::vector<MolecularGraph> enumerate_isomers(const Bag& bag, int max_bond_order = 3);

}  // namespace molrl
