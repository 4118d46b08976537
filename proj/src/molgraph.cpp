#include "molrl/molgraph.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

namespace molrl {

MolecularGraph::MolecularGraph(std::vector<Element> nodes, std::vector<Edge> edges)
    : nodes_(std::move(nodes)) {
  const int n = static_cast<int>(nodes_.size());
  for (auto& [a, b] : edges) {
    if (a == b) throw std::invalid_argument("MolecularGraph: self loop on node " + std::to_string(a));
    if (a < 0 || b < 0 || a >= n || b >= n) throw std::out_of_range("MolecularGraph: edge index out of range");
    if (a > b) std::swap(a, b);
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  edges_ = std::move(edges);
}

void MolecularGraph::set_bond_orders(std::vector<int> orders) {
  if (orders.size() != edges_.size()) throw std::invalid_argument("bond order count must match edge count");
  for (int o : orders) {
    if (o < 1) throw std::invalid_argument("bond orders must be >= 1");
  }
  bond_orders_ = std::move(orders);
}

std::vector<std::vector<int>> MolecularGraph::adjacency() const {
  std::vector<std::vector<int>> adj(nodes_.size());
  for (const auto& [a, b] : edges_) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  for (auto& row : adj) std::sort(row.begin(), row.end());
  return adj;
}

std::vector<int> MolecularGraph::degrees() const {
  std::vector<int> deg(nodes_.size(), 0);
  for (const auto& [a, b] : edges_) {
    ++deg[a];
    ++deg[b];
  }
  return deg;
}

std::pair<std::vector<int>, int> MolecularGraph::components() const {
  const int n = static_cast<int>(nodes_.size());
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); };
  for (const auto& [a, b] : edges_) parent[find(a)] = find(b);
  std::vector<int> label(n, -1);
  std::map<int, int> root_label;
  for (int i = 0; i < n; ++i) {
    const int r = find(i);
    auto [it, inserted] = root_label.emplace(r, static_cast<int>(root_label.size()));
    label[i] = it->second;
  }
  return {label, static_cast<int>(root_label.size())};
}

bool MolecularGraph::connected() const { return !nodes_.empty() && components().second == 1; }

MolecularGraph MolecularGraph::permuted(const std::vector<int>& perm) const {
  if (perm.size() != nodes_.size()) throw std::invalid_argument("permutation size mismatch");
  std::vector<Element> nodes(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) nodes[perm[i]] = nodes_[i];
  std::vector<Edge> edges;
  edges.reserve(edges_.size());
  for (const auto& [a, b] : edges_) edges.emplace_back(perm[a], perm[b]);
  return MolecularGraph(std::move(nodes), std::move(edges));
}

// ---------------------------------------------------------------------------

MolecularGraph perceive_bonds(const Canvas& canvas, const BondPerceptionConfig& cfg) {
  std::vector<Edge> edges;
  const int n = static_cast<int>(canvas.size());
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double cutoff =
          cfg.scale * (cfg.radii[index_of(canvas[i].element)] + cfg.radii[index_of(canvas[j].element)]);
      if (distance(canvas[i].position, canvas[j].position) < cutoff) edges.emplace_back(i, j);
    }
  }
  return MolecularGraph(canvas.elements(), std::move(edges));
}

std::optional<MolecularGraph> assign_bond_orders(const MolecularGraph& graph, int max_bond_order) {
  const int n = static_cast<int>(graph.size());
  const auto& edges = graph.edges();
  std::vector<int> need(n), open(n, 0);
  for (int i = 0; i < n; ++i) need[i] = element_info(graph.nodes()[i]).target_valence;
  for (const auto& [a, b] : edges) {
    ++open[a];
    ++open[b];
  }
  // Quick rejection: every atom must be reachable within [open, max*open].
  for (int i = 0; i < n; ++i) {
    if (open[i] > need[i] || open[i] * max_bond_order < need[i]) return std::nullopt;
  }
  std::vector<int> orders(edges.size(), 0);
  auto feasible = [&](int atom) {
    return need[atom] >= open[atom] && need[atom] <= open[atom] * max_bond_order;
  };
  std::function<bool(std::size_t)> search = [&](std::size_t k) -> bool {
    if (k == edges.size()) return true;  // need[] all zero here by the feasibility invariant
    const auto [a, b] = edges[k];
    --open[a];
    --open[b];
    for (int o = 1; o <= max_bond_order; ++o) {
      need[a] -= o;
      need[b] -= o;
      if (feasible(a) && feasible(b)) {
        orders[k] = o;
        if (search(k + 1)) return true;
      }
      need[a] += o;
      need[b] += o;
    }
    ++open[a];
    ++open[b];
    return false;
  };
  if (!search(0)) return std::nullopt;
  MolecularGraph out = graph;
  out.set_bond_orders(std::move(orders));
  return out;
}

bool is_valid_graph(const MolecularGraph& graph, int max_bond_order) {
  if (graph.size() == 0 || !graph.connected()) return false;
  return assign_bond_orders(graph, max_bond_order).has_value();
}

bool is_valid(const Canvas& canvas, const BondPerceptionConfig& cfg) {
  if (canvas.empty()) return false;
  return is_valid_graph(perceive_bonds(canvas, cfg), cfg.max_bond_order);
}

// ---------------------------------------------------------------------------
// Canonical keys
// ---------------------------------------------------------------------------

namespace {

// Initial colour rank follows the formula order so keys read like "CCHHHHHHO".
int element_rank(Element e) {
  switch (e) {
    case Element::C: return 0;
    case Element::H: return 1;
    case Element::N: return 2;
    case Element::O: return 3;
    case Element::S: return 4;
  }
  return 5;
}

// Replaces colours by dense ranks of (colour, sorted neighbour colours) until the number of cells
// stops growing. Ranks only depend on colour values, so the result is label independent.
int refine(std::vector<int>& colors, const std::vector<std::vector<int>>& adj) {
  const int n = static_cast<int>(colors.size());
  int cells = -1;
  std::vector<std::pair<std::vector<int>, int>> sig(n);
  while (true) {
    for (int v = 0; v < n; ++v) {
      auto& s = sig[v].first;
      s.clear();
      s.push_back(colors[v]);
      const std::size_t start = s.size();
      for (int u : adj[v]) s.push_back(colors[u]);
      std::sort(s.begin() + static_cast<long>(start), s.end());
      sig[v].second = v;
    }
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return sig[a].first < sig[b].first; });
    int rank = -1;
    for (int k = 0; k < n; ++k) {
      if (k == 0 || sig[order[k]].first != sig[order[k - 1]].first) ++rank;
      colors[order[k]] = rank;
    }
    const int now = rank + 1;
    if (now == cells) return cells;
    cells = now;
  }
}

struct CanonSearch {
  const std::vector<std::vector<int>>& adj;
  std::vector<Edge> best_code;
  std::vector<int> best_order;
  bool have_best = false;

  void run(std::vector<int> colors) {
    const int n = static_cast<int>(colors.size());
    const int cells = refine(colors, adj);
    if (cells == n) {
      std::vector<int> order(n);
      for (int v = 0; v < n; ++v) order[colors[v]] = v;
      std::vector<Edge> code;
      for (int v = 0; v < n; ++v) {
        for (int u : adj[v]) {
          if (v < u) {
            int a = colors[v], b = colors[u];
            if (a > b) std::swap(a, b);
            code.emplace_back(a, b);
          }
        }
      }
      std::sort(code.begin(), code.end());
      if (!have_best || code < best_code) {
        best_code = std::move(code);
        best_order = std::move(order);
        have_best = true;
      }
      return;
    }
    // First non-singleton cell in colour order.
    std::vector<int> cell_size(cells, 0);
    for (int c : colors) ++cell_size[c];
    int target = 0;
    while (cell_size[target] < 2) ++target;
    // Vertices with identical neighbourhoods are swapped by an automorphism that fixes the
    // current colouring; only one representative per twin class needs exploring.
    std::set<std::vector<int>> seen_neighborhoods;
    for (int v = 0; v < n; ++v) {
      if (colors[v] != target) continue;
      if (!seen_neighborhoods.insert(adj[v]).second) continue;
      std::vector<int> next(n);
      for (int u = 0; u < n; ++u) next[u] = 2 * colors[u] + (u == v ? 0 : 1);
      run(std::move(next));
    }
  }
};

}  // namespace

std::vector<int> canonical_order(const MolecularGraph& graph) {
  const auto adj = graph.adjacency();
  std::vector<int> colors(graph.size());
  for (std::size_t i = 0; i < graph.size(); ++i) colors[i] = element_rank(graph.nodes()[i]);
  CanonSearch search{adj, {}, {}, false};
  if (graph.size() == 0) return {};
  search.run(std::move(colors));
  return search.best_order;
}

CanonicalKey canonical_key(const MolecularGraph& graph) {
  const std::vector<int> order = canonical_order(graph);
  std::vector<int> pos(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) pos[order[k]] = static_cast<int>(k);
  std::string key(kCanonicalKeyPrefix);
  for (int v : order) key += symbol(graph.nodes()[v]);
  key += '|';
  std::vector<Edge> code;
  code.reserve(graph.edges().size());
  for (auto [a, b] : graph.edges()) {
    int x = pos[a], y = pos[b];
    if (x > y) std::swap(x, y);
    code.emplace_back(x, y);
  }
  std::sort(code.begin(), code.end());
  for (std::size_t k = 0; k < code.size(); ++k) {
    if (k) key += ',';
    key += std::to_string(code[k].first) + '-' + std::to_string(code[k].second);
  }
  return {key};
}

// ---------------------------------------------------------------------------
// Isomer enumeration
// ---------------------------------------------------------------------------

std::vector<MolecularGraph> enumerate_isomers(const Bag& bag, int max_bond_order) {
  std::vector<Element> heavy;
  for (Element e : kAllElements) {
    if (e == Element::H) continue;
    for (int k = 0; k < bag.count(e); ++k) heavy.push_back(e);
  }
  const int n_h = bag.count(Element::H);
  const int n_heavy = static_cast<int>(heavy.size());
  std::map<std::string, MolecularGraph> unique;

  if (n_heavy == 0) {
    if (n_h == 2) {
      MolecularGraph g({Element::H, Element::H}, {{0, 1}});
      unique.emplace(canonical_key(g).key, g);
    }
  } else {
    std::vector<Edge> pairs;
    for (int i = 0; i < n_heavy; ++i) {
      for (int j = i + 1; j < n_heavy; ++j) pairs.emplace_back(i, j);
    }
    std::vector<int> remaining(n_heavy);
    for (int i = 0; i < n_heavy; ++i) remaining[i] = element_info(heavy[i]).target_valence;
    std::vector<int> order(pairs.size(), 0);
    // Sum of remaining valence must end up equal to the hydrogen count.
    std::function<void(std::size_t, int)> search = [&](std::size_t k, int free_valence) {
      if (free_valence < n_h) return;
      if (k == pairs.size()) {
        if (free_valence != n_h) return;
        std::vector<Element> nodes = heavy;
        std::vector<Edge> edges;
        for (std::size_t p = 0; p < pairs.size(); ++p) {
          if (order[p] > 0) edges.push_back(pairs[p]);
        }
        for (int i = 0; i < n_heavy; ++i) {
          for (int h = 0; h < remaining[i]; ++h) {
            edges.emplace_back(i, static_cast<int>(nodes.size()));
            nodes.push_back(Element::H);
          }
        }
        MolecularGraph g(std::move(nodes), std::move(edges));
        if (!g.connected()) return;
        unique.emplace(canonical_key(g).key, std::move(g));
        return;
      }
      const auto [a, b] = pairs[k];
      for (int o = 0; o <= max_bond_order; ++o) {
        if (remaining[a] < o || remaining[b] < o) break;
        remaining[a] -= o;
        remaining[b] -= o;
        order[k] = o;
        search(k + 1, free_valence - 2 * o);
        remaining[a] += o;
        remaining[b] += o;
      }
      order[k] = 0;
    };
    int total = 0;
    for (int r : remaining) total += r;
    search(0, total);
  }
  std::vector<MolecularGraph> out;
  out.reserve(unique.size());
  for (auto& [key, g] : unique) out.push_back(std::move(g));
  return out;
}

}  // namespace molrl
