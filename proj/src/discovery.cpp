#include "molrl/discovery.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace molrl {

namespace {

std::string element_string(Element e) { return std::string(symbol(e)); }

Element parse_element(const Json& j) {
  const auto e = element_from_symbol(j.get<std::string>());
  if (!e) throw std::runtime_error("unknown element '" + j.get<std::string>() + "'");
  return *e;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

Json canvas_to_json(const Canvas& canvas) {
  Json elements = Json::array();
  Json positions = Json::array();
  for (const auto& a : canvas.atoms()) {
    elements.push_back(element_string(a.element));
    positions.push_back({a.position.x, a.position.y, a.position.z});
  }
  return Json{{"elements", elements}, {"positions", positions}};
}

Canvas canvas_from_json(const Json& j) {
  const Json& elements = j.at("elements");
  const Json& positions = j.at("positions");
  if (!elements.is_array() || !positions.is_array() || elements.size() != positions.size()) {
    throw std::runtime_error("canvas needs equally long 'elements' and 'positions' arrays");
  }
  Canvas c;
  for (std::size_t i = 0; i < elements.size(); ++i) {
    const Json& p = positions[i];
    if (!p.is_array() || p.size() != 3) throw std::runtime_error("position must be a 3-vector");
    c.append(parse_element(elements[i]), {p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
  }
  return c;
}

Json components_to_json(const RewardComponents& c) {
  return Json{{"A", c.atomization}, {"F", c.formation}, {"V", c.validity},
              {"shape", c.shaping},  {"kill", c.kill},     {"dipole", c.dipole}};
}

// ---------------------------------------------------------------------------

void ReferenceSet::add(const std::string& formula, const CanonicalKey& key, std::optional<double> energy) {
  auto& entry = entries_[formula];
  entry.keys.insert(key);
  if (energy) entry.energies.push_back(*energy);
}

const ReferenceEntry* ReferenceSet::find(const std::string& formula) const {
  const auto it = entries_.find(formula);
  return it == entries_.end() ? nullptr : &it->second;
}

std::size_t ReferenceSet::count(const std::string& formula) const {
  const auto* e = find(formula);
  return e ? e->keys.size() : 0;
}

ReferenceSet ReferenceSet::parse_jsonl(std::istream& in, const BondPerceptionConfig& bonds) {
  ReferenceSet set;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const Json j = Json::parse(line);
      const std::string formula = parse_formula(j.at("formula").get<std::string>()).formula_key();
      CanonicalKey key;
      if (j.contains("canonical_key")) {
        key.key = j.at("canonical_key").get<std::string>();
        if (!key.key.starts_with(kCanonicalKeyPrefix)) throw std::runtime_error("canonical_key lacks the v1: prefix");
      } else if (j.contains("xyz")) {
        std::istringstream xyz(j.at("xyz").get<std::string>());
        const auto frames = read_xyz(xyz);
        if (frames.size() != 1) throw std::runtime_error("xyz must hold exactly one frame");
        if (frames[0].canvas.composition().formula_key() != formula) {
          throw std::runtime_error("xyz composition does not match formula " + formula);
        }
        key = canonical_key(perceive_bonds(frames[0].canvas, bonds));
      } else {
        throw std::runtime_error("row needs canonical_key or xyz");
      }
      std::optional<double> energy;
      if (j.contains("energy_ev") && !j.at("energy_ev").is_null()) {
        energy = j.at("energy_ev").get<double>();
        if (!std::isfinite(*energy)) throw std::runtime_error("energy_ev must be finite");
      }
      set.add(formula, key, energy);
    } catch (const std::exception& e) {
      throw std::runtime_error("reference line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return set;
}

ReferenceSet ReferenceSet::load_jsonl(const std::string& path, const BondPerceptionConfig& bonds) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open reference file " + path);
  return parse_jsonl(in, bonds);
}

// ---------------------------------------------------------------------------

DiscoveryBuffer::DiscoveryBuffer(const DiscoveryBuffer& other) : formulas_(other.snapshot()) {}

DiscoveryBuffer& DiscoveryBuffer::operator=(const DiscoveryBuffer& other) {
  if (this != &other) {
    auto copy = other.snapshot();
    std::lock_guard lock(mutex_);
    formulas_ = std::move(copy);
  }
  return *this;
}

bool DiscoveryBuffer::record(const std::string& formula, const Canvas& canvas, double delta_e, long iter,
                             const BondPerceptionConfig& bonds) {
  const MolecularGraph g = perceive_bonds(canvas, bonds);
  const bool valid = is_valid_graph(g, bonds.max_bond_order);
  std::optional<CanonicalKey> key;
  if (valid) key = canonical_key(g);
  return record_known(formula, valid, key, canvas, delta_e, iter);
}

bool DiscoveryBuffer::record_known(const std::string& formula, bool valid, const std::optional<CanonicalKey>& key,
                                   const Canvas& canvas, double delta_e, long iter) {
  std::lock_guard lock(mutex_);
  auto& f = formulas_[formula];
  ++f.sampled;
  if (!valid || !key) return false;
  ++f.valid;
  auto [it, inserted] = f.isomers.try_emplace(*key);
  DiscoveryRecord& r = it->second;
  ++r.count;
  if (inserted) {
    r.key = *key;
    r.first_iter = iter;
    r.best_delta_e = delta_e;
    r.best_canvas = canvas;
  } else if (delta_e > r.best_delta_e) {
    r.best_delta_e = delta_e;
    r.best_canvas = canvas;
  }
  return inserted;
}

std::map<std::string, FormulaDiscoveries> DiscoveryBuffer::snapshot() const {
  std::lock_guard lock(mutex_);
  return formulas_;
}

std::size_t DiscoveryBuffer::unique_count(const std::string& formula) const {
  std::lock_guard lock(mutex_);
  const auto it = formulas_.find(formula);
  return it == formulas_.end() ? 0 : it->second.isomers.size();
}

std::size_t DiscoveryBuffer::total_unique() const {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (const auto& [k, f] : formulas_) n += f.isomers.size();
  return n;
}

Json DiscoveryBuffer::to_json() const {
  std::lock_guard lock(mutex_);
  Json out = Json::object();
  for (const auto& [formula, f] : formulas_) {
    Json isomers = Json::array();
    for (const auto& [key, r] : f.isomers) {
      isomers.push_back({{"key", key.key},
                         {"first_iter", r.first_iter},
                         {"count", r.count},
                         {"best_delta_e", r.best_delta_e},
                         {"canvas", canvas_to_json(r.best_canvas)}});
    }
    out[formula] = {{"sampled", f.sampled}, {"valid", f.valid}, {"isomers", isomers}};
  }
  return out;
}

DiscoveryBuffer DiscoveryBuffer::from_json(const Json& j) {
  DiscoveryBuffer b;
  for (const auto& [formula, f] : j.items()) {
    FormulaDiscoveries d;
    d.sampled = f.at("sampled").get<long>();
    d.valid = f.at("valid").get<long>();
    for (const auto& iso : f.at("isomers")) {
      DiscoveryRecord r;
      r.key.key = iso.at("key").get<std::string>();
      r.first_iter = iso.at("first_iter").get<long>();
      r.count = iso.at("count").get<long>();
      r.best_delta_e = iso.at("best_delta_e").get<double>();
      r.best_canvas = canvas_from_json(iso.at("canvas"));
      d.isomers.emplace(r.key, std::move(r));
    }
    b.formulas_.emplace(formula, std::move(d));
  }
  return b;
}

void DiscoveryBuffer::write_jsonl(std::ostream& out, const Json& extra) const {
  const auto all = snapshot();
  for (const auto& [formula, f] : all) {
    for (const auto& [key, r] : f.isomers) {
      Json row = {{"formula", formula},         {"key", key.key},
                  {"first_iter", r.first_iter}, {"count", r.count},
                  {"best_delta_e", r.best_delta_e}};
      row.update(canvas_to_json(r.best_canvas));
      row.update(extra);
      out << row.dump() << '\n';
    }
  }
}

// ---------------------------------------------------------------------------

RatioCounts ratios(const std::set<CanonicalKey>& discovered, const ReferenceEntry* reference) {
  RatioCounts c;
  c.n_unique = discovered.size();
  if (reference) {
    c.n_reference = reference->keys.size();
    for (const auto& k : discovered) {
      if (reference->keys.count(k)) ++c.n_rediscovered;
    }
  }
  c.n_novel = c.n_unique - c.n_rediscovered;
  if (c.n_rediscovered + c.n_novel != c.n_unique) throw std::logic_error("discovery count identity violated");
  if (c.n_reference > 0) {
    c.rediscovery = static_cast<double>(c.n_rediscovered) / static_cast<double>(c.n_reference);
    c.expansion = static_cast<double>(c.n_novel) / static_cast<double>(c.n_reference);
  }
  return c;
}

double rae(double energy, const std::vector<double>& reference_energies) {
  if (reference_energies.empty()) throw std::invalid_argument("rae: empty reference energy list");
  double s = 0.0;
  for (double e : reference_energies) s += e;
  return energy - s / static_cast<double>(reference_energies.size());
}

double rmsd(const Canvas& before, const Canvas& after) {
  if (before.size() != after.size()) throw std::invalid_argument("rmsd: atom count mismatch");
  if (before.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const Vec3 d = before[i].position - after[i].position;
    s += dot(d, d);
  }
  return std::sqrt(s / static_cast<double>(before.size()));
}

bool relax_stability(const Canvas& before, const Canvas& after, const BondPerceptionConfig& bonds) {
  return canonical_key(perceive_bonds(before, bonds)) == canonical_key(perceive_bonds(after, bonds));
}

BagMetrics aggregate(const std::vector<BagMetrics>& per_bag) {
  if (per_bag.empty()) throw std::invalid_argument("aggregate: no bags");
  BagMetrics out;
  out.formula = "ALL";
  double total = 0.0;
  for (const auto& b : per_bag) {
    if (b.n_sampled < 0) throw std::invalid_argument("aggregate: negative sample count");
    total += static_cast<double>(b.n_sampled);
    out.n_sampled += b.n_sampled;
    out.n_valid += b.n_valid;
    out.rrae_count += b.rrae_count;
    out.counts.n_unique += b.counts.n_unique;
    out.counts.n_rediscovered += b.counts.n_rediscovered;
    out.counts.n_novel += b.counts.n_novel;
    out.counts.n_reference += b.counts.n_reference;
  }
  if (!(total > 0)) throw std::invalid_argument("aggregate: total sample count is zero");

  auto weighted = [&](auto get) -> std::optional<double> {
    double num = 0.0, den = 0.0;
    for (const auto& b : per_bag) {
      const std::optional<double> v = get(b);
      if (!v) continue;
      const double w = static_cast<double>(b.n_sampled) / total;
      num += w * *v;
      den += w;
    }
    if (den == 0.0) return std::nullopt;
    return num / den;
  };
  out.validity = *weighted([](const BagMetrics& b) { return std::optional<double>(b.validity); });
  out.counts.rediscovery = weighted([](const BagMetrics& b) { return b.counts.rediscovery; });
  out.counts.expansion = weighted([](const BagMetrics& b) { return b.counts.expansion; });
  out.mean_rae = weighted([](const BagMetrics& b) { return b.mean_rae; });
  out.mean_rrae = weighted([](const BagMetrics& b) { return b.mean_rrae; });
  out.mean_rmsd = weighted([](const BagMetrics& b) { return b.mean_rmsd; });
  out.relax_stability = weighted([](const BagMetrics& b) { return b.relax_stability; });
  out.uniqueness = weighted([](const BagMetrics& b) { return b.uniqueness; });
  return out;
}

// ---------------------------------------------------------------------------

Json MoleculeRecord::to_json() const {
  Json j = {{"formula", formula},
            {"bag_index", bag_index},
            {"episode", episode},
            {"killed", killed},
            {"valid", valid},
            {"key", key ? Json(key->key) : Json(nullptr)},
            {"delta_e", opt_json(delta_e)},
            {"reward", total_reward},
            {"components", components_to_json(reward)}};
  j.update(canvas_to_json(canvas));
  return j;
}

MoleculeRecord MoleculeRecord::from_json(const Json& j) {
  MoleculeRecord r;
  r.formula = parse_formula(j.at("formula").get<std::string>()).formula_key();
  r.bag_index = j.value("bag_index", 0);
  r.episode = j.value("episode", 0L);
  r.canvas = canvas_from_json(j);
  r.killed = j.value("killed", false);
  r.valid = j.value("valid", false);
  if (j.contains("key") && j.at("key").is_string()) r.key = CanonicalKey{j.at("key").get<std::string>()};
  if (j.contains("delta_e") && j.at("delta_e").is_number()) r.delta_e = j.at("delta_e").get<double>();
  r.total_reward = j.value("reward", 0.0);
  if (j.contains("components")) {
    const Json& c = j.at("components");
    r.reward.atomization = c.value("A", 0.0);
    r.reward.formation = c.value("F", 0.0);
    r.reward.validity = c.value("V", 0.0);
    r.reward.shaping = c.value("shape", 0.0);
    r.reward.kill = c.value("kill", 0.0);
    r.reward.dipole = c.value("dipole", 0.0);
  }
  return r;
}

BagMetrics evaluate_bag(const std::string& formula, const std::vector<const MoleculeRecord*>& records,
                        const ReferenceSet& reference, Calculator& calc, const EvaluateOptions& options) {
  BagMetrics m;
  m.formula = formula;
  m.n_sampled = static_cast<long>(records.size());
  const ReferenceEntry* ref = reference.find(formula);
  const bool have_energies = ref && !ref->energies.empty();

  std::set<CanonicalKey> keys;
  double rae_sum = 0.0, rrae_sum = 0.0, rmsd_sum = 0.0;
  long rae_n = 0, stable_n = 0;
  for (const MoleculeRecord* r : records) {
    // Validity is recomputed so hand-edited or foreign files are judged by the same rule.
    const MolecularGraph g = perceive_bonds(r->canvas, options.bonds);
    if (r->killed || !is_valid_graph(g, options.bonds.max_bond_order)) continue;
    ++m.n_valid;
    keys.insert(canonical_key(g));
    if (have_energies) {
      rae_sum += rae(calc.calculate(r->canvas, {}).energy, ref->energies);
      ++rae_n;
    }
    if (options.relax) {
      const RelaxResult rx = relax(r->canvas, calc, options.relax_options);
      if (!rx.converged) continue;
      ++m.rrae_count;
      rmsd_sum += rmsd(r->canvas, rx.canvas);
      if (relax_stability(r->canvas, rx.canvas, options.bonds)) ++stable_n;
      if (have_energies) rrae_sum += rae(rx.energies.back(), ref->energies);
    }
  }
  m.validity = m.n_sampled > 0 ? static_cast<double>(m.n_valid) / static_cast<double>(m.n_sampled) : 0.0;
  m.counts = ratios(keys, ref);
  if (rae_n > 0) m.mean_rae = rae_sum / static_cast<double>(rae_n);
  if (m.rrae_count > 0) {
    const double n = static_cast<double>(m.rrae_count);
    m.mean_rmsd = rmsd_sum / n;
    m.relax_stability = static_cast<double>(stable_n) / n;
    if (have_energies) m.mean_rrae = rrae_sum / n;
  }
  if (options.uniqueness && m.n_valid > 0) {
    m.uniqueness = static_cast<double>(keys.size()) / static_cast<double>(m.n_valid);
  }
  return m;
}

std::pair<std::vector<BagMetrics>, BagMetrics> evaluate_records(const std::vector<MoleculeRecord>& records,
                                                                const ReferenceSet& reference, Calculator& calc,
                                                                const EvaluateOptions& options) {
  std::map<std::string, std::vector<const MoleculeRecord*>> by_formula;
  for (const auto& r : records) by_formula[r.formula].push_back(&r);
  std::vector<BagMetrics> rows;
  for (const auto& [formula, rs] : by_formula) rows.push_back(evaluate_bag(formula, rs, reference, calc, options));
  BagMetrics total;
  total.formula = "ALL";
  if (!rows.empty() && !records.empty()) total = aggregate(rows);
  return {rows, total};
}

void write_report_csv(std::ostream& out, const std::vector<BagMetrics>& rows, const BagMetrics& total,
                      bool uniqueness, const std::string& header_comment) {
  if (!header_comment.empty()) out << "# " << header_comment << '\n';
  out << "formula,n_sampled,n_valid,validity,n_unique,n_rediscovered,n_novel,n_reference,rediscovery_ratio,"
         "expansion_ratio,mean_rae,mean_rrae,rrae_count,mean_rmsd,relax_stability";
  if (uniqueness) out << ",uniqueness";
  out << '\n';
  auto write_row = [&](const BagMetrics& m) {
    out << m.formula << ',' << m.n_sampled << ',' << m.n_valid << ',' << fmt(m.validity) << ',' << m.counts.n_unique
        << ',' << m.counts.n_rediscovered << ',' << m.counts.n_novel << ',' << m.counts.n_reference << ','
        << fmt(m.counts.rediscovery) << ',' << fmt(m.counts.expansion) << ',' << fmt(m.mean_rae) << ','
        << fmt(m.mean_rrae) << ',' << m.rrae_count << ',' << fmt(m.mean_rmsd) << ',' << fmt(m.relax_stability);
    if (uniqueness) out << ',' << fmt(m.uniqueness);
    out << '\n';
  };
  for (const auto& r : rows) write_row(r);
  if (!rows.empty()) write_row(total);
}

// ---------------------------------------------------------------------------

std::vector<long> sample_counts(const std::vector<Bag>& bags, const SampleOptions& options,
                                const ReferenceSet* reference) {
  std::vector<long> counts;
  for (const Bag& b : bags) {
    if (options.greedy) {
      counts.push_back(1);
    } else if (options.mode == SampleMode::FixedCount) {
      counts.push_back(options.count);
    } else {
      if (!reference) throw std::invalid_argument("proportional sampling needs a reference set");
      const double n = options.proportionality * static_cast<double>(reference->count(b.formula_key()));
      counts.push_back(std::lround(n));
    }
  }
  return counts;
}

MoleculeRecord run_episode(const Policy& policy, MoleculeEnv& env, const Bag& bag, Rng& rng, bool greedy, long iter) {
  MoleculeRecord rec;
  rec.formula = bag.formula_key();
  State state = env.reset(bag);
  while (true) {
    const PolicySample s = policy.sample(state, rng, greedy);
    StepOutcome out = env.step(state, s.action, iter);
    rec.reward.atomization += out.components.atomization;
    rec.reward.formation += out.components.formation;
    rec.reward.validity += out.components.validity;
    rec.reward.shaping += out.components.shaping;
    rec.reward.kill += out.components.kill;
    rec.reward.dipole += out.components.dipole;
    rec.total_reward += out.reward;
    state = std::move(out.next);
    if (out.done) {
      rec.killed = out.kill;
      if (out.terminal) {
        rec.valid = out.terminal->valid;
        rec.delta_e = out.terminal->delta_e;
      }
      break;
    }
  }
  rec.canvas = state.canvas;
  if (rec.valid) rec.key = canonical_key(perceive_bonds(rec.canvas, env.bond_config()));
  return rec;
}

void sample_protocol(const Policy& policy, const std::vector<Bag>& bags, MoleculeEnv& env,
                     const SampleOptions& options, const ReferenceSet* reference, DiscoveryBuffer* buffer,
                     const std::function<void(const MoleculeRecord&)>& sink) {
  const std::vector<long> counts = sample_counts(bags, options, reference);
  for (std::size_t b = 0; b < bags.size(); ++b) {
    Rng rng(mix_seed(options.seed, b));
    for (long e = 0; e < counts[b]; ++e) {
      MoleculeRecord rec = run_episode(policy, env, bags[b], rng, options.greedy, options.iter);
      rec.bag_index = static_cast<int>(b);
      rec.episode = e;
      if (buffer) buffer->record_known(rec.formula, rec.valid, rec.key, rec.canvas, rec.delta_e.value_or(0.0), options.iter);
      if (sink) sink(rec);
    }
  }
}

}  // namespace molrl
