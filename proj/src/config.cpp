#include "molrl/config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "molrl/random.hpp"

namespace molrl {

namespace fs = std::filesystem;

namespace {

void check_keys(const Json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : obj.items()) {
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

std::string resolve(const std::string& base, const std::string& p) {
  if (p.empty()) return p;
  const fs::path path(p);
  if (path.is_absolute()) return path.lexically_normal().string();
  return fs::absolute(fs::path(base) / path).lexically_normal().string();
}

std::string schedule_text(const LinearSchedule& s) {
  std::ostringstream o;
  o.precision(17);
  o << s.start_iter << ':' << s.end_iter << ':' << s.start_value << ':' << s.end_value;
  return o.str();
}

Element pair_element(const std::string& sym, const std::string& where) {
  const auto e = element_from_symbol(sym);
  if (!e) throw ConfigError("unknown element '" + sym + "' in " + where);
  return *e;
}

void parse_reward(const Json& j, RewardConfig& r) {
  check_keys(j, "reward", {"coef_atomization", "coef_formation", "coef_validity", "shaping_per_step",
                           "kill_reward", "kill_distance", "energy_scale", "dipole_schedule"});
  r.coef_atomization = j.value("coef_atomization", r.coef_atomization);
  r.coef_formation = j.value("coef_formation", r.coef_formation);
  r.coef_validity = j.value("coef_validity", r.coef_validity);
  r.shaping_per_step = j.value("shaping_per_step", r.shaping_per_step);
  r.kill_reward = j.value("kill_reward", r.kill_reward);
  r.kill_distance = j.value("kill_distance", r.kill_distance);
  r.energy_scale = j.value("energy_scale", r.energy_scale);
  if (j.contains("dipole_schedule")) {
    const Json& s = j.at("dipole_schedule");
    if (s.is_null()) {
      r.dipole_schedule.reset();
    } else if (s.is_string()) {
      r.dipole_schedule = LinearSchedule::parse(s.get<std::string>());
    } else {
      throw ConfigError("reward.dipole_schedule must be \"start:end:v0:v1\" or null");
    }
  }
}

void parse_surrogate(const Json& j, SurrogateParams& p) {
  check_keys(j, "surrogate", {"valence_weight", "coordination_onset", "coordination_cutoff", "well_depth", "width"});
  p.valence_weight = j.value("valence_weight", p.valence_weight);
  p.coordination_onset = j.value("coordination_onset", p.coordination_onset);
  p.coordination_cutoff = j.value("coordination_cutoff", p.coordination_cutoff);
  for (const char* table : {"well_depth", "width"}) {
    if (!j.contains(table)) continue;
    PairTable& t = std::string(table) == "well_depth" ? p.well_depth : p.width;
    for (const auto& [pair, v] : j.at(table).items()) {
      const auto dash = pair.find('-');
      if (dash == std::string::npos) throw ConfigError("surrogate." + std::string(table) + " keys look like \"C-H\"");
      const Element a = pair_element(pair.substr(0, dash), "surrogate");
      const Element b = pair_element(pair.substr(dash + 1), "surrogate");
      t[index_of(a)][index_of(b)] = t[index_of(b)][index_of(a)] = v.get<double>();
    }
  }
}

void parse_bonds(const Json& j, BondPerceptionConfig& b, SurrogateParams& p) {
  check_keys(j, "bonds", {"scale", "max_bond_order", "radii"});
  b.scale = j.value("scale", b.scale);
  b.max_bond_order = j.value("max_bond_order", b.max_bond_order);
  if (j.contains("radii")) {
    for (const auto& [sym, v] : j.at("radii").items()) {
      const Element e = pair_element(sym, "bonds.radii");
      b.radii[index_of(e)] = v.get<double>();
      p.radii[index_of(e)] = v.get<double>();
    }
  }
}

}  // namespace

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (key.empty()) throw ConfigError("empty key in override " + assignment);
    if (!node->is_object()) throw ConfigError("override " + assignment + " descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = Json::object();
    start = dot + 1;
  }
}

RunConfig parse_run_config(const Json& doc, const std::string& base_dir) {
  RunConfig c;
  try {
    check_keys(doc, "config", {"seed", "agent", "train", "net", "reward", "surrogate", "bonds", "calculator",
                               "calculator_timeout_s", "bags", "iterations", "checkpoints", "output_dir"});
    c.seed = doc.value("seed", c.seed);
    c.agent = doc.value("agent", c.agent);
    c.reward = c.agent == "custom" ? RewardConfig{} : agent_preset(c.agent);
    if (doc.contains("reward")) parse_reward(doc.at("reward"), c.reward);
    if (doc.contains("train")) {
      check_keys(doc.at("train"), "train",
                 {"gamma", "lam", "clip_ratio", "vf_coef", "lr", "grad_clip", "minibatch", "steps_per_iter", "workers",
                  "epochs", "entropy_schedule", "normalize_advantages"});
      from_json(doc.at("train"), c.train);
    }
    if (doc.contains("net")) {
      check_keys(doc.at("net"), "net",
                 {"interactions", "width", "cutoff", "num_rbf", "rbf_gamma", "d_min", "d_max", "init_sigma_d",
                  "init_sigma_alpha", "init_sigma_psi"});
      from_json(doc.at("net"), c.net);
    }
    if (doc.contains("surrogate")) parse_surrogate(doc.at("surrogate"), c.surrogate);
    if (doc.contains("bonds")) parse_bonds(doc.at("bonds"), c.bonds, c.surrogate);
    c.calculator = doc.value("calculator", c.calculator);
    c.calculator_timeout_s = doc.value("calculator_timeout_s", c.calculator_timeout_s);
    if (doc.contains("bags")) {
      const Json& b = doc.at("bags");
      check_keys(b, "bags", {"train", "eval"});
      c.train_bags = resolve(base_dir, b.value("train", std::string()));
      c.eval_bags = resolve(base_dir, b.value("eval", std::string()));
    }
    c.iterations = doc.value("iterations", c.iterations);
    c.checkpoints = doc.value("checkpoints", c.checkpoints);
    c.output_dir = doc.value("output_dir", c.output_dir);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return c;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  Json doc = Json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config " + path + " is not valid JSON");
  for (const auto& o : overrides) apply_override(doc, o);
  const fs::path parent = fs::path(path).parent_path();
  return parse_run_config(doc, parent.empty() ? "." : parent.string());
}

void RunConfig::validate() const {
  try {
    train.validate();
    net.validate();
    reward.validate();
    surrogate.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (!(bonds.scale > 0)) throw ConfigError("bonds.scale must be positive");
  if (bonds.max_bond_order < 1) throw ConfigError("bonds.max_bond_order must be >= 1");
  if (iterations <= 0) throw ConfigError("iterations must be positive");
  if (checkpoints < 0) throw ConfigError("checkpoints must be >= 0");
  if (!(calculator_timeout_s > 0)) throw ConfigError("calculator_timeout_s must be positive");
  if (calculator != "surrogate" && calculator != "external" && calculator.rfind("external:", 0) != 0) {
    throw ConfigError("calculator must be surrogate, external or external:<command>");
  }
  if (calculator == "external" && !std::getenv(kAdapterEnvVar)) {
    throw ConfigError(std::string("calculator 'external' needs ") + kAdapterEnvVar);
  }
  if (train_bags.empty()) throw ConfigError("bags.train is required");
  for (const auto& p : {train_bags, eval_bags}) {
    if (!p.empty() && !fs::is_regular_file(p)) throw ConfigError("bag file not found: " + p);
  }
}

Json RunConfig::to_json() const {
  Json r{{"coef_atomization", reward.coef_atomization},
         {"coef_formation", reward.coef_formation},
         {"coef_validity", reward.coef_validity},
         {"shaping_per_step", reward.shaping_per_step},
         {"kill_reward", reward.kill_reward},
         {"kill_distance", reward.kill_distance},
         {"energy_scale", reward.energy_scale},
         {"dipole_schedule", reward.dipole_schedule ? Json(schedule_text(*reward.dipole_schedule)) : Json()}};
  Json depth = Json::object();
  Json width = Json::object();
  for (int a = 0; a < kNumElements; ++a) {
    for (int b = a; b < kNumElements; ++b) {
      const std::string key = std::string(symbol(kAllElements[a])) + "-" + std::string(symbol(kAllElements[b]));
      depth[key] = surrogate.well_depth[a][b];
      width[key] = surrogate.width[a][b];
    }
  }
  Json radii = Json::object();
  for (Element e : kAllElements) radii[std::string(symbol(e))] = bonds.radii[index_of(e)];
  Json train_json;
  molrl::to_json(train_json, train);
  Json net_json;
  molrl::to_json(net_json, net);
  return Json{{"seed", seed},
              {"agent", agent},
              {"train", train_json},
              {"net", net_json},
              {"reward", r},
              {"surrogate",
               {{"valence_weight", surrogate.valence_weight},
                {"coordination_onset", surrogate.coordination_onset},
                {"coordination_cutoff", surrogate.coordination_cutoff},
                {"well_depth", depth},
                {"width", width}}},
              {"bonds", {{"scale", bonds.scale}, {"max_bond_order", bonds.max_bond_order}, {"radii", radii}}},
              {"calculator", calculator},
              {"calculator_timeout_s", calculator_timeout_s},
              {"bags", {{"train", train_bags}, {"eval", eval_bags}}},
              {"iterations", iterations},
              {"checkpoints", checkpoints},
              {"output_dir", output_dir}};
}

std::uint64_t RunConfig::hash() const {
  Json j = to_json();
  j.erase("output_dir");
  j.erase("iterations");
  j.erase("checkpoints");
  // Bag files are identified by name so a copied run directory hashes the same.
  for (const char* k : {"train", "eval"}) {
    const std::string p = j["bags"][k].get<std::string>();
    j["bags"][k] = p.empty() ? "" : fs::path(p).filename().string();
  }
  return fnv1a(j.dump());
}

std::string RunConfig::hash_hex() const { return hex64(hash()); }

std::vector<Bag> parse_bag_list(std::istream& in, const std::string& name) {
  std::vector<Bag> bags;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    const std::string formula = line.substr(b, e - b + 1);
    try {
      Bag bag = parse_formula(formula);
      if (bag.total() < 2) throw FormulaError("a bag needs at least two atoms");
      bags.push_back(bag);
    } catch (const std::exception& ex) {
      throw ConfigError(name + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return bags;
}

std::vector<Bag> load_bag_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open bag file " + path);
  auto bags = parse_bag_list(in, path);
  if (bags.empty()) throw ConfigError("bag file " + path + " lists no formulas");
  return bags;
}

std::unique_ptr<Calculator> make_run_calculator(const RunConfig& cfg) {
  std::string spec = cfg.calculator;
  if (spec == "external") {
    const char* cmd = std::getenv(kAdapterEnvVar);
    if (!cmd) throw ConfigError(std::string("calculator 'external' needs ") + kAdapterEnvVar);
    spec = std::string("external:") + cmd;
  }
  const auto ms = std::chrono::milliseconds(static_cast<long long>(cfg.calculator_timeout_s * 1000.0));
  return make_calculator(spec, cfg.surrogate, ms);
}

}  // namespace molrl
