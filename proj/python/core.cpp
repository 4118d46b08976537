#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "molrl/config.hpp"
#include "molrl/discovery.hpp"
#include "molrl/energy.hpp"
#include "molrl/molgraph.hpp"
#include "molrl/ppo.hpp"

namespace py = pybind11;
using namespace molrl;

namespace {

using Positions = std::vector<std::array<double, 3>>;

Canvas make_canvas(const std::vector<std::string>& elements, const Positions& positions) {
  if (elements.size() != positions.size()) throw std::invalid_argument("elements and positions differ in length");
  Canvas c;
  for (std::size_t i = 0; i < elements.size(); ++i) {
    const auto e = element_from_symbol(elements[i]);
    if (!e) throw std::invalid_argument("unknown element '" + elements[i] + "'");
    c.append(*e, {positions[i][0], positions[i][1], positions[i][2]});
  }
  return c;
}

Positions positions_of(const Canvas& c) {
  Positions out;
  for (const auto& a : c.atoms()) out.push_back({a.position.x, a.position.y, a.position.z});
  return out;
}

/// Training session driven by a run config file.
class Session {
 public:
  Session(const std::string& config_path, const std::vector<std::string>& overrides)
      : cfg_(load_run_config(config_path, overrides)) {
    cfg_.validate();
    const RunConfig cfg = cfg_;
    trainer_ = std::make_unique<Trainer>(cfg.train, cfg.reward, cfg.net, load_bag_file(cfg.train_bags),
                                         [cfg] { return make_run_calculator(cfg); }, cfg.seed, cfg.bonds);
  }

  std::string train_iteration() {
    py::gil_scoped_release release;
    Json row = trainer_->train_iteration().to_json();
    row["config_hash"] = cfg_.hash_hex();
    row["seed"] = cfg_.seed;
    return row.dump();
  }
  long iteration() const { return trainer_->iteration(); }
  std::string config_hash() const { return cfg_.hash_hex(); }
  void save(const std::string& path) const { trainer_->save_checkpoint(path, cfg_.hash()); }
  void load(const std::string& path) { trainer_->load_checkpoint(path, cfg_.hash()); }

 private:
  RunConfig cfg_;
  std::unique_ptr<Trainer> trainer_;
};

std::vector<std::string> sample(const std::string& config_path, const std::string& checkpoint,
                                const std::vector<std::string>& formulas, long count, std::uint64_t seed, bool greedy) {
  const RunConfig cfg = load_run_config(config_path);
  Policy policy(cfg.net, cfg.seed);
  const CheckpointInfo info = load_policy_weights(checkpoint, policy);
  std::vector<Bag> bags;
  for (const auto& f : formulas) bags.push_back(parse_formula(f));
  auto calc = make_run_calculator(cfg);
  MoleculeEnv env(cfg.reward, *calc, cfg.bonds);
  SampleOptions opt;
  opt.count = count;
  opt.seed = seed;
  opt.greedy = greedy;
  opt.iter = info.iteration;
  std::vector<std::string> rows;
  py::gil_scoped_release release;
  sample_protocol(policy, bags, env, opt, nullptr, nullptr,
                  [&](const MoleculeRecord& r) { rows.push_back(r.to_json().dump()); });
  return rows;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of molrl";
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
  py::register_exception<CalculatorError>(m, "CalculatorError", PyExc_RuntimeError);

  m.def("formula_key", [](const std::string& f) { return parse_formula(f).formula_key(); }, py::arg("formula"));
  m.def(
      "canonical_key",
      [](const std::vector<std::string>& el, const Positions& pos) {
        return canonical_key(perceive_bonds(make_canvas(el, pos))).key;
      },
      py::arg("elements"), py::arg("positions"));
  m.def(
      "is_valid", [](const std::vector<std::string>& el, const Positions& pos) { return is_valid(make_canvas(el, pos)); },
      py::arg("elements"), py::arg("positions"));
  m.def(
      "enumerate_isomers",
      [](const std::string& formula, int max_bond_order) {
        std::vector<std::string> keys;
        for (const auto& g : enumerate_isomers(parse_formula(formula), max_bond_order)) keys.push_back(canonical_key(g).key);
        return keys;
      },
      py::arg("formula"), py::arg("max_bond_order") = 3);
  m.def(
      "surrogate_energy",
      [](const std::vector<std::string>& el, const Positions& pos) {
        std::vector<Vec3> f;
        const double e = SurrogateCalculator::energy(make_canvas(el, pos), SurrogateParams::defaults(), &f);
        Positions forces;
        for (const auto& v : f) forces.push_back({v.x, v.y, v.z});
        return py::make_tuple(e, forces);
      },
      py::arg("elements"), py::arg("positions"));
  m.def(
      "relax",
      [](const std::vector<std::string>& el, const Positions& pos, double fmax, int max_steps) {
        SurrogateCalculator calc;
        RelaxOptions opt;
        opt.fmax = fmax;
        opt.max_steps = max_steps;
        const RelaxResult r = relax(make_canvas(el, pos), calc, opt);
        py::dict out;
        out["positions"] = positions_of(r.canvas);
        out["energies"] = r.energies;
        out["max_forces"] = r.max_forces;
        out["steps"] = r.steps;
        out["converged"] = r.converged;
        out["stalled"] = r.stalled;
        return out;
      },
      py::arg("elements"), py::arg("positions"), py::arg("fmax") = 1e-3, py::arg("max_steps") = 500);
  m.def(
      "compute_gae",
      [](const std::vector<double>& rewards, const std::vector<double>& values, const std::vector<bool>& dones,
         double gamma, double lam) {
        if (rewards.size() != dones.size() || values.size() != rewards.size() + 1) {
          throw std::invalid_argument("need len(values) == len(rewards) + 1 == len(dones) + 1");
        }
        const std::vector<std::uint8_t> d(dones.begin(), dones.end());
        GaeResult g = compute_gae(rewards, values, d, gamma, lam);
        return py::make_tuple(g.advantages, g.returns);
      },
      py::arg("rewards"), py::arg("values"), py::arg("dones"), py::arg("gamma") = 1.0, py::arg("lam") = 0.97);
  m.def("atomization_transform", &atomization_transform, py::arg("x"));
  m.def(
      "agent_preset",
      [](const std::string& name) {
        const RewardConfig c = agent_preset(name);
        py::dict out;
        out["coef_atomization"] = c.coef_atomization;
        out["coef_formation"] = c.coef_formation;
        out["coef_validity"] = c.coef_validity;
        out["kill_reward"] = c.kill_reward;
        out["shaping_per_step"] = c.shaping_per_step;
        return out;
      },
      py::arg("name"));
  m.def(
      "load_run_config",
      [](const std::string& path, const std::vector<std::string>& overrides) {
        return load_run_config(path, overrides).to_json().dump();
      },
      py::arg("path"), py::arg("overrides") = std::vector<std::string>{});
  m.def("_sample", &sample, py::arg("config"), py::arg("checkpoint"), py::arg("formulas"), py::arg("count"),
        py::arg("seed"), py::arg("greedy"));

  py::class_<Session>(m, "_Session")
      .def(py::init<const std::string&, const std::vector<std::string>&>(), py::arg("config"),
           py::arg("overrides") = std::vector<std::string>{})
      .def("train_iteration", &Session::train_iteration)
      .def_property_readonly("iteration", &Session::iteration)
      .def_property_readonly("config_hash", &Session::config_hash)
      .def("save_checkpoint", &Session::save, py::arg("path"))
      .def("load_checkpoint", &Session::load, py::arg("path"));
}
