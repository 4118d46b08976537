#include <iostream>

#include "common.hpp"
#include "molrl/discovery.hpp"
#include "molrl/energy.hpp"
#include "molrl/molgraph.hpp"
#include "molrl/protocol.hpp"

#ifndef MOLRL_DATA_DIR
#define MOLRL_DATA_DIR "data"
#endif

namespace molrl::cli {

namespace fs = std::filesystem;

void register_relax(CLI::App& app) {
  auto* cmd = app.add_subcommand("relax", "Relax every frame of an XYZ file; writes XYZ plus an energy trace CSV");
  auto input = std::make_shared<std::string>();
  auto output = std::make_shared<std::string>();
  auto trace = std::make_shared<std::string>();
  auto config = std::make_shared<std::string>();
  auto calculator = std::make_shared<std::string>();
  auto opts = std::make_shared<RelaxOptions>();
  cmd->add_option("-i,--input", *input, "Input XYZ")->required()->check(CLI::ExistingFile);
  cmd->add_option("-o,--output", *output, "Relaxed XYZ")->required();
  cmd->add_option("--trace", *trace, "Energy trace CSV (default: <output>.trace.csv)");
  cmd->add_option("-c,--config", *config, "Run config for calculator settings");
  cmd->add_option("--calculator", *calculator, "surrogate or external:<command>");
  cmd->add_option("--fmax", opts->fmax, "Convergence threshold on the largest atomic force (eV/A)");
  cmd->add_option("--max-steps", opts->max_steps, "Step limit");
  cmd->add_option("--step", opts->initial_step, "Largest single-atom displacement of a trial step (A)");
  cmd->callback([=] {
    RunConfig cfg;
    if (!config->empty()) cfg = load_run_config(*config);
    if (!calculator->empty()) cfg.calculator = *calculator;
    if (!(opts->fmax > 0) || opts->max_steps <= 0 || !(opts->initial_step > 0)) {
      throw ConfigError("fmax, max-steps and step must be positive");
    }
    const auto frames = read_xyz_file(*input);
    auto calc = make_run_calculator(cfg);
    const std::string trace_path = trace->empty() ? *output + ".trace.csv" : *trace;
    auto xyz = open_output(*output);
    std::ostringstream csv;
    csv.precision(12);
    csv << "frame,step,energy_ev,max_force_ev_ang,converged,stalled\n";
    for (std::size_t f = 0; f < frames.size(); ++f) {
      const RelaxResult r = relax(frames[f].canvas, *calc, *opts);
      for (std::size_t s = 0; s < r.energies.size(); ++s) {
        csv << f << ',' << s << ',' << r.energies[s] << ',' << r.max_forces[s] << ',' << (r.converged ? 1 : 0) << ','
            << (r.stalled ? 1 : 0) << '\n';
      }
      std::ostringstream comment;
      comment.precision(12);
      comment << "energy_ev=" << r.energies.back() << " steps=" << r.steps << " converged=" << (r.converged ? 1 : 0)
              << " stalled=" << (r.stalled ? 1 : 0);
      write_xyz(xyz, r.canvas, comment.str());
      std::printf("frame %zu: %d steps, E = %.6f eV, %s\n", f, r.steps, r.energies.back(),
                  r.converged ? "converged" : (r.stalled ? "stalled" : "step limit"));
    }
    write_text_atomic(trace_path, csv.str());
  });
}

void register_protocol_check(CLI::App& app) {
  auto* cmd = app.add_subcommand("protocol-check", "Replay golden transcripts against a calculator adapter");
  auto adapter = std::make_shared<std::string>();
  auto transcripts = std::make_shared<std::vector<std::string>>();
  auto timeout_ms = std::make_shared<long>(10000);
  auto compare = std::make_shared<bool>(false);
  cmd->add_option("--adapter", *adapter, std::string("Adapter command (default: $") + kAdapterEnvVar + ")");
  cmd->add_option("--transcript", *transcripts, "Golden transcript JSONL (repeatable)")->check(CLI::ExistingFile);
  cmd->add_option("--timeout-ms", *timeout_ms, "Per-response timeout");
  cmd->add_flag("--compare-values", *compare, "Also compare energies with the recorded values");
  cmd->callback([=] {
    std::string command = *adapter;
    if (command.empty()) {
      const char* env = std::getenv(kAdapterEnvVar);
      if (!env) throw ConfigError(std::string("no --adapter given and ") + kAdapterEnvVar + " is unset");
      command = env;
    }
    if (*timeout_ms <= 0) throw ConfigError("--timeout-ms must be positive");
    std::vector<std::string> files = *transcripts;
    if (files.empty()) files.push_back(std::string(MOLRL_DATA_DIR) + "/golden/protocol_core.jsonl");
    bool ok = true;
    for (const auto& path : files) {
      std::ifstream in(path);
      if (!in) throw ConfigError("cannot open transcript " + path);
      protocol::ConformanceOptions opts;
      opts.timeout = std::chrono::milliseconds(*timeout_ms);
      opts.compare_values = *compare;
      const auto report = protocol::check_conformance(command, in, opts);
      for (const auto& issue : report.issues) {
        std::printf("FAIL %s:%d: %s\n", path.c_str(), issue.line, issue.message.c_str());
      }
      std::printf("%s %s (%d exchanges, %zu violations)\n", report.passed() ? "PASS" : "FAIL", path.c_str(),
                  report.exchanges, report.issues.size());
      ok = ok && report.passed();
    }
    if (!ok) throw CommandError(kExitRuntime, "adapter does not conform");
  });
}

void register_enumerate(CLI::App& app) {
  auto* cmd = app.add_subcommand("enumerate", "List the valid connectivities of each formula as reference JSONL");
  auto formulas = std::make_shared<std::vector<std::string>>();
  auto bags = std::make_shared<std::string>();
  auto output = std::make_shared<std::string>();
  auto max_order = std::make_shared<int>(3);
  cmd->add_option("formulas", *formulas, "Formulas, e.g. C3H8O");
  cmd->add_option("--bags", *bags, "Formula list file")->check(CLI::ExistingFile);
  cmd->add_option("-o,--output", *output, "Output JSONL (default: stdout)");
  cmd->add_option("--max-bond-order", *max_order, "Largest bond order in the valence model");
  cmd->callback([=] {
    std::vector<Bag> list;
    for (const auto& f : *formulas) list.push_back(parse_formula(f));
    if (!bags->empty()) {
      for (const auto& b : load_bag_file(*bags)) list.push_back(b);
    }
    if (list.empty()) throw ConfigError("give formulas or --bags");
    if (*max_order < 1) throw ConfigError("--max-bond-order must be >= 1");
    std::ostringstream out;
    for (const auto& bag : list) {
      const std::string formula = bag.formula_key();
      const auto isomers = enumerate_isomers(bag, *max_order);
      for (const auto& g : isomers) out << Json{{"formula", formula}, {"canonical_key", canonical_key(g).key}}.dump() << '\n';
      std::fprintf(stderr, "%s: %zu isomers\n", formula.c_str(), isomers.size());
    }
    if (output->empty()) {
      std::cout << out.str();
    } else {
      write_text_atomic(*output, out.str());
    }
  });
}

}  // namespace molrl::cli
