#include <iostream>
#include <map>

#include "common.hpp"
#include "molrl/discovery.hpp"
#include "molrl/ppo.hpp"

namespace molrl::cli {

namespace fs = std::filesystem;

namespace {

/// The config written by `train` next to the checkpoints directory.
std::string default_run_config(const std::string& checkpoint) {
  return (fs::path(checkpoint).parent_path().parent_path() / "config.json").string();
}

}  // namespace

void register_sample(CLI::App& app) {
  auto* cmd = app.add_subcommand("sample", "Generate molecules from a checkpoint; writes molecules.jsonl and molecules.xyz");
  auto flags = std::make_shared<ConfigFlags>();
  auto checkpoint = std::make_shared<std::string>();
  auto bags_path = std::make_shared<std::string>();
  auto mode = std::make_shared<std::string>("fixed");
  auto count = std::make_shared<long>(10000);
  auto factor = std::make_shared<double>(100.0);
  auto reference = std::make_shared<std::string>();
  auto greedy = std::make_shared<bool>(false);
  auto output = std::make_shared<std::string>();
  flags->add_to(*cmd, false);
  cmd->add_option("--checkpoint", *checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--bags", *bags_path, "Formula list (default: the config's eval bags, else train bags)");
  cmd->add_option("--mode", *mode, "fixed (N per bag) or proportional (P x reference count)")
      ->check(CLI::IsMember({"fixed", "proportional"}));
  cmd->add_option("-n,--count", *count, "Episodes per bag in fixed mode");
  cmd->add_option("-P,--proportionality", *factor, "Proportionality factor in proportional mode");
  cmd->add_option("--reference", *reference, "Reference isomers (JSONL), required in proportional mode");
  cmd->add_flag("--greedy", *greedy, "One most-likely molecule per bag");
  cmd->add_option("-o,--output", *output, "Output directory")->required();
  cmd->callback([=] {
    ConfigFlags f = *flags;
    if (f.path.empty()) f.path = default_run_config(*checkpoint);
    RunConfig cfg = f.load();
    if (!bags_path->empty()) {
      cfg.eval_bags = *bags_path;
    } else if (cfg.eval_bags.empty()) {
      cfg.eval_bags = cfg.train_bags;
    }
    cfg.validate();
    if (!fs::is_regular_file(cfg.eval_bags)) throw ConfigError("bag file not found: " + cfg.eval_bags);
    const auto bags = load_bag_file(cfg.eval_bags);

    SampleOptions opts;
    opts.mode = *mode == "fixed" ? SampleMode::FixedCount : SampleMode::Proportional;
    opts.count = *count;
    opts.proportionality = *factor;
    opts.greedy = *greedy;
    opts.seed = cfg.seed;
    if (opts.count <= 0 || !(opts.proportionality > 0)) throw ConfigError("count and proportionality must be positive");
    std::optional<ReferenceSet> ref;
    if (!reference->empty()) ref = ReferenceSet::load_jsonl(*reference, cfg.bonds);
    if (opts.mode == SampleMode::Proportional && !ref) throw ConfigError("proportional mode needs --reference");

    Policy policy(cfg.net, cfg.seed);
    const CheckpointInfo info = load_policy_weights(*checkpoint, policy);
    if (info.config_hash != cfg.hash()) {
      std::cerr << "warning: checkpoint config hash " << hex64(info.config_hash) << " differs from config "
                << cfg.hash_hex() << '\n';
    }
    opts.iter = info.iteration;

    auto calc = make_run_calculator(cfg);
    MoleculeEnv env(cfg.reward, *calc, cfg.bonds);
    const fs::path dir(*output);
    auto jsonl = open_output(dir / "molecules.jsonl");
    auto xyz = open_output(dir / "molecules.xyz");
    const Json prov = provenance(cfg);
    const std::string comment_tail = " " + provenance_comment(cfg);
    long n = 0, valid = 0;
    sample_protocol(policy, bags, env, opts, ref ? &*ref : nullptr, nullptr, [&](const MoleculeRecord& r) {
      Json row = r.to_json();
      row.update(prov);
      jsonl << row.dump() << '\n';
      write_xyz(xyz, r.canvas,
                r.formula + " episode=" + std::to_string(r.episode) + " valid=" + (r.valid ? "1" : "0") +
                    (r.key ? " key=" + r.key->key : std::string()) + comment_tail);
      ++n;
      valid += r.valid ? 1 : 0;
    });
    std::printf("sampled %ld molecules (%ld valid) from %zu bags into %s\n", n, valid, bags.size(), dir.c_str());
  });
}

void register_evaluate(CLI::App& app) {
  auto* cmd = app.add_subcommand("evaluate", "Per-bag and aggregate metrics for sampled molecules");
  auto molecules = std::make_shared<std::string>();
  auto reference = std::make_shared<std::string>();
  auto config = std::make_shared<std::string>();
  auto calculator = std::make_shared<std::string>();
  auto output = std::make_shared<std::string>();
  auto no_relax = std::make_shared<bool>(false);
  auto uniqueness = std::make_shared<bool>(false);
  auto max_steps = std::make_shared<int>(RelaxOptions{}.max_steps);
  cmd->add_option("--molecules", *molecules, "molecules.jsonl from sample")->required()->check(CLI::ExistingFile);
  cmd->add_option("--reference", *reference, "Reference isomers (JSONL)")->required()->check(CLI::ExistingFile);
  cmd->add_option("-c,--config", *config, "Run config for calculator and bond settings");
  cmd->add_option("--calculator", *calculator, "Calculator spec (overrides the config)");
  cmd->add_option("-o,--output", *output, "report.csv path")->required();
  cmd->add_flag("--no-relax", *no_relax, "Skip relaxation (rRAE, RMSD and stability stay empty)");
  cmd->add_flag("--uniqueness", *uniqueness, "Add the uniqueness column");
  cmd->add_option("--max-relax-steps", *max_steps, "Relaxation step limit");
  cmd->callback([=] {
    RunConfig cfg;
    if (!config->empty()) cfg = load_run_config(*config);
    if (!calculator->empty()) cfg.calculator = *calculator;
    const ReferenceSet ref = ReferenceSet::load_jsonl(*reference, cfg.bonds);

    std::vector<MoleculeRecord> records;
    std::string comment;
    {
      std::ifstream in(*molecules);
      std::string line;
      int lineno = 0;
      while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const Json j = Json::parse(line, nullptr, false);
        if (j.is_discarded()) throw ConfigError(*molecules + ":" + std::to_string(lineno) + ": not JSON");
        try {
          records.push_back(MoleculeRecord::from_json(j));
        } catch (const std::exception& e) {
          throw ConfigError(*molecules + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (comment.empty() && j.contains("config_hash")) {
          comment = "config_hash=" + j["config_hash"].get<std::string>() +
                    " seed=" + std::to_string(j.value("seed", std::uint64_t{0}));
        }
      }
    }
    std::set<std::string> missing;
    for (const auto& r : records) {
      if (!ref.find(r.formula)) missing.insert(r.formula);
    }
    for (const auto& f : missing) std::cerr << "warning: formula " << f << " is not in the reference\n";

    EvaluateOptions opts;
    opts.relax = !*no_relax;
    opts.relax_options.max_steps = *max_steps;
    opts.uniqueness = *uniqueness;
    opts.bonds = cfg.bonds;
    auto calc = make_run_calculator(cfg);
    const auto [rows, total] = evaluate_records(records, ref, *calc, opts);
    std::ostringstream out;
    write_report_csv(out, rows, total, *uniqueness, comment.empty() ? "config_hash=none" : comment);
    write_text_atomic(*output, out.str());
    std::printf("evaluated %zu molecules over %zu formulas into %s\n", records.size(), rows.size(), output->c_str());
  });
}

}  // namespace molrl::cli
