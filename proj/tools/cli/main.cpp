#include <iostream>

#include "common.hpp"
#include "molrl/ppo.hpp"

namespace molrl::cli {

void ConfigFlags::add_to(CLI::App& cmd, bool config_required) {
  auto* opt = cmd.add_option("-c,--config", path, "Run config (JSON)");
  if (config_required) opt->required();
  cmd.add_option("--set", sets, "Override a config field, e.g. --set train.lr=1e-4 (repeatable)");
  cmd.add_option("--seed", seed, "Override the seed");
}

RunConfig ConfigFlags::load() const {
  RunConfig cfg = load_run_config(path, sets);
  if (seed) cfg.seed = *seed;
  if (!output.empty()) cfg.output_dir = output;
  return cfg;
}

std::ofstream open_output(const std::filesystem::path& path, std::ios::openmode mode) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::out | mode);
  if (!out) throw CommandError(kExitRuntime, "cannot write " + path.string());
  return out;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = path.string() + ".tmp";
  {
    auto out = open_output(tmp);
    out << text;
    if (!out) throw CommandError(kExitRuntime, "short write on " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Json provenance(const RunConfig& cfg) { return Json{{"config_hash", cfg.hash_hex()}, {"seed", cfg.seed}}; }

std::string provenance_comment(const RunConfig& cfg) {
  return "config_hash=" + cfg.hash_hex() + " seed=" + std::to_string(cfg.seed);
}

}  // namespace molrl::cli

int main(int argc, char** argv) {
  using namespace molrl::cli;
  CLI::App app{"Atom-by-atom molecule construction with PPO"};
  app.require_subcommand(1);
  register_train(app);
  register_finetune(app);
  register_sample(app);
  register_evaluate(app);
  register_relax(app);
  register_protocol_check(app);
  register_enumerate(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  } catch (const CommandError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code();
  } catch (const molrl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const molrl::FormulaError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
