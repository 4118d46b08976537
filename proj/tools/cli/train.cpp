#include <algorithm>
#include <iostream>
#include <set>

#include "common.hpp"
#include "molrl/ppo.hpp"

namespace molrl::cli {

namespace fs = std::filesystem;

namespace {

struct RunLayout {
  fs::path dir;
  fs::path checkpoints() const { return dir / "checkpoints"; }
  fs::path checkpoint(long iter) const {
    char name[32];
    std::snprintf(name, sizeof name, "ckpt_%06ld.bin", iter);
    return checkpoints() / name;
  }
  fs::path latest_pointer() const { return checkpoints() / "latest"; }
  fs::path metrics() const { return dir / "metrics.jsonl"; }
  fs::path curves() const { return dir / "curves.csv"; }
  fs::path discovery() const { return dir / "discovery.jsonl"; }
  fs::path config() const { return dir / "config.json"; }
};

std::optional<fs::path> latest_checkpoint(const RunLayout& run) {
  std::ifstream in(run.latest_pointer());
  std::string name;
  if (!(in >> name)) return std::nullopt;
  const fs::path p = run.checkpoints() / name;
  if (!fs::is_regular_file(p)) return std::nullopt;
  return p;
}

void clear_checkpoints(const RunLayout& run) {
  if (!fs::is_directory(run.checkpoints())) return;
  for (const auto& e : fs::directory_iterator(run.checkpoints())) {
    const std::string name = e.path().filename().string();
    if (name == "latest" || (name.rfind("ckpt_", 0) == 0)) fs::remove(e.path());
  }
}

/// Keeps the metrics rows up to and including `iter` (used on resume).
void truncate_metrics(const RunLayout& run, long iter) {
  std::ifstream in(run.metrics());
  std::string kept, line;
  while (std::getline(in, line)) {
    const Json j = Json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("iter") || j["iter"].get<long>() > iter) break;
    kept += line + '\n';
  }
  in.close();
  write_text_atomic(run.metrics(), kept);
}

/// Long-format curves (iter, metric, value) rebuilt from metrics.jsonl.
void write_curves(const RunLayout& run, const std::string& comment) {
  std::ifstream in(run.metrics());
  std::ostringstream out;
  out.precision(10);
  out << "# " << comment << "\niter,metric,value\n";
  std::string line;
  while (std::getline(in, line)) {
    const Json j = Json::parse(line, nullptr, false);
    if (j.is_discarded()) continue;
    const long iter = j.at("iter").get<long>();
    for (const auto& [k, v] : j.items()) {
      if (k == "iter" || k == "seed") continue;
      if (v.is_number()) {
        out << iter << ',' << k << ',' << v.get<double>() << '\n';
      } else if (v.is_array()) {
        for (std::size_t i = 0; i < v.size(); ++i) {
          if (v[i].is_number()) out << iter << ',' << k << '_' << i << ',' << v[i].get<double>() << '\n';
        }
      }
    }
  }
  write_text_atomic(run.curves(), out.str());
}

void write_discovery(const RunLayout& run, Trainer& trainer, const RunConfig& cfg) {
  std::ostringstream out;
  trainer.discovery().write_jsonl(out, provenance(cfg));
  write_text_atomic(run.discovery(), out.str());
}

void save(const RunLayout& run, Trainer& trainer, const RunConfig& cfg) {
  const fs::path p = run.checkpoint(trainer.iteration());
  trainer.save_checkpoint(p.string(), cfg.hash());
  write_text_atomic(run.latest_pointer(), p.filename().string() + "\n");
}

struct LoopOptions {
  long until = 0;
  std::set<long> checkpoint_at;
  bool quiet = false;
  long print_every = 10;
};

void run_loop(const RunLayout& run, Trainer& trainer, const RunConfig& cfg, const LoopOptions& opt) {
  auto metrics = open_output(run.metrics(), std::ios::app);
  const Json prov = provenance(cfg);
  while (trainer.iteration() < opt.until) {
    const IterationMetrics m = trainer.train_iteration();
    Json row = prov;
    row.update(m.to_json());
    if (cfg.reward.dipole_schedule) row["dipole_coef"] = cfg.reward.dipole_schedule->value(m.iter);
    metrics << row.dump() << '\n' << std::flush;
    const long done = trainer.iteration();
    if (!opt.quiet && (done % opt.print_every == 0 || done == opt.until)) {
      std::printf("iter %6ld  return %8.3f  validity %.3f  kill %.3f  unique %zu\n", done, m.mean_episode_return,
                  m.validity_rate, m.kill_rate, m.unique_isomers);
      std::fflush(stdout);
    }
    if (opt.checkpoint_at.count(done)) {
      save(run, trainer, cfg);
      write_discovery(run, trainer, cfg);
      write_curves(run, provenance_comment(cfg));
    }
  }
  metrics.close();
  write_discovery(run, trainer, cfg);
  write_curves(run, provenance_comment(cfg));
}

std::unique_ptr<Trainer> make_trainer(const RunConfig& cfg) {
  auto bags = load_bag_file(cfg.train_bags);
  return std::make_unique<Trainer>(
      cfg.train, cfg.reward, cfg.net, std::move(bags), [cfg] { return make_run_calculator(cfg); }, cfg.seed,
      cfg.bonds);
}

void write_config(const RunLayout& run, const RunConfig& cfg) {
  fs::create_directories(run.checkpoints());
  Json j = cfg.to_json();
  write_text_atomic(run.config(), j.dump(2) + "\n");
}

}  // namespace

void register_train(CLI::App& app) {
  auto* cmd = app.add_subcommand("train", "Train a policy; writes checkpoints, metrics.jsonl and discovery.jsonl");
  auto flags = std::make_shared<ConfigFlags>();
  auto iterations = std::make_shared<std::optional<long>>();
  auto resume = std::make_shared<bool>(false);
  auto quiet = std::make_shared<bool>(false);
  flags->add_to(*cmd, true);
  cmd->add_option("-o,--output", flags->output, "Run directory (overrides output_dir)");
  cmd->add_option("--iterations", *iterations, "Override the iteration budget");
  cmd->add_flag("--resume", *resume, "Continue from the latest checkpoint in the run directory");
  cmd->add_flag("-q,--quiet", *quiet, "No progress lines");
  cmd->callback([=] {
    RunConfig cfg = flags->load();
    if (*iterations) cfg.iterations = **iterations;
    cfg.validate();
    const RunLayout run{cfg.output_dir};
    auto trainer = make_trainer(cfg);

    if (*resume) {
      const auto ckpt = latest_checkpoint(run);
      if (!ckpt) throw CommandError(kExitConfig, "--resume: no checkpoint in " + run.checkpoints().string());
      const CheckpointInfo info = read_checkpoint_info(ckpt->string());
      if (info.config_hash != cfg.hash()) {
        throw ConfigError("run config hash " + cfg.hash_hex() + " does not match checkpoint " +
                          hex64(info.config_hash) + " in " + ckpt->string());
      }
      trainer->load_checkpoint(ckpt->string(), cfg.hash());
      truncate_metrics(run, trainer->iteration());
      if (!*quiet) std::printf("resumed from %s at iteration %ld\n", ckpt->c_str(), trainer->iteration());
    } else {
      fs::create_directories(run.dir);
      clear_checkpoints(run);
      std::ofstream(run.metrics(), std::ios::trunc);
    }
    write_config(run, cfg);

    LoopOptions opt;
    opt.until = cfg.iterations;
    opt.quiet = *quiet;
    for (long it : checkpoint_schedule(cfg.iterations, cfg.checkpoints)) opt.checkpoint_at.insert(it);
    run_loop(run, *trainer, cfg, opt);
    if (!*quiet) std::printf("done: %s (config %s)\n", run.dir.c_str(), cfg.hash_hex().c_str());
  });
}

void register_finetune(CLI::App& app) {
  auto* cmd = app.add_subcommand("finetune", "Continue training from a checkpoint with an extra scheduled reward term");
  auto flags = std::make_shared<ConfigFlags>();
  auto checkpoint = std::make_shared<std::string>();
  auto reward = std::make_shared<std::string>("dipole");
  auto ramp = std::make_shared<std::string>("0:2500:0:2");
  auto iterations = std::make_shared<std::optional<long>>();
  auto quiet = std::make_shared<bool>(false);
  flags->add_to(*cmd, true);
  cmd->add_option("--checkpoint", *checkpoint, "Checkpoint to start from")->required()->check(CLI::ExistingFile);
  cmd->add_option("--reward", *reward, "Extra terminal term (only 'dipole')");
  cmd->add_option("--ramp", *ramp, "Coefficient ramp start:end:v0:v1, iterations counted from the checkpoint");
  cmd->add_option("-o,--output", flags->output, "Run directory (overrides output_dir)")->required();
  cmd->add_option("--iterations", *iterations, "Fine-tuning iterations (overrides the config budget)");
  cmd->add_flag("-q,--quiet", *quiet, "No progress lines");
  cmd->callback([=] {
    if (*reward != "dipole") throw ConfigError("--reward supports only 'dipole', got '" + *reward + "'");
    RunConfig cfg = flags->load();
    if (*iterations) cfg.iterations = **iterations;
    LinearSchedule ramp_sched;
    try {
      ramp_sched = LinearSchedule::parse(*ramp);
      ramp_sched.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    const CheckpointInfo info = read_checkpoint_info(*checkpoint);
    ramp_sched.start_iter += info.iteration;
    ramp_sched.end_iter += info.iteration;
    cfg.reward.dipole_schedule = ramp_sched;
    cfg.validate();

    const RunLayout run{cfg.output_dir};
    fs::create_directories(run.dir);
    clear_checkpoints(run);
    std::ofstream(run.metrics(), std::ios::trunc);
    write_config(run, cfg);
    auto trainer = make_trainer(cfg);
    trainer->load_weights(*checkpoint);

    LoopOptions opt;
    opt.until = info.iteration + cfg.iterations;
    opt.quiet = *quiet;
    for (long it : checkpoint_schedule(cfg.iterations, cfg.checkpoints)) opt.checkpoint_at.insert(info.iteration + it);
    run_loop(run, *trainer, cfg, opt);
    if (!*quiet) std::printf("done: %s (config %s)\n", run.dir.c_str(), cfg.hash_hex().c_str());
  });
}

}  // namespace molrl::cli
