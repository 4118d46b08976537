#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "molrl/config.hpp"
#include "molrl/json.hpp"

namespace molrl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

/// Runtime failure carrying the process exit code.
class CommandError : public std::runtime_error {
 public:
  CommandError(int code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

/// Flags shared by the commands that read a run config.
struct ConfigFlags {
  std::string path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string output;

  void add_to(CLI::App& cmd, bool config_required);
  /// Loads and applies the flag overrides. Validation is left to the caller.
  RunConfig load() const;
};

std::ofstream open_output(const std::filesystem::path& path, std::ios::openmode mode = std::ios::trunc);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
/// {"config_hash": hex, "seed": n}
Json provenance(const RunConfig& cfg);
std::string provenance_comment(const RunConfig& cfg);

void register_train(CLI::App& app);
void register_finetune(CLI::App& app);
void register_sample(CLI::App& app);
void register_evaluate(CLI::App& app);
void register_relax(CLI::App& app);
void register_protocol_check(CLI::App& app);
void register_enumerate(CLI::App& app);

}  // namespace molrl::cli
