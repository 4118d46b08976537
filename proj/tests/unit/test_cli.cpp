#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "molrl/json.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = MOLRL_CLI;
const std::string kAdapter = MOLRL_MOCK_ADAPTER;
const std::string kData = std::string(MOLRL_SOURCE_DIR) + "/data";
const std::string kSmoke = kData + "/configs/smoke.json";

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("molrl_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  static inline int counter_ = 0;
  fs::path path_;
};

struct Exec {
  int code = -1;
  std::string output;
};

Exec run(const std::string& args) {
  const std::string cmd = kCli + " " + args + " 2>&1";
  Exec r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) {
    if (!l.empty()) out.push_back(l);
  }
  return out;
}

std::string train(const TempDir& dir, const std::string& name, int iterations, const std::string& extra = "") {
  const Exec r = run("train -c " + kSmoke + " -o " + dir / name + " --iterations " + std::to_string(iterations) +
                    " -q " + extra);
  EXPECT_EQ(r.code, 0) << r.output;
  return dir / name;
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("bogus").code, 2);
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("train --help").code, 0);
  TempDir dir;
  EXPECT_EQ(run("train -c " + dir / "missing.json" + " -o " + dir / "x").code, 2);
  const Exec unknown = run("train -c " + kSmoke + " --set train.bogus=1 -o " + dir / "x");
  EXPECT_EQ(unknown.code, 2);
  EXPECT_NE(unknown.output.find("bogus"), std::string::npos) << unknown.output;
  EXPECT_EQ(run("train -c " + kSmoke + " --set nonsense -o " + dir / "x").code, 2);
}

TEST(Cli, TrainIsDeterministicAndWritesRunDirectory) {
  TempDir dir;
  const std::string a = train(dir, "a", 6);
  const std::string b = train(dir, "b", 6);
  const std::string metrics = slurp(a + "/metrics.jsonl");
  EXPECT_EQ(metrics, slurp(b + "/metrics.jsonl"));
  EXPECT_EQ(slurp(a + "/discovery.jsonl"), slurp(b + "/discovery.jsonl"));
  EXPECT_EQ(slurp(a + "/curves.csv"), slurp(b + "/curves.csv"));

  const auto rows = lines(metrics);
  ASSERT_EQ(rows.size(), 6u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto j = molrl::Json::parse(rows[i]);
    EXPECT_EQ(j["iter"], static_cast<int>(i));
    EXPECT_TRUE(j.contains("config_hash"));
    EXPECT_TRUE(j.contains("validity_rate"));
  }
  for (const char* ckpt : {"ckpt_000001.bin", "ckpt_000003.bin", "ckpt_000004.bin", "ckpt_000006.bin"}) {
    EXPECT_TRUE(fs::is_regular_file(a + "/checkpoints/" + ckpt)) << ckpt;
  }
  EXPECT_NE(slurp(a + "/checkpoints/latest").find("ckpt_000006.bin"), std::string::npos);
  EXPECT_EQ(slurp(a + "/curves.csv").rfind("# config_hash=", 0), 0u);
  EXPECT_TRUE(fs::is_regular_file(a + "/config.json"));
}

TEST(Cli, ResumeContinuesTheSameStream) {
  TempDir dir;
  const std::string full = train(dir, "full", 6);
  const std::string part = train(dir, "part", 3);
  const Exec resumed = run("train -c " + kSmoke + " -o " + part + " --iterations 6 --resume -q");
  ASSERT_EQ(resumed.code, 0) << resumed.output;
  EXPECT_EQ(slurp(full + "/metrics.jsonl"), slurp(part + "/metrics.jsonl"));
  EXPECT_EQ(slurp(full + "/discovery.jsonl"), slurp(part + "/discovery.jsonl"));

  const Exec changed = run("train -c " + kSmoke + " -o " + part + " --iterations 8 --resume -q --set train.lr=0.1");
  EXPECT_EQ(changed.code, 2) << changed.output;
  EXPECT_EQ(run("train -c " + kSmoke + " -o " + dir / "empty" + " --resume -q").code, 2);
}

TEST(Cli, SampleAndEvaluate) {
  TempDir dir;
  const std::string a = train(dir, "a", 4);
  const Exec s = run("sample -c " + kSmoke + " --checkpoint " + a + "/checkpoints/latest_is_not_a_file");
  EXPECT_EQ(s.code, 2);
  const std::string ckpt = a + "/checkpoints/ckpt_000004.bin";
  const Exec sampled = run("sample -c " + kSmoke + " --checkpoint " + ckpt + " -n 3 -o " + dir / "s");
  ASSERT_EQ(sampled.code, 0) << sampled.output;
  const auto rows = lines(slurp(dir / "s/molecules.jsonl"));
  EXPECT_EQ(rows.size(), 18u);
  for (const auto& row : rows) {
    const auto j = molrl::Json::parse(row);
    EXPECT_TRUE(j.contains("config_hash"));
    EXPECT_TRUE(j.contains("positions"));
  }
  EXPECT_TRUE(fs::is_regular_file(dir / "s/molecules.xyz"));

  const std::string ref = kData + "/mini_reference.jsonl";
  const std::string eval = "evaluate --molecules " + dir / "s/molecules.jsonl" + " --reference " + ref + " -o ";
  ASSERT_EQ(run(eval + dir / "r1.csv").code, 0);
  ASSERT_EQ(run(eval + dir / "r2.csv").code, 0);
  const std::string report = slurp(dir / "r1.csv");
  EXPECT_EQ(report, slurp(dir / "r2.csv"));
  const auto report_lines = lines(report);
  ASSERT_GE(report_lines.size(), 3u);
  EXPECT_EQ(report_lines[0].rfind("# config_hash=", 0), 0u);
  EXPECT_EQ(report_lines[1].rfind("formula,n_sampled,n_valid,validity", 0), 0u);
  EXPECT_EQ(report_lines.back().rfind("ALL,18,", 0), 0u) << report_lines.back();

  std::ofstream(dir / "empty.jsonl").close();
  ASSERT_EQ(run("evaluate --molecules " + dir / "empty.jsonl" + " --reference " + ref + " -o " + dir / "e.csv").code, 0);
  EXPECT_EQ(lines(slurp(dir / "e.csv")).size(), 2u);
}

TEST(Cli, RelaxWritesTraceAndFlagsStalls) {
  TempDir dir;
  {
    std::ofstream xyz(dir / "w.xyz");
    xyz << "3\nwater\nO 0 0 0\nH 0 0 1.0\nH 0.9 0 -0.3\n";
  }
  const Exec r = run("relax -i " + dir / "w.xyz" + " -o " + dir / "out.xyz" + " --fmax 1e-14 --max-steps 5000");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto trace = lines(slurp(dir / "out.xyz.trace.csv"));
  ASSERT_GE(trace.size(), 3u);
  EXPECT_EQ(trace[0], "frame,step,energy_ev,max_force_ev_ang,converged,stalled");
  EXPECT_EQ(trace.back().substr(trace.back().size() - 4), ",0,1");
  EXPECT_EQ(run("relax -i " + dir / "w.xyz" + " -o " + dir / "o.xyz" + " --fmax 0").code, 2);

  const Exec ok = run("relax -i " + dir / "w.xyz" + " -o " + dir / "ok.xyz" + " --trace " + dir / "t.csv");
  ASSERT_EQ(ok.code, 0) << ok.output;
  const std::string last = lines(slurp(dir / "t.csv")).back();
  EXPECT_EQ(last.substr(last.size() - 4), ",1,0");
}

TEST(Cli, ProtocolCheckAgainstMockAdapter) {
  const Exec ok = run("protocol-check --adapter " + kAdapter);
  EXPECT_EQ(ok.code, 0) << ok.output;
  EXPECT_NE(ok.output.find("PASS"), std::string::npos);
  const Exec bad = run("protocol-check --adapter '" + kAdapter + " --wrong-id-at 2'");
  EXPECT_EQ(bad.code, 3) << bad.output;
  EXPECT_NE(bad.output.find("does not echo"), std::string::npos) << bad.output;
}

TEST(Cli, EnumerateIsomers) {
  const Exec r = run("enumerate C3H8O");
  ASSERT_EQ(r.code, 0) << r.output;
  int keys = 0;
  for (const auto& l : lines(r.output)) keys += l.find("canonical_key") != std::string::npos;
  EXPECT_EQ(keys, 3);
}

TEST(Cli, FinetuneRampsDipoleCoefficient) {
  TempDir dir;
  const std::string a = train(dir, "a", 4);
  const std::string ckpt = a + "/checkpoints/ckpt_000004.bin";
  const std::string base = "finetune -c " + kSmoke + " --checkpoint " + ckpt + " -q -o ";
  const Exec r = run(base + dir / "ft" + " --ramp 0:4:0:2 --iterations 6");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto rows = lines(slurp(dir / "ft/metrics.jsonl"));
  ASSERT_EQ(rows.size(), 6u);
  const std::vector<double> expected = {0.0, 0.5, 1.0, 1.5, 2.0, 2.0};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto j = molrl::Json::parse(rows[i]);
    EXPECT_EQ(j["iter"], static_cast<int>(4 + i));
    EXPECT_DOUBLE_EQ(j["dipole_coef"].get<double>(), expected[i]);
  }
  EXPECT_EQ(run(base + dir / "ft2" + " --reward energy").code, 2);
  EXPECT_EQ(run(base + dir / "ft3" + " --ramp 1:2:3").code, 2);
}
