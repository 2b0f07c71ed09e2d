#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

#ifndef TIDE_CLI_PATH
#define TIDE_CLI_PATH "./tide"
#endif

namespace {

struct RunDir {
  fs::path path;
  RunDir() {
    path = fs::temp_directory_path() / ("tide_cli_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~RunDir() { fs::remove_all(path); }
};

int run(const std::string& args) {
  const std::string cmd = std::string(TIDE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string bars_config(const fs::path& out_dir, int total_steps) {
  std::ostringstream os;
  os << "[model]\n"
     << "d_model = 24\nt_steps = 4\nd_mem = 12\nd_ee = 12\nd_ei = 6\nd_ii = 4\n"
     << "n_heads = 2\nd_attn = 16\nbackbone_width = 4\nhead_hidden = 12\n"
     << "nlm_window = 4\nnlm_hidden = 2\ndropout = 0.0\nclasses = 2\n"
     << "[loss]\nt_s = 5\nt_w = 20\n"
     << "[train]\nlr = 1e-3\nwarmup = 5\ntotal_steps = " << total_steps << "\nbatch = 8\n"
     << "eval_interval = 0\ncheckpoint_interval = 0\nout_dir = " << out_dir.string() << "\n"
     << "[data]\ndataset = bars\ntrain_count = 32\ntest_count = 16\nmean = 0\nstd = 1\n";
  return os.str();
}

int count_step_records(const fs::path& metrics) {
  std::ifstream in(metrics);
  std::string line;
  int n = 0;
  while (std::getline(in, line))
    if (line.find("loss_total") != std::string::npos) ++n;
  return n;
}

}  // namespace

TEST_CASE("train smoke run emits exactly one metric record per step") {
  RunDir dir;
  const fs::path cfg_path = dir.path / "run.ini";
  std::ofstream(cfg_path) << bars_config(dir.path / "out", 10);
  REQUIRE(run("train --config " + cfg_path.string()) == 0);

  const fs::path metrics = dir.path / "out" / "metrics.jsonl";
  REQUIRE(fs::exists(metrics));
  REQUIRE(count_step_records(metrics) == 10);

  // header carries the config hash
  std::ifstream in(metrics);
  std::string first;
  std::getline(in, first);
  REQUIRE(first.find("config_hash") != std::string::npos);
  REQUIRE(fs::exists(dir.path / "out" / "ckpt_final.tide"));
}

TEST_CASE("resume continues the step counter without gaps") {
  RunDir dir;
  const fs::path cfg10 = dir.path / "run10.ini";
  std::ofstream(cfg10) << bars_config(dir.path / "out", 10);
  REQUIRE(run("train --config " + cfg10.string()) == 0);

  const fs::path cfg20 = dir.path / "run20.ini";
  std::ofstream(cfg20) << bars_config(dir.path / "out2", 20);
  REQUIRE(run("train --config " + cfg20.string() + " --resume " +
              (dir.path / "out" / "ckpt_final.tide").string()) == 0);

  std::ifstream in(dir.path / "out2" / "metrics.jsonl");
  std::string line;
  std::vector<long long> steps;
  while (std::getline(in, line)) {
    if (line.find("loss_total") == std::string::npos) continue;
    steps.push_back(json::parse(line)["step"].get<long long>());
  }
  REQUIRE(steps.size() == 10);
  REQUIRE(steps.front() == 11);
  REQUIRE(steps.back() == 20);
  for (size_t i = 1; i < steps.size(); ++i) REQUIRE(steps[i] == steps[i - 1] + 1);
}

TEST_CASE("config errors exit 2 and data errors exit 3") {
  RunDir dir;
  const fs::path bad = dir.path / "bad.ini";
  std::ofstream(bad) << "[model]\nnot_a_key = 1\n";
  REQUIRE(run("train --config " + bad.string()) == 2);

  const fs::path missing_data = dir.path / "nodata.ini";
  std::string cfg = bars_config(dir.path / "out", 5);
  cfg.replace(cfg.find("dataset = bars"), 14, "dataset = mnist");
  std::ofstream(missing_data) << cfg << "data_dir = /nonexistent\n";
  REQUIRE(run("train --config " + missing_data.string()) == 3);

  REQUIRE(run("eval --ckpt /nonexistent.tide") == 4);
}

TEST_CASE("eval reports clean and corrupted accuracy from a checkpoint") {
  RunDir dir;
  const fs::path cfg_path = dir.path / "run.ini";
  std::ofstream(cfg_path) << bars_config(dir.path / "out", 15);
  REQUIRE(run("train --config " + cfg_path.string()) == 0);

  const fs::path report = dir.path / "report.json";
  REQUIRE(run("eval --ckpt " + (dir.path / "out" / "ckpt_final.tide").string() +
              " --corrupt gaussian-noise,horizontal-flip --out " + report.string()) == 0);
  json j = json::parse(std::ifstream(report));
  REQUIRE(j.contains("clean"));
  REQUIRE(j["clean"]["accuracy"].is_number());
  REQUIRE(j["corruptions"]["gaussian-noise"]["5"]["accuracy"].is_number());
  REQUIRE(j["clean"]["certainty_curve"].size() == 4);
  REQUIRE(fs::exists(dir.path / "report_certainty.csv"));

  // identical invocation reproduces identical output
  const fs::path report2 = dir.path / "report2.json";
  REQUIRE(run("eval --ckpt " + (dir.path / "out" / "ckpt_final.tide").string() +
              " --corrupt gaussian-noise,horizontal-flip --out " + report2.string()) == 0);
  std::ifstream a(report), b(report2);
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  REQUIRE(sa == sb);
}

TEST_CASE("diagnose produces a deterministic report and trajectory") {
  RunDir dir;
  const fs::path csv = dir.path / "traj.csv";
  const std::string cmd = std::string(TIDE_CLI_PATH) + " diagnose --dim 12 --seed 5 --out " +
                          csv.string() + " 2> /dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  char buf[512];
  while (fgets(buf, sizeof(buf), pipe)) out += buf;
  REQUIRE(pclose(pipe) == 0);
  json j = json::parse(out);
  REQUIRE(j["perron_ee"].is_number());
  REQUIRE(j["is_lds"].is_boolean());
  REQUIRE(j.contains("schur_dt_bound"));
  REQUIRE(fs::exists(csv));

  FILE* pipe2 = popen(cmd.c_str(), "r");
  std::string out2;
  while (fgets(buf, sizeof(buf), pipe2)) out2 += buf;
  REQUIRE(pclose(pipe2) == 0);
  REQUIRE(out == out2);
}
