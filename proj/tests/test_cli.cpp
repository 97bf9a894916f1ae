#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "saunet/params.hpp"
#include "saunet/runconfig.hpp"

using namespace saunet;
namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int exit_code;
  std::string out;
};

CmdResult run_cli(const std::string& args) {
  const fs::path out_file = fs::temp_directory_path() / "saunet_cli_out.txt";
  const std::string cmd =
      std::string(SAUNET_CLI_PATH) + " " + args + " > " + out_file.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  std::ifstream is(out_file);
  std::string text((std::istreambuf_iterator<char>(is)),
                   std::istreambuf_iterator<char>());
  return {WEXITSTATUS(raw), text};
}

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string checksum_line(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line))
    if (line.rfind("checksum", 0) == 0) return line;
  return "";
}

}  // namespace

TEST_CASE("synth: deterministic checksums, degenerate n, overwrite guard") {
  const auto dir = temp_dir("cli_synth");
  auto r1 = run_cli("synth --out " + dir.string() + " --n 10 --size 16 --seed 7 --force");
  CHECK(r1.exit_code == 0);
  CHECK(fs::exists(dir / "manifest.tsv"));
  CHECK(!checksum_line(r1.out).empty());

  // same seed, fresh directory -> identical checksum
  const auto dir2 = temp_dir("cli_synth2");
  auto r2 = run_cli("synth --out " + dir2.string() + " --n 10 --size 16 --seed 7 --force");
  CHECK(checksum_line(r1.out) == checksum_line(r2.out));

  // non-empty dir without --force -> data error
  auto r3 = run_cli("synth --out " + dir.string() + " --n 10 --size 16 --seed 7");
  CHECK(r3.exit_code == 3);

  // n = 0 -> empty manifest, exit 0
  const auto dir0 = temp_dir("cli_synth0");
  auto r4 = run_cli("synth --out " + dir0.string() + " --n 0 --size 16 --seed 7 --force");
  CHECK(r4.exit_code == 0);
  std::ifstream mf(dir0 / "manifest.tsv");
  std::string header;
  std::getline(mf, header);
  CHECK(header == "id\timage\tlabel\tsplit");
  std::string rest;
  CHECK_FALSE(std::getline(mf, rest));
}

TEST_CASE("train, eval, explain and gradcheck round trip") {
  const auto data_dir = temp_dir("cli_data");
  auto rs = run_cli("synth --out " + data_dir.string() +
                    " --n 12 --size 16 --seed 9 --force");
  REQUIRE(rs.exit_code == 0);

  const auto run_dir = temp_dir("cli_run");
  const auto cfg_path = fs::temp_directory_path() / "cli_cfg.json";
  {
    nlohmann::json j;
    j["seed"] = 9;
    j["data"]["root"] = data_dir.string();
    j["data"]["crop"] = 16;
    j["model"]["preset"] = "tiny";
    j["train"]["epochs"] = 2;
    j["train"]["batch_size"] = 4;
    j["train"]["lr"] = 1e-3;
    j["train"]["out_dir"] = run_dir.string();
    std::ofstream os(cfg_path);
    os << j.dump(2);
  }

  auto rt = run_cli("train --config " + cfg_path.string());
  CAPTURE(rt.out);
  REQUIRE(rt.exit_code == 0);
  CHECK(fs::exists(run_dir / "best.ckpt"));
  // one log line per epoch
  std::ifstream log(run_dir / "train_log.jsonl");
  int lines = 0;
  std::string line;
  while (std::getline(log, line))
    if (!line.empty()) ++lines;
  CHECK(lines == 2);

  // eval: JSON to stdout with the expected schema keys, deterministic reruns
  const std::string eval_args = "eval --ckpt " + (run_dir / "best.ckpt").string() +
                                " --data " + data_dir.string() + " --split val --crop 16";
  auto re1 = run_cli(eval_args);
  CAPTURE(re1.out);
  REQUIRE(re1.exit_code == 0);
  auto parsed = nlohmann::json::parse(re1.out.substr(0, re1.out.find('\n')));
  for (const char* key : {"classes", "dice", "iou", "mean_dice", "mean_iou",
                          "boundary_f1"})
    CHECK(parsed.contains(key));
  CHECK(fs::exists(run_dir / "eval_val.tsv"));
  auto re2 = run_cli(eval_args);
  CHECK(re1.out == re2.out);

  // explain writes the tree and the timing line
  const auto explain_dir = temp_dir("cli_explain");
  auto rx = run_cli("explain --ckpt " + (run_dir / "best.ckpt").string() + " --data " +
                    data_dir.string() + " --ids s0000 --smoothgrad 2 --out " +
                    explain_dir.string() + " --crop 16 --seed 3");
  CAPTURE(rx.out);
  REQUIRE(rx.exit_code == 0);
  CHECK(fs::exists(explain_dir / "s0000" / "alpha_1.ppm"));
  CHECK(fs::exists(explain_dir / "s0000" / "smoothgrad.sgt"));
  CHECK(rx.out.find("passes: extract=1 smoothgrad=2") != std::string::npos);

  // unknown id -> data error
  auto rxu = run_cli("explain --ckpt " + (run_dir / "best.ckpt").string() + " --data " +
                     data_dir.string() + " --ids nope --out " + explain_dir.string());
  CHECK(rxu.exit_code == 3);

  // ablation flag: checkpoint must hold zero shape-stream parameters
  const auto run2 = temp_dir("cli_run_noshape");
  auto rt2 = run_cli("train --config " + cfg_path.string() + " --no-shape-stream --out " +
                     run2.string() + " --epochs 1");
  CAPTURE(rt2.out);
  REQUIRE(rt2.exit_code == 0);
  for (const auto& e : sauc_read((run2 / "best.ckpt").string()))
    CHECK(e.name.find("shape") == std::string::npos);
}

TEST_CASE("config errors exit with code 2") {
  const auto cfg_path = fs::temp_directory_path() / "cli_bad_cfg.json";
  {
    std::ofstream os(cfg_path);
    os << "{\"frobnicate\": true}";
  }
  auto r = run_cli("train --config " + cfg_path.string());
  CHECK(r.exit_code == 2);
  CHECK(r.out.find("unknown key") != std::string::npos);

  // missing data root
  const auto cfg2 = fs::temp_directory_path() / "cli_bad_cfg2.json";
  {
    std::ofstream os(cfg2);
    os << "{\"train\": {\"out_dir\": \"x\"}}";
  }
  auto r2 = run_cli("train --config " + cfg2.string());
  CHECK(r2.exit_code == 2);
}

TEST_CASE("run config parses, rejects unknown keys, env seed default") {
  RunConfig cfg = RunConfig::from_json_text(
      R"({"seed": 11, "data": {"root": "x", "crop": 32},
          "model": {"preset": "tiny"},
          "train": {"epochs": 4, "loss_weights": [1, 0.5, 2]}})");
  CHECK(cfg.seed == 11);
  CHECK(cfg.train.epochs == 4);
  CHECK(cfg.train.pipeline.crop == 32);
  CHECK(cfg.train.loss_weights.lambda2 == 0.5f);
  CHECK_THROWS_WITH_AS(RunConfig::from_json_text("{\"data\": {\"rooot\": \"x\"}}"),
                       doctest::Contains("unknown key"), Error);

  setenv("SAUNET_SEED", "4242", 1);
  RunConfig env_cfg = RunConfig::from_json_text("{}");
  CHECK(env_cfg.seed == 4242);
  unsetenv("SAUNET_SEED");
  RunConfig def_cfg = RunConfig::from_json_text("{}");
  CHECK(def_cfg.seed == 7);
}

TEST_CASE("gradcheck command prints the report and exits 0") {
  auto r = run_cli("gradcheck --seed 5");
  CAPTURE(r.out);
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("conv2d") != std::string::npos);
  CHECK(r.out.find("saunet_tiny_end_to_end") != std::string::npos);
  CHECK(r.out.find("fail") == std::string::npos);
}
