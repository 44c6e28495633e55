#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "irwgan/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string cli = IRWGAN_CLI_PATH;

struct CmdResult {
  int exit_code;
  std::string output;
};

CmdResult run_cmd(const std::string& args) {
  const std::string out_file = (fs::temp_directory_path() / "irwgan_cli_out.txt").string();
  const std::string cmd = cli + " " + args + " > " + out_file + " 2>&1";
  const int status = std::system(cmd.c_str());
  CmdResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out_file);
  r.output = std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return r;
}

fs::path fresh_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("irwgan_cli_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string tiny_overrides() {
  return "--set resolution=8 --set gen_base_width=4 --set gen_resblocks=1 --set disc_base_width=4 "
         "--set 'disc_layers=[1,2]' --set imp_base_width=4 --set imp_conv_layers=2 --set imp_downsample_to=8 "
         "--set batch_size=4 --set epochs=1 --set decay_start_epoch=1 --set iters_per_epoch=2 "
         "--set checkpoint_every=1 --set sample_every=0 --set precision=f64";
}

std::string tiny_synth(const fs::path& dir) {
  const std::string path = (dir / "synth.json").string();
  json j = {{"n_aligned_x", 6}, {"n_aligned_y", 6}, {"ratio_x", 0.5}, {"ratio_y", 0.5}, {"seed", 3}};
  irwgan::write_text_file(path, j.dump());
  return path;
}

int count_lines(const std::string& path) {
  std::ifstream in(path);
  int n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_CASE("train writes the full run layout") {
  auto dir = fresh_dir("train");
  auto spec = tiny_synth(dir);
  auto r = run_cmd("train --synth " + spec + " --out " + (dir / "run").string() + " " + tiny_overrides() +
                   " --seed 3");
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  for (const char* f : {"config.json", "manifest.json", "log.csv", "epoch_summary.csv", "weights_X.csv",
                        "weights_Y.csv", "synth.json"})
    REQUIRE(fs::exists(dir / "run" / f));
  REQUIRE(fs::exists(dir / "run" / "checkpoints" / "ep1.ckpt"));
  // manifest carries fingerprints and the seed
  json manifest = json::parse(irwgan::read_text_file((dir / "run" / "manifest.json").string()));
  REQUIRE(manifest.contains("dataset_x"));
  REQUIRE(manifest["dataset_x"].contains("content_hash"));
  REQUIRE(manifest["seed"].get<std::uint64_t>() == 3);
}

TEST_CASE("unknown flags and unknown config keys exit with code 2") {
  auto r1 = run_cmd("train --synth default --out /tmp/x --bogus-flag");
  REQUIRE(r1.exit_code == 2);
  REQUIRE(r1.output.find("bogus-flag") != std::string::npos);

  auto dir = fresh_dir("badkey");
  auto r2 = run_cmd("train --synth default --out " + (dir / "r").string() + " --set not_a_key=1");
  REQUIRE(r2.exit_code == 2);
  REQUIRE(r2.output.find("not_a_key") != std::string::npos);
}

TEST_CASE("set overrides are reflected in the resolved config") {
  auto dir = fresh_dir("override");
  auto spec = tiny_synth(dir);
  auto r = run_cmd("train --synth " + spec + " --out " + (dir / "run").string() + " " + tiny_overrides() +
                   " --set lambda_ess=0");
  REQUIRE(r.exit_code == 0);
  json cfg = json::parse(irwgan::read_text_file((dir / "run" / "config.json").string()));
  REQUIRE(cfg["lambda_ess"].get<double>() == 0.0);
}

TEST_CASE("seed precedence: config < IRW_SEED < --seed") {
  auto dir = fresh_dir("seed");
  auto spec = tiny_synth(dir);
  setenv("IRW_SEED", "77", 1);
  auto r1 = run_cmd("train --synth " + spec + " --out " + (dir / "env").string() + " " + tiny_overrides());
  REQUIRE(r1.exit_code == 0);
  json m1 = json::parse(irwgan::read_text_file((dir / "env" / "manifest.json").string()));
  REQUIRE(m1["seed"].get<std::uint64_t>() == 77);
  auto r2 = run_cmd("train --synth " + spec + " --out " + (dir / "flag").string() + " " + tiny_overrides() +
                    " --seed 99");
  REQUIRE(r2.exit_code == 0);
  json m2 = json::parse(irwgan::read_text_file((dir / "flag" / "manifest.json").string()));
  REQUIRE(m2["seed"].get<std::uint64_t>() == 99);
  unsetenv("IRW_SEED");
}

TEST_CASE("synth materializes loadable domains; eval emits the metrics schema") {
  auto dir = fresh_dir("evalflow");
  auto spec = tiny_synth(dir);
  REQUIRE(run_cmd("synth --spec " + spec + " --out " + (dir / "data").string()).exit_code == 0);
  REQUIRE(fs::exists(dir / "data" / "X" / "labels.csv"));
  REQUIRE(fs::exists(dir / "data" / "Y" / "00000.png"));

  auto rt = run_cmd("train --synth " + spec + " --out " + (dir / "run").string() + " " + tiny_overrides());
  REQUIRE(rt.exit_code == 0);

  auto re = run_cmd("eval --run " + (dir / "run").string() + " --test-x " + (dir / "data" / "X").string() +
                    " --test-y " + (dir / "data" / "Y").string() + " --labels-x " +
                    (dir / "data" / "X" / "labels.csv").string() + " --labels-y " +
                    (dir / "data" / "Y" / "labels.csv").string());
  INFO(re.output);
  REQUIRE(re.exit_code == 0);
  json metrics = json::parse(irwgan::read_text_file((dir / "run" / "metrics.json").string()));
  for (const char* key : {"fid", "kid", "kid_x100", "precision", "recall", "accuracy", "ess_x", "ess_y"})
    REQUIRE(metrics.contains(key));
  REQUIRE(metrics["fid"]["x2y"].get<double>() >= 0.0);
}

TEST_CASE("eval without a checkpoint exits with code 4") {
  auto dir = fresh_dir("nockpt");
  fs::create_directories(dir / "empty_run");
  fs::create_directories(dir / "d");
  auto r = run_cmd("eval --run " + (dir / "empty_run").string() + " --test-x " + (dir / "d").string() +
                   " --test-y " + (dir / "d").string());
  REQUIRE(r.exit_code == 4);
}

TEST_CASE("translate writes one matching output per input, deterministically") {
  auto dir = fresh_dir("translate");
  auto spec = tiny_synth(dir);
  REQUIRE(run_cmd("synth --spec " + spec + " --out " + (dir / "data").string()).exit_code == 0);
  REQUIRE(run_cmd("train --synth " + spec + " --out " + (dir / "run").string() + " " + tiny_overrides())
              .exit_code == 0);

  auto rt = run_cmd("translate --run " + (dir / "run").string() + " --input " + (dir / "data" / "X").string() +
                    " --direction x2y --out " + (dir / "outA").string());
  REQUIRE(rt.exit_code == 0);
  auto count_png = [](const fs::path& p) {
    int n = 0;
    for (const auto& e : fs::directory_iterator(p))
      if (e.path().extension() == ".png") ++n;
    return n;
  };
  REQUIRE(count_png(dir / "outA") == count_png(dir / "data" / "X"));
  REQUIRE(fs::exists(dir / "outA" / "00000.png"));

  REQUIRE(run_cmd("translate --run " + (dir / "run").string() + " --input " + (dir / "data" / "X").string() +
                  " --direction x2y --out " + (dir / "outB").string())
              .exit_code == 0);
  REQUIRE(irwgan::read_text_file((dir / "outA" / "00000.png").string()) ==
          irwgan::read_text_file((dir / "outB" / "00000.png").string()));

  auto rbad = run_cmd("translate --run " + (dir / "nothing").string() + " --input " +
                      (dir / "data" / "X").string() + " --direction x2y --out " + (dir / "outC").string());
  REQUIRE(rbad.exit_code == 4);
}

TEST_CASE("diagnose writes the probe schema") {
  auto dir = fresh_dir("diag");
  auto spec = tiny_synth(dir);
  auto r = run_cmd("diagnose --synth " + spec + " --out " + (dir / "probe").string() + " " + tiny_overrides());
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  const std::string csv = irwgan::read_text_file((dir / "probe" / "probe.csv").string());
  REQUIRE(csv.rfind("epoch,mean_aligned,mean_unaligned\n", 0) == 0);
  REQUIRE(count_lines((dir / "probe" / "probe.csv").string()) == 2);  // header + 1 epoch
}

TEST_CASE("sweep produces one run per value plus the summary table") {
  auto dir = fresh_dir("sweep");
  auto spec = tiny_synth(dir);
  auto r = run_cmd("sweep-ess --values 0,1 --synth " + spec + " --out " + (dir / "sweep").string() + " " +
                   tiny_overrides());
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  REQUIRE(fs::exists(dir / "sweep" / "ess_0" / "log.csv"));
  REQUIRE(fs::exists(dir / "sweep" / "ess_1" / "log.csv"));
  REQUIRE(fs::exists(dir / "sweep" / "ess_0" / "histogram_X.csv"));
  const std::string csv = irwgan::read_text_file((dir / "sweep" / "sweep.csv").string());
  REQUIRE(csv.rfind("lambda_ess,ess_x,ess_y,beta_accuracy,fid\n", 0) == 0);
  REQUIRE(count_lines((dir / "sweep" / "sweep.csv").string()) == 3);
}
