#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "mcm/data.hpp"

using namespace mcm;
namespace fs = std::filesystem;

namespace {

// Shell out to the installed binary; stdout/stderr are silenced so test
// output stays readable.
int run(const std::string& args) {
  std::string cmd = std::string(MCM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  return std::system(cmd.c_str());
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct TmpDir {
  fs::path path;
  TmpDir() {
    path = fs::temp_directory_path() / ("mcm_cli_test_" + std::to_string(std::rand()));
    fs::create_directories(path);
  }
  ~TmpDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("cli rejects bad invocations") {
  CHECK(run("") != 0);
  CHECK(run("--bogus-flag") != 0);
  CHECK(run("synth") != 0);             // missing required --out
  CHECK(run("no-such-command") != 0);
}

TEST_CASE("cli end to end: synth, train, eval, infer, profile, plot") {
  TmpDir tmp;
  fs::path data = tmp.path / "data";
  fs::path out = tmp.path / "run";

  REQUIRE(run("synth --out " + data.string() +
              " --T 4 --size 32 --count 2 --seed 7 --a 0.2") == 0);
  CHECK(fs::exists(data / "case000_seq.mcmt"));
  CHECK(fs::exists(data / "case001_gt.mcmt"));
  CHECK(fs::exists(data / "case001_masks.mcmt"));
  TensorPtr seq = load_tensor((data / "case000_seq.mcmt").string());
  CHECK(seq->shape == std::vector<int>{4, 32, 32});

  std::ofstream cfg(tmp.path / "train.cfg");
  cfg << "lr = 1e-3\nlambda = 0.01\nepochs = 1\nsteps_per_epoch = 2\n"
      << "batch_size = 1\nK = 1\nc_base = 4\nd_state = 4\ncrop = 32\nseed = 1\n"
      << "data_dir = " << data.string() << "\nout_dir = " << out.string() << "\n";
  cfg.close();
  REQUIRE(run("train --config " + (tmp.path / "train.cfg").string()) == 0);
  CHECK(fs::exists(out / "model.mcmc"));
  std::string csv = slurp(out / "loss.csv");
  CHECK(csv.rfind("epoch,total,sim,smooth\n", 0) == 0);

  fs::path records = out / "eval_records.jsonl";
  REQUIRE(run("eval --ckpt " + (out / "model.mcmc").string() + " --data " + data.string() +
              " --out " + records.string()) == 0);
  std::string jsonl = slurp(records);
  int lines = 0;
  for (char c : jsonl)
    if (c == '\n') ++lines;
  CHECK(lines == 2 * 4);  // two sequences, one record per frame

  fs::path phi = tmp.path / "phi.mcmt";
  REQUIRE(run("infer --ckpt " + (out / "model.mcmc").string() + " --seq " +
              (data / "case000_seq.mcmt").string() + " --t 2 --out " + phi.string()) == 0);
  TensorPtr field = load_tensor(phi.string());
  CHECK(field->shape == std::vector<int>{2, 32, 32});

  fs::path prof = tmp.path / "profile.csv";
  REQUIRE(run("profile --c-base 2 --d-state 2 --size 32 --calls 2 --warmup 1 --out " +
              prof.string()) == 0);
  std::string ptxt = slurp(prof);
  CHECK(ptxt.find("n_f") != std::string::npos);
  lines = 0;
  for (char c : ptxt)
    if (c == '\n') ++lines;
  CHECK(lines == 4);  // header + one row per window length

  fs::path plots = tmp.path / "plots";
  REQUIRE(run("plot --records " + records.string() + " --loss " + (out / "loss.csv").string() +
              " --out-dir " + plots.string()) == 0);
  CHECK(fs::exists(plots / "tc_curve.svg"));
  CHECK(fs::exists(plots / "loss_curve.svg"));

  CHECK(run("eval --ckpt " + (out / "model.mcmc").string() + " --data " +
            (tmp.path / "empty").string()) != 0);
}
