#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "cmr/binary_io.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(CMR_CLI_PATH) + " --threads 1 " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

struct Workdir {
  fs::path root = fs::temp_directory_path() / "cmr_test_cli";
  Workdir() {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workdir() { fs::remove_all(root); }
  std::string operator/(const std::string& name) const { return (root / name).string(); }
};

const char* kTinyTrain = " --iters 2 --cycle 1 --batch 1 --patch 4 --width 2 --snapshots-kept 2 ";

}  // namespace

TEST_CASE("argument errors exit with 2") {
  CHECK(run("--help") == 0);
  CHECK(run("--version") == 0);
  CHECK(run("") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("phantom") == 2);  // --out missing
  CHECK(run("phantom --out /tmp/x --per-class notanumber") == 2);
  CHECK(run("crossval --data a --out b --feature-source magic") == 2);
}

TEST_CASE("missing or malformed inputs exit with 2") {
  Workdir w;
  CHECK(run("segment --model-dir " + (w / "none") + " --data " + (w / "none") + " --out " + (w / "o")) == 2);
  CHECK(run("features --data " + (w / "none") + " --out " + (w / "f.csv")) == 2);
  CHECK(run("forest --features " + (w / "none.csv") + " --out " + (w / "f.bin")) == 2);

  REQUIRE(run("phantom --per-class 1 --seed 3 --out " + (w / "data")) == 0);
  CHECK(fs::exists(w / "data/run_config.json"));
  CHECK(fs::exists(w / "data/phantom001/meta.json"));
  CHECK(fs::exists(w / "data/phantom005/ed_labels.raw"));

  // cycle does not divide the iteration count
  CHECK(run("train --data " + (w / "data") + " --out " + (w / "m") + " --iters 5 --cycle 2") == 2);

  // truncated raw file
  fs::copy(w / "data", w / "broken", fs::copy_options::recursive);
  fs::resize_file(w / "broken/phantom002/es.raw", 100);
  CHECK(run("features --data " + (w / "broken") + " --out " + (w / "f.csv")) == 2);
}

TEST_CASE("tiny end-to-end run through every subcommand") {
  Workdir w;
  REQUIRE(run("phantom --per-class 2 --seed 5 --out " + (w / "data")) == 0);
  REQUIRE(run("train --seed 1 --data " + (w / "data") + " --out " + (w / "model") + kTinyTrain) == 0);
  CHECK(fs::exists(w / "model/snapshot_00000001.bin"));
  CHECK(fs::exists(w / "model/snapshot_00000002.bin"));
  CHECK(fs::exists(w / "model/train_log.csv"));

  REQUIRE(run("segment --dump-probs --model-dir " + (w / "model") + " --data " + (w / "data") + " --out " +
              (w / "seg")) == 0);
  CHECK(fs::exists(w / "seg/phantom003/meta.json"));
  CHECK(fs::exists(w / "seg/phantom003/ed_probs.raw"));

  // a random tiny network can leave a structure empty; Hausdorff is then
  // undefined, which is a numerical (1) rather than an input (2) failure
  const int ev = run("evaluate --pred " + (w / "seg") + " --ref " + (w / "data") + " --out " + (w / "eval.json"));
  CHECK((ev == 0 || ev == 1));

  REQUIRE(run("features --data " + (w / "data") + " --out " + (w / "ref.csv")) == 0);
  REQUIRE(run("forest --trees 20 --features " + (w / "ref.csv") + " --out " + (w / "rf.bin")) == 0);
  REQUIRE(run("diagnose --features " + (w / "ref.csv") + " --model " + (w / "rf.bin") + " --out " +
              (w / "dx.json")) == 0);
  CHECK(fs::exists(w / "dx.json"));
  REQUIRE(run("crossval --k 2 --trees 20 --feature-source reference --data " + (w / "data") + " --out " +
              (w / "cv.json")) == 0);
  CHECK(fs::exists(w / "cv.json"));

  // corrupted snapshot
  auto bytes = cmr::binary::read_file(w / "model/snapshot_00000001.bin");
  bytes[bytes.size() / 2] ^= 0xff;
  cmr::binary::write_file(w / "model/snapshot_00000001.bin", bytes);
  CHECK(run("segment --model-dir " + (w / "model") + " --data " + (w / "data") + " --out " + (w / "seg2")) == 2);

  // prediction set that does not match the references
  fs::remove_all(w / "seg/phantom001");
  CHECK(run("evaluate --pred " + (w / "seg") + " --ref " + (w / "data") + " --out " + (w / "eval2.json")) == 2);
}
