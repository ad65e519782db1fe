// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "cardioclip_cli_test";

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome cli(const std::string& args) {
  fs::create_directories(kWork);
  const auto out = kWork / "stdout.txt", err = kWork / "stderr.txt";
  const std::string cmd = std::string(CARDIOCLIP_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

const char* kTiny =
    " --set synth.n_cases=40 --set synth.dims=[32,32,32] --set visual.input_dims=[32,32,32]"
    " --set data.n_train=24 --set mae.epochs=2 --set mae.batch=8 --set clip.epochs=2"
    " --set finetune.epochs=2 --set visual.depth=1 --set text.depth=1 --set decoder.depth=1 --quiet";

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(cli("run bogus-command --out " + (kWork / "x").string()).code == 2);
  const auto o = cli("run bogus-command");
  CHECK(o.err.find("pretrain-mae") != std::string::npos);
  CHECK(cli("").code == 2);
  CHECK(cli("run gradcheck --set no_equals").code == 2);
  CHECK(cli("--version").code == 0);
}

TEST_CASE("invalid configs exit 3 and name the violation") {
  const auto o = cli("run gradcheck --set clip.temperature=0 --out " + (kWork / "bad").string());
  CHECK(o.code == 3);
  CHECK(o.err.find("ContrastiveConfig") != std::string::npos);
  CHECK(cli("run gradcheck --set clip.tau=0.1 --out " + (kWork / "bad").string()).code == 3);
  CHECK(cli("run gradcheck --config /nonexistent/config.json --out " + (kWork / "bad").string()).code != 0);
}

TEST_CASE("gradcheck command") {
  const auto dir = kWork / "gc";
  fs::remove_all(dir);
  const auto o = cli("run gradcheck --quiet --out " + dir.string());
  CHECK(o.code == 0);
  const auto j = nlohmann::json::parse(slurp(dir / "metrics" / "gradcheck.json"));
  CHECK(j.at("command") == "gradcheck");
  CHECK(fs::exists(dir / "manifests" / "gradcheck.json"));
  CHECK(fs::exists(dir / "config.json"));
}

TEST_CASE("stage commands need their inputs") {
  const auto dir = kWork / "empty";
  fs::remove_all(dir);
  CHECK(cli("run pretrain-mae" + std::string(kTiny) + " --out " + dir.string()).code == 1);
}

TEST_CASE("tiny end-to-end pipeline is deterministic") {
  const std::vector<std::string> cmds{"synth",         "structure-reports", "pretrain-mae", "pretrain-clip",
                                      "eval-zeroshot", "eval-retrieval",    "eval-cac",     "finetune"};
  std::vector<std::string> first;
  for (int rep = 0; rep < 2; ++rep) {
    const auto dir = kWork / ("e2e" + std::to_string(rep));
    fs::remove_all(dir);
    for (const auto& c : cmds) {
      const auto o = cli("run " + c + kTiny + " --out " + dir.string());
      INFO(c << ": " << o.err);
      REQUIRE(o.code == 0);
      CHECK(nlohmann::json::parse(o.out).at("command") == c);
      const std::string m = slurp(dir / "metrics" / (c + ".json"));
      if (rep == 0) first.push_back(m);
      else CHECK(m == first[std::size_t(&c - cmds.data())]);
    }
    CHECK(fs::exists(dir / "data" / "reports.jsonl"));
    CHECK(fs::exists(dir / "data" / "structured.jsonl"));
    CHECK(fs::exists(dir / "checkpoints" / "mae" / "payload.bin"));
    CHECK(fs::exists(dir / "checkpoints" / "clip" / "manifest.json"));
    CHECK(fs::exists(dir / "checkpoints" / "finetune" / "payload.bin"));
    CHECK(fs::exists(dir / "traces" / "mae.jsonl"));
    CHECK(fs::exists(dir / "traces" / "clip.jsonl"));
    CHECK(fs::exists(dir / "vocab.txt"));
  }

  // a changed config refuses the stale checkpoint unless forced
  const auto dir = kWork / "e2e0";
  CHECK(cli("run eval-zeroshot" + std::string(kTiny) + " --set clip.temperature=0.1 --out " + dir.string()).code == 1);
  CHECK(cli("run eval-zeroshot" + std::string(kTiny) + " --set clip.temperature=0.1 --force --out " + dir.string())
            .code == 0);
}
