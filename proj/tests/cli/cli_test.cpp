#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const fs::path& work() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("ace_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Run run(const std::string& args) {
  const fs::path out = work() / "stdout.txt", err = work() / "stderr.txt";
  const std::string cmd = "cd '" + work().string() + "' && '" ACE_CLI_PATH "' " + args + " > '" + out.string() + "' 2> '" +
                          err.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

nlohmann::json last_json_line(const std::string& text) {
  std::stringstream ss(text);
  std::string line, last;
  while (std::getline(ss, line)) {
    if (!line.empty()) last = line;
  }
  return nlohmann::json::parse(last);
}

const std::string kSmallData = "gen-data --items 48 --concepts 4 --dim 16 --seed 7 --quiet";
const std::string kSmallIds =
    "build-ids --data d0 --seed 7 --quiet --k 4 --codebooks 2 --codebook-size 4 --epochs 10 --hidden 16 --latent-dim 8";
const std::string kSmallTrain =
    "train --data d0 --ids i0 --seed 7 --quiet --d-model 16 --heads 2 --ffn-dim 32 --encoder-layers 2 "
    "--decoder-layers 1 --epochs 2";

void pipeline() {
  static bool done = false;
  if (done) return;
  REQUIRE(run(kSmallData + " --out d0").code == 0);
  REQUIRE(run(kSmallIds + " --out i0").code == 0);
  REQUIRE(run(kSmallTrain + " --out m0").code == 0);
  done = true;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("help lists every flag with its default") {
    for (std::string sub : {"gen-data", "build-ids", "train", "retrieve", "eval", "bench"}) {
      const Run r = run(sub + " --help");
      INFO(sub);
      CHECK(r.code == 0);
      CHECK(r.out.find("--seed") != std::string::npos);
      CHECK(r.out.find("--out") != std::string::npos);
    }
    const Run g = run("gen-data --help");
    CHECK(g.out.find("--items UINT [512]") != std::string::npos);
    CHECK(g.out.find("--split FLOAT,... [0.8,0.1,0.1]") != std::string::npos);
    CHECK(run("eval --help").out.find("[5,25,50]") != std::string::npos);
  }

  TEST_CASE("bad flags exit 2 with a JSON error line") {
    const Run r = run("gen-data --items 0 --seed 7 --out bad");
    CHECK(r.code == 2);
    const auto j = last_json_line(r.err);
    CHECK(j["exit_code"] == 2);
    CHECK(j["message"].get<std::string>().find("items") != std::string::npos);
    CHECK(run("gen-data --out bad").code == 2);
    CHECK(run("gen-data --seed 1 --out bad --no-such-flag").code == 2);
    CHECK(run("frobnicate").code == 2);
    CHECK(run("gen-data --seed 1 --items many --out bad").code == 2);
  }

  TEST_CASE("config files reject unknown keys and flags override them") {
    std::ofstream(work() / "bad.json") << R"({"seed": 3, "data": {"itemz": 5}})";
    const Run bad = run("--config bad.json gen-data --out c0");
    CHECK(bad.code == 2);
    CHECK(bad.err.find("data.itemz") != std::string::npos);
    std::ofstream(work() / "bad2.json") << R"({"seed": 3, "nonsense": {}})";
    CHECK(run("--config bad2.json gen-data --out c0").code == 2);

    std::ofstream(work() / "good.json") << R"({"seed": 3, "data": {"items": 40, "concepts": 4, "dim": 8}})";
    REQUIRE(run("--config good.json gen-data --items 20 --quiet --out c1").code == 0);
    const auto echoed = nlohmann::json::parse(slurp(work() / "c1/config.json"));
    CHECK(echoed["seed"] == 3);
    CHECK(echoed["data"]["items"] == 20);
    CHECK(echoed["data"]["dim"] == 8);
  }

  TEST_CASE("gen-data is deterministic and the echoed config reproduces it") {
    REQUIRE(run(kSmallData + " --out g0").code == 0);
    REQUIRE(run(kSmallData + " --out g1").code == 0);
    std::set<std::string> files;
    for (const auto& e : fs::directory_iterator(work() / "g0")) files.insert(e.path().filename().string());
    CHECK(files == std::set<std::string>{"config.json", "embeddings.bin", "manifest.json", "queries.jsonl"});
    for (const auto& f : files) CHECK(slurp(work() / "g0" / f) == slurp(work() / "g1" / f));
    REQUIRE(run("--config g0/config.json gen-data --quiet --out g2").code == 0);
    for (const auto& f : files) CHECK(slurp(work() / "g0" / f) == slurp(work() / "g2" / f));
  }

  TEST_CASE("build-ids yields a bijection and reports missing inputs") {
    pipeline();
    std::set<std::string> seen;
    std::ifstream in(work() / "i0/identifiers.jsonl");
    std::string line;
    while (std::getline(in, line)) seen.insert(nlohmann::json::parse(line)["tokens"].dump());
    CHECK(seen.size() == 48);
    for (const char* f : {"identifiers.jsonl", "layout.json", "pipeline.ckpt", "usage.json", "config.json"}) {
      CHECK(fs::exists(work() / "i0" / f));
    }
    REQUIRE(run(kSmallIds + " --out i1").code == 0);
    CHECK(slurp(work() / "i0/identifiers.jsonl") == slurp(work() / "i1/identifiers.jsonl"));

    const Run missing = run("build-ids --data nowhere --seed 1 --out x --quiet");
    CHECK(missing.code == 1);
    CHECK(missing.err.find("nowhere/embeddings.bin") != std::string::npos);
  }

  TEST_CASE("large identifier flags are accepted") {
    const Run r = run("build-ids --k 128 --codebook-size 128 --codebooks 2 --help");
    CHECK(r.code == 0);
    std::ofstream(work() / "large.json") << R"({"seed": 1, "identifier": {"k": 128, "codebook_size": 128, "codebooks": 2}})";
    CHECK(run("--config large.json build-ids --data nowhere --out x --quiet").code == 1);
  }

  TEST_CASE("train writes a checkpoint and an epoch log") {
    pipeline();
    CHECK(fs::exists(work() / "m0/model.ckpt"));
    CHECK(fs::exists(work() / "m0/model.ckpt.json"));
    std::ifstream in(work() / "m0/epochs.jsonl");
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
      const auto j = nlohmann::json::parse(line);
      CHECK(j["epoch"] == n + 1);
      ++n;
    }
    CHECK(n == 2);
    REQUIRE(run(kSmallTrain + " --out m1").code == 0);
    CHECK(slurp(work() / "m0/epochs.jsonl").size() > 0);
    CHECK(slurp(work() / "m0/model.ckpt") == slurp(work() / "m1/model.ckpt"));
  }

  TEST_CASE("retrieve returns beam-many ranked results") {
    pipeline();
    const Run r = run("retrieve --model m0 --ids i0 --seed 7 --quiet --beam 5 --query-tokens 3,17,42");
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    REQUIRE(j["results"].size() == 5);
    for (std::size_t i = 0; i + 1 < 5; ++i) CHECK(j["results"][i]["score"] >= j["results"][i + 1]["score"]);
    for (const auto& item : j["results"]) CHECK(item["item_id"] >= 0);
    CHECK(run("retrieve --model m0 --ids i0 --seed 7 --quiet --query-tokens 3,x").code == 2);
  }

  TEST_CASE("eval emits one report per beam") {
    pipeline();
    const Run r = run("eval --model m0 --ids i0 --data d0 --seed 7 --quiet --beams 5,25,50 --out e0");
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    REQUIRE(j.size() == 3);
    for (const auto& report : j) {
      CHECK(report["recall@1"] <= report["recall@5"]);
      CHECK(report["recall@5"] <= report["recall@10"]);
      CHECK(report["mrr@10"] <= report["recall@10"]);
    }
    CHECK(fs::exists(work() / "e0/eval.csv"));
  }

  TEST_CASE("a checkpoint and identifier file from different builds are refused") {
    pipeline();
    REQUIRE(run("build-ids --data d0 --seed 7 --quiet --k 4 --codebooks 2 --codebook-size 3 --epochs 2 --hidden 16 "
                "--latent-dim 8 --out i2")
                .code == 0);
    const Run r = run("retrieve --model m0 --ids i2 --seed 7 --quiet --query-tokens 1,2");
    CHECK(r.code == 1);
    const auto layout_a = nlohmann::json::parse(slurp(work() / "i0/layout.json"))["layout_fingerprint"].get<std::string>();
    const auto layout_b = nlohmann::json::parse(slurp(work() / "i2/layout.json"))["layout_fingerprint"].get<std::string>();
    CHECK(r.err.find(layout_a) != std::string::npos);
    CHECK(r.err.find(layout_b) != std::string::npos);
  }

  TEST_CASE("bench reports both engines") {
    const Run r =
        run("bench --seed 1 --quiet --candidates 500,1000 --concurrency 4 --duration 0.2 --warmup 0.05 --engines "
            "generative,dual-tower --out b0");
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j.size() == 4);
    CHECK(fs::exists(work() / "b0/bench.csv"));
  }
}
