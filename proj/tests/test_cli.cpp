#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "seqvi/cli.hpp"
#include "seqvi/random.hpp"

namespace fs = std::filesystem;
using seqvi::cli::ExitCode;
using seqvi::cli::run;

namespace {

struct TempDir {
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("seqvi-cli-" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& s) const { return (path / s).string(); }
  fs::path path;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  const auto s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

std::vector<std::string> small_data(const std::string& out, const std::string& seed = "3") {
  return {"gen-lorenz", "--out", out, "--seed", seed, "--seqs", "4", "--val-seqs", "2", "--test-seqs", "1", "--len", "10"};
}

std::vector<std::string> small_train(const std::string& data, const std::string& out) {
  return {"train", "--data", data, "--out", out, "--epochs", "2", "--batch", "2", "--hidden", "6", "--seed", "4"};
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  TempDir tmp("usage");
  CHECK(run({}) == ExitCode::kUsage);
  CHECK(run({"frobnicate"}) == ExitCode::kUsage);
  CHECK(run({"train", "--out", tmp / "run"}) == ExitCode::kUsage);
  CHECK(run({"oracle-check", "--out", tmp / "o", "--trials", "10"}) == ExitCode::kUsage);
  CHECK(run({"oracle-check", "--out", tmp / "o2", "--K-list", "1,x"}) == ExitCode::kUsage);
  CHECK(run({"train", "--data", tmp / "missing", "--out", tmp / "r2"}) != ExitCode::kOk);
}

TEST_CASE("gen-lorenz is byte-identical for a fixed seed") {
  TempDir tmp("gen");
  REQUIRE(run(small_data(tmp / "a")) == ExitCode::kOk);
  REQUIRE(run(small_data(tmp / "b")) == ExitCode::kOk);
  REQUIRE(run(small_data(tmp / "c", "4")) == ExitCode::kOk);
  for (const char* f : {"train.json", "val.json", "test.json"}) {
    CHECK(slurp(tmp.path / "a" / f) == slurp(tmp.path / "b" / f));
    CHECK(slurp(tmp.path / "a" / f) != slurp(tmp.path / "c" / f));
  }
  const auto man = nlohmann::json::parse(slurp(tmp.path / "a" / "manifest.json"));
  CHECK(man.at("command") == "gen-lorenz");
  CHECK(man.at("seed") == 3);
}

TEST_CASE("a non-empty output directory needs --force") {
  TempDir tmp("force");
  REQUIRE(run(small_data(tmp / "a")) == ExitCode::kOk);
  CHECK(run(small_data(tmp / "a")) == ExitCode::kUsage);
  auto args = small_data(tmp / "a");
  args.push_back("--force");
  CHECK(run(args) == ExitCode::kOk);
}

TEST_CASE("oracle-check passes with a single K") {
  TempDir tmp("oracle");
  CHECK(run({"oracle-check", "--out", tmp / "o", "--K-list", "1", "--trials", "100"}) == ExitCode::kOk);
  const auto j = nlohmann::json::parse(slurp(tmp.path / "o" / "oracle.json"));
  CHECK(j.contains("exact"));
}

TEST_CASE("train and eval") {
  TempDir tmp("train");
  REQUIRE(run(small_data(tmp / "data")) == ExitCode::kOk);
  REQUIRE(run(small_train(tmp / "data", tmp / "run")) == ExitCode::kOk);
  for (const char* f : {"metrics.csv", "anneal.csv", "best.json", "last.json", "manifest.json"})
    CHECK(fs::exists(tmp.path / "run" / f));
  CHECK(line_count(tmp.path / "run" / "metrics.csv") == 3);

  SUBCASE("eval reproduces the recorded validation score") {
    for (const char* ck : {"best.json", "last.json"}) {
      const auto ckj = nlohmann::json::parse(slurp(tmp.path / "run" / ck));
      const std::string out = tmp / (std::string("eval-") + ck);
      REQUIRE(run({"eval", "--ckpt", tmp / ("run/" + std::string(ck)), "--data", tmp / "data/val.json",
                   "--K-eval", "1", "--out", out}) == ExitCode::kOk);
      const auto rep = nlohmann::json::parse(slurp(fs::path(out) / "report.json"));
      CHECK(rep.at("ll_per_step").get<double>() == ckj.at("val_ll").get<double>());
      CHECK(fs::exists(fs::path(out) / "report.csv"));
    }
  }

  SUBCASE("config files supply defaults that flags override") {
    const std::string cfg = tmp / "cfg.json";
    std::ofstream(cfg) << R"({"epochs": 3, "batch": 2, "hidden": 6, "seed": 4})";
    REQUIRE(run({"train", "--data", tmp / "data", "--out", tmp / "c1", "--config", cfg}) == ExitCode::kOk);
    CHECK(line_count(tmp.path / "c1" / "metrics.csv") == 4);
    REQUIRE(run({"train", "--data", tmp / "data", "--out", tmp / "c2", "--config", cfg, "--epochs", "2"}) ==
            ExitCode::kOk);
    CHECK(slurp(tmp.path / "c2" / "metrics.csv") == slurp(tmp.path / "run" / "metrics.csv"));

    std::ofstream(tmp / "bad.json") << R"({"epochz": 3})";
    CHECK(run({"train", "--data", tmp / "data", "--out", tmp / "c3", "--config", tmp / "bad.json"}) ==
          ExitCode::kUsage);
  }

  SUBCASE("dkf and iwdkf with one sample produce identical metrics") {
    auto a = small_train(tmp / "data", tmp / "dkf");
    a.insert(a.end(), {"--bound", "dkf"});
    auto b = small_train(tmp / "data", tmp / "iw");
    b.insert(b.end(), {"--bound", "iwdkf", "--K", "1"});
    REQUIRE(run(a) == ExitCode::kOk);
    REQUIRE(run(b) == ExitCode::kOk);
    CHECK(slurp(tmp.path / "dkf" / "metrics.csv") == slurp(tmp.path / "iw" / "metrics.csv"));
  }

  SUBCASE("the gated model refuses real-valued data") {
    auto a = small_train(tmp / "data", tmp / "gated");
    a.insert(a.end(), {"--model", "gated-bernoulli"});
    CHECK(run(a) != ExitCode::kOk);
  }
}

TEST_CASE("gated model trains on synthetic binary data") {
  TempDir tmp("gated");
  REQUIRE(run({"gen-synthetic", "--out", tmp / "data", "--dx", "4", "--len", "6", "--seqs", "4", "--val-seqs",
               "2", "--test-seqs", "0"}) == ExitCode::kOk);
  CHECK(run({"train", "--data", tmp / "data", "--out", tmp / "run", "--model", "gated-bernoulli", "--bound",
             "iwdkf", "--K", "2", "--epochs", "1", "--hidden", "4", "--latent", "3", "--emission-hidden", "4"}) ==
        ExitCode::kOk);
}
