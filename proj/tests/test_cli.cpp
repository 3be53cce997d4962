#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fcac/cli.hpp"

using namespace fcac;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const char* name) {
  std::string d = "/tmp/fcac_cli_" + std::string(name) + "_" + std::to_string(::getpid());
  fs::create_directories(d);
  return d;
}

std::string write_tiny_config(const std::string& dir, std::uint64_t seed = 11) {
  const std::string path = dir + "/config.json";
  std::ofstream out(path);
  out << R"({
  "seed": )" << seed << R"(,
  "out_dir": ")" << dir << R"(/out",
  "dsp": {"n_mels": 16, "fmin_hz": 100.0},
  "embedder": {"embedding_dim": 8, "channels": [2, 2], "blocks": [1, 1], "projection_dim": 4},
  "loss": {"lambda": 0.2, "beta": 1.0, "scale": 16.0},
  "optimizer": {"learning_rate": 0.05, "momentum": 0.9},
  "protocol": {"n_base_classes": 3, "sessions": 1, "way": 2, "shot": 3,
               "base_epochs": 2, "classifier_epochs": 2, "incremental_epochs": 3,
               "batch_size": 8},
  "dataset": {"kind": "synthetic", "classes": 5, "train_per_class": 4, "eval_per_class": 1,
              "duration_s": 0.12, "noise_level": 0.05}
})";
  return path;
}

std::vector<char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

nlohmann::json read_json(const std::string& path) {
  auto bytes = read_bytes(path);
  return nlohmann::json::parse(std::string(bytes.begin(), bytes.end()));
}

struct CaptureStreams {
  CaptureStreams() : old_out(std::cout.rdbuf(out.rdbuf())), old_err(std::cerr.rdbuf(err.rdbuf())) {}
  ~CaptureStreams() {
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
  }
  std::ostringstream out, err;
  std::streambuf* old_out;
  std::streambuf* old_err;
};

}  // namespace

TEST_CASE("extract writes one record per clip and is reproducible") {
  const std::string dir = temp_dir("extract");
  const std::string cfg = write_tiny_config(dir);
  const std::string manifest = dir + "/manifest.txt";
  {
    std::ofstream out(manifest);
    out << "synth_seed=4\n";
    for (int c = 0; c < 2; ++c) {
      for (int i = 0; i < 5; ++i) {
        out << "synth:" << c << ":" << i << "," << c << ",train\n";
      }
    }
  }
  const std::string cache = dir + "/features.bin";
  {
    CaptureStreams cap;
    CHECK(cli::run_cli({"extract", "--config", cfg, "--manifest", manifest, "--out", cache}) == 0);
  }
  auto bytes = read_bytes(cache);
  REQUIRE(bytes.size() > 16);
  CHECK(std::string(bytes.data(), 8) == "FCACFEAT");
  std::uint32_t version, count;
  std::memcpy(&version, bytes.data() + 8, 4);
  std::memcpy(&count, bytes.data() + 12, 4);
  CHECK(version == 1);
  CHECK(count == 10);

  {
    CaptureStreams cap;
    CHECK(cli::run_cli({"extract", "--config", cfg, "--manifest", manifest, "--out",
                        dir + "/features2.bin"}) == 0);
  }
  CHECK(read_bytes(dir + "/features2.bin") == bytes);
  fs::remove_all(dir);
}

TEST_CASE("extract keeps going past a missing clip and reports it") {
  const std::string dir = temp_dir("extract_missing");
  const std::string cfg = write_tiny_config(dir);
  const std::string manifest = dir + "/manifest.txt";
  {
    std::ofstream out(manifest);
    for (int i = 0; i < 9; ++i) out << "synth:0:" << i << ",0,train\n";
    out << dir << "/not_there.wav,1,train\n";
  }
  const std::string cache = dir + "/features.bin";
  CaptureStreams cap;
  const int rc = cli::run_cli({"extract", "--config", cfg, "--manifest", manifest, "--out", cache});
  CHECK(rc == cli::kExitRuntime);
  auto bytes = read_bytes(cache);
  std::uint32_t count;
  std::memcpy(&count, bytes.data() + 12, 4);
  CHECK(count == 9);
  CHECK(cap.err.str().find("not_there.wav") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("run writes deterministic reports and a checkpoint") {
  const std::string dir = temp_dir("run");
  const std::string cfg = write_tiny_config(dir);
  {
    CaptureStreams cap;
    REQUIRE(cli::run_cli({"run", "--config", cfg}) == 0);
    // stdout carries the session table
    CHECK(cap.out.str().find("row,sess0,sess1,AA,PD") != std::string::npos);
  }
  const std::string out = dir + "/out";
  auto csv = read_bytes(out + "/report.csv");
  auto json_bytes = read_bytes(out + "/report.json");
  auto ckpt = read_bytes(out + "/checkpoint.bin");

  auto parsed = nlohmann::json::parse(std::string(json_bytes.begin(), json_bytes.end()));
  CHECK(parsed.at("sessions").size() == 2);
  CHECK(parsed.at("seed") == 11);
  CHECK(parsed.at("config").at("loss").at("lambda") == 0.2);
  CHECK(parsed.contains("clustering_ratio_base"));

  {
    CaptureStreams cap;
    REQUIRE(cli::run_cli({"run", "--config", cfg, "--out-dir", dir + "/out2"}) == 0);
  }
  CHECK(read_bytes(dir + "/out2/report.csv") == csv);
  auto second_bytes = read_bytes(dir + "/out2/report.json");
  CHECK(second_bytes != json_bytes);  // out_dir is echoed in the config
  auto second = nlohmann::json::parse(std::string(second_bytes.begin(), second_bytes.end()));
  CHECK(second.at("sessions") == parsed.at("sessions"));
  CHECK(second.at("summary") == parsed.at("summary"));
  CHECK(read_bytes(dir + "/out2/checkpoint.bin") == ckpt);
  fs::remove_all(dir);
}

TEST_CASE("train-base then train-incr reproduces a full run") {
  const std::string dir = temp_dir("resume");
  const std::string cfg = write_tiny_config(dir);
  {
    CaptureStreams cap;
    REQUIRE(cli::run_cli({"run", "--config", cfg, "--out-dir", dir + "/full"}) == 0);
    REQUIRE(cli::run_cli({"train-base", "--config", cfg, "--out-dir", dir + "/base"}) == 0);
    REQUIRE(cli::run_cli({"train-incr", "--config", cfg, "--checkpoint",
                          dir + "/base/checkpoint.bin", "--out-dir", dir + "/incr"}) == 0);
  }
  CHECK(read_bytes(dir + "/full/checkpoint.bin") == read_bytes(dir + "/incr/checkpoint.bin"));

  auto full = read_json(dir + "/full/report.json");
  auto incr = read_json(dir + "/incr/report.json");
  REQUIRE(incr.at("sessions").size() == 1);
  CHECK(incr.at("sessions")[0] == full.at("sessions")[1]);

  // eval on the final checkpoint prints the same session-1 numbers
  CaptureStreams cap;
  REQUIRE(cli::run_cli({"eval", "--config", cfg, "--checkpoint", dir + "/incr/checkpoint.bin"}) == 0);
  CHECK(cap.out.str().find("row,sess1,AA,PD") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("config precedence is file, then environment, then flags") {
  const std::string dir = temp_dir("precedence");
  const std::string cfg = write_tiny_config(dir);

  ::setenv("FCAC_LAMBDA", "0.31", 1);
  {
    CaptureStreams cap;
    REQUIRE(cli::run_cli({"run", "--config", cfg, "--out-dir", dir + "/env"}) == 0);
  }
  auto env_json = read_json(dir + "/env/report.json");
  CHECK(env_json.at("config").at("loss").at("lambda") == 0.31);

  {
    CaptureStreams cap;
    REQUIRE(cli::run_cli({"run", "--config", cfg, "--out-dir", dir + "/flag",
                          "--lambda", "0.07"}) == 0);
  }
  auto flag_json = read_json(dir + "/flag/report.json");
  CHECK(flag_json.at("config").at("loss").at("lambda") == 0.07);
  ::unsetenv("FCAC_LAMBDA");
  fs::remove_all(dir);
}

TEST_CASE("exit codes") {
  CaptureStreams cap;
  // unreadable config: validation
  CHECK(cli::run_cli({"run", "--config", "/nonexistent/cfg.json"}) == cli::kExitRuntime);

  // config that cannot satisfy the protocol: validation error
  const std::string dir = temp_dir("exitcodes");
  const std::string bad = dir + "/bad.json";
  {
    std::ofstream out(bad);
    out << R"({"protocol": {"n_base_classes": 60, "sessions": 8, "way": 5},
               "dataset": {"kind": "synthetic", "classes": 10}})";
  }
  CHECK(cli::run_cli({"run", "--config", bad}) == cli::kExitValidation);

  // malformed json: validation
  {
    std::ofstream out(bad, std::ios::trunc);
    out << "{not json";
  }
  CHECK(cli::run_cli({"run", "--config", bad}) == cli::kExitValidation);

  // verification suite: clean pass, named failure under fault injection
  CHECK(cli::run_cli({"verify", "--seed", "3", "--trials", "3"}) == 0);
  CHECK(cli::run_cli({"verify", "--seed", "3", "--trials", "3", "--perturb", "table-data"}) ==
        cli::kExitVerification);
  CHECK(cap.out.str().find("[FAIL] metrics.tables") != std::string::npos);

  // verify is deterministic for a fixed seed
  CaptureStreams cap2;
  CHECK(cli::run_cli({"verify", "--seed", "3", "--trials", "3"}) == 0);
  std::string first = cap2.out.str();
  CaptureStreams cap3;
  CHECK(cli::run_cli({"verify", "--seed", "3", "--trials", "3"}) == 0);
  CHECK(cap3.out.str() == first);
  fs::remove_all(dir);
}
