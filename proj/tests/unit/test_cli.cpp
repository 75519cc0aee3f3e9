#include <doctest.h>

#include <algorithm>
#include <cctype>
#include <sstream>

#include <json.hpp>

#include "cli_runner.hpp"
#include "mmkd/synth_data.hpp"
#include "mmkd/train.hpp"

using namespace mmkd;
using test_util::run_cli;
using test_util::slurp;

namespace fs = std::filesystem;

namespace {

const char* kSmallConfig = R"({"epochs": 2, "hidden_dim": 8, "teacher_depth": 2, "batch_size": 16, "seed": 3})";

fs::path prepared_dir(const std::string& name) {
  const auto dir = test_util::scratch_dir(name);
  test_util::spit(dir / "cfg.json", kSmallConfig);
  REQUIRE(run_cli(dir, "gen-data --n 300 --seed 2 --out data.csv").code == 0);
  return dir;
}

}  // namespace

TEST_CASE("gen-data writes header plus n rows deterministically") {
  const auto dir = test_util::scratch_dir("cli_gen");
  const auto r = run_cli(dir, "gen-data --n 300 --classes 3 --out a.csv");
  CHECK(r.code == 0);
  const auto text = slurp(dir / "a.csv");
  CHECK(std::count(text.begin(), text.end(), '\n') == 301);
  CHECK(run_cli(dir, "gen-data --n 300 --classes 3 --out b.csv").code == 0);
  CHECK(slurp(dir / "b.csv") == text);
}

TEST_CASE("usage errors exit 2") {
  const auto dir = test_util::scratch_dir("cli_usage");
  CHECK(run_cli(dir, "gen-data --classes 0 --out a.csv").code == 2);
  CHECK(run_cli(dir, "gen-data --noise -1 --out a.csv").code == 2);
  CHECK(run_cli(dir, "gen-data --n 2 --classes 3 --out a.csv").code == 2);
  CHECK(run_cli(dir, "gen-data").code == 2);
  CHECK(run_cli(dir, "gradcheck --trials 0").code == 2);
  CHECK(run_cli(dir, "no-such-command").code == 2);
  CHECK(run_cli(dir, "").code == 2);
  CHECK(run_cli(dir, "--help").code == 0);
  CHECK_FALSE(fs::exists(dir / "a.csv"));
}

TEST_CASE("runtime errors exit 1 with context") {
  const auto dir = prepared_dir("cli_runtime");
  auto r = run_cli(dir, "train-teacher --data missing.csv --out-model t.json --out-report r.json");
  CHECK(r.code == 1);
  CHECK(r.err.find("missing.csv") != std::string::npos);

  test_util::spit(dir / "bad.json", R"({"epochz": 2})");
  r = run_cli(dir, "train-teacher --data data.csv --config bad.json --out-model t.json --out-report r.json");
  CHECK(r.code == 1);
  CHECK(r.err.find("epochz") != std::string::npos);

  test_util::spit(dir / "teacher.json", serialize(new_modal_net(3, 5, 8, 3, 2, 0)));
  r = run_cli(dir, "distill --data data.csv --teacher teacher.json --out-model s.json --out-report sr.json "
                   "--out-trace tr.json");
  CHECK(r.code == 1);
  CHECK(r.err.find("text_dim=3") != std::string::npos);
  CHECK(r.err.find("text_dim=4") != std::string::npos);
}

TEST_CASE("train-teacher and distill write consistent artifacts") {
  const auto dir = prepared_dir("cli_pipeline");
  const auto data_before = slurp(dir / "data.csv");
  REQUIRE(run_cli(dir, "train-teacher --data data.csv --config cfg.json --out-model t.json --out-report tr.json").code ==
          0);
  const auto teacher = deserialize(slurp(dir / "t.json"));
  CHECK(serialize(teacher) == slurp(dir / "t.json"));
  CHECK(fs::exists(dir / "train-teacher_seed3.config.json"));
  CHECK(config_from_json(slurp(dir / "train-teacher_seed3.config.json")) == config_from_json(kSmallConfig));

  const auto report = nlohmann::json::parse(slurp(dir / "tr.json"));
  const auto parts = split(read_csv((dir / "data.csv").string()), kDefaultSplit, 3);
  CHECK(report["best_val_accuracy"].get<double>() == evaluate(teacher, parts.val, ModalityMode::Joint));
  CHECK(report["test_accuracy"].get<double>() == evaluate(teacher, parts.test, ModalityMode::Joint));

  test_util::spit(dir / "nomr.json", R"({"epochs": 2, "hidden_dim": 8, "teacher_depth": 2, "seed": 3, "lambda_mr": 0})");
  REQUIRE(run_cli(dir, "distill --data data.csv --teacher t.json --config nomr.json --out-model s.json "
                       "--out-report sr.json --out-trace out/trace.json")
              .code == 0);
  CHECK(slurp(dir / "data.csv") == data_before);
  const auto trace = nlohmann::json::parse(slurp(dir / "out" / "trace.json"));
  CHECK(trace["records"].size() == 3);
  for (int e = 0; e <= 2; ++e) {
    for (const char* kind : {"gt", "gs", "absdiff"}) {
      const auto p = dir / "out" / ("trace_epoch" + std::to_string(e) + "_" + kind + ".pgm");
      CHECK(fs::exists(p));
      CHECK(fs::file_size(p) == 13 + 96 * 96);
    }
  }
  const auto sr = nlohmann::json::parse(slurp(dir / "sr.json"));
  for (const auto& e : sr["epochs"]) CHECK(e["loss_mr"].get<double>() >= 0.0);
  CHECK(sr["config"]["lambda_mr"].get<double>() == 0.0);

  const auto first = slurp(dir / "sr.json");
  REQUIRE(run_cli(dir, "distill --data data.csv --teacher t.json --config nomr.json --out-model s2.json "
                       "--out-report sr2.json --out-trace out2/trace.json")
              .code == 0);
  CHECK(slurp(dir / "sr2.json") == first);
  CHECK(slurp(dir / "s2.json") == slurp(dir / "s.json"));
}

TEST_CASE("compare renders one row per seed and arm") {
  const auto dir = prepared_dir("cli_compare");
  const auto r = run_cli(dir, "compare --data data.csv --config cfg.json --seeds 3 --out table.txt");
  REQUIRE(r.code == 0);
  const auto text = slurp(dir / "table.txt");
  std::istringstream lines(text);
  std::string line;
  int kd_rows = 0, ours_rows = 0, median_rows = 0;
  while (std::getline(lines, line)) {
    std::istringstream words(line);
    std::string first, second;
    words >> first >> second;
    const bool numeric = !first.empty() && std::all_of(first.begin(), first.end(), ::isdigit);
    kd_rows += numeric && second == "KD";
    ours_rows += numeric && second == "Ours";
    median_rows += (first == "KD" || first == "Ours") && second != "vs";
  }
  CHECK(kd_rows == 3);
  CHECK(ours_rows == 3);
  CHECK(median_rows == 2);
  CHECK(text.find("val") != std::string::npos);
  CHECK(text.find("test") != std::string::npos);
  CHECK(text.find("73.62") != std::string::npos);
  CHECK(text.find("75.33") != std::string::npos);
  const auto doc = nlohmann::json::parse(slurp(dir / "table.txt.json"));
  CHECK(doc["rows"].size() == 6);
}

TEST_CASE("gradcheck exit status tracks gradient correctness") {
  const auto dir = test_util::scratch_dir("cli_gradcheck");
  auto r = run_cli(dir, "gradcheck --trials 10");
  CHECK(r.code == 0);
  CHECK(r.out.find("max relative error") != std::string::npos);
  r = run_cli(dir, "gradcheck --trials 10 --corrupt-backward");
  CHECK(r.code == 1);
}
