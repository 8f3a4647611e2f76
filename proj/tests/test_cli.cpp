#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "pcb/cli.hpp"

namespace fs = std::filesystem;
using namespace pcb::cli;

namespace {

nlohmann::json tiny_spec_json(const std::string& out_dir) {
  return nlohmann::json{
      {"dataset",
       {{"synth",
         {{"num_classes", 4},
          {"max_count", 12},
          {"imbalance", 12},
          {"feature_dim", 4},
          {"confusability", 0.25},
          {"val_per_class", 4},
          {"seed", 5}}}}},
      {"head",
       {{"backbone_hidden", 8},
        {"feature_dim", 6},
        {"proj_hidden", 8},
        {"steps", 2},
        {"init_seed", 3}}},
      {"loss", {{"variant", "pcb_ce"}, {"alpha", 0.4}}},
      {"train",
       {{"epochs", 3},
        {"batch_size", 8},
        {"lr", 0.05},
        {"decay_epochs", nlohmann::json::array()},
        {"pcb_start_epoch", 1},
        {"gamma", 0.9},
        {"seed", 11}}},
      {"outputs", {{"dir", out_dir}}}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("spec parsing fills every block") {
  const auto spec = parse_spec_json(tiny_spec_json("x"), GlobalOptions{});
  CHECK(spec.use_synth);
  CHECK(spec.synth_cfg.num_classes == 4);
  CHECK(spec.head.steps == 2);
  CHECK(spec.loss.variant == pcb::LossVariant::kPcbCe);
  CHECK(spec.loss.alpha == 0.4);
  CHECK(spec.train.epochs == 3);
  CHECK(spec.outputs.dir == "x");
  CHECK(spec.config_hash.size() == 16);
}

TEST_CASE("unknown keys are rejected with their path") {
  auto j = tiny_spec_json("x");
  j["train"]["learning_rate"] = 0.1;  // typo for lr
  try {
    parse_spec_json(j, GlobalOptions{});
    FAIL("expected a spec error");
  } catch (const SpecError& e) {
    CHECK(std::string(e.what()).find("train.learning_rate") !=
          std::string::npos);
  }
}

TEST_CASE("invalid field values are rejected") {
  auto j = tiny_spec_json("x");
  j["loss"]["alpha"] = 1.5;
  CHECK_THROWS_AS(parse_spec_json(j, GlobalOptions{}), SpecError);
  j = tiny_spec_json("x");
  j["loss"]["variant"] = "focal";
  CHECK_THROWS_AS(parse_spec_json(j, GlobalOptions{}), SpecError);
  j = tiny_spec_json("x");
  j["dataset"].erase("synth");
  CHECK_THROWS_AS(parse_spec_json(j, GlobalOptions{}), SpecError);
}

TEST_CASE("seed override reaches every seed and changes the hash") {
  GlobalOptions opts;
  opts.seed = 777;
  const auto spec = parse_spec_json(tiny_spec_json("x"), opts);
  CHECK(spec.synth_cfg.seed == 777);
  CHECK(spec.head.init_seed == 777);
  CHECK(spec.train.seed == 777);
  const auto base = parse_spec_json(tiny_spec_json("x"), GlobalOptions{});
  CHECK(spec.config_hash != base.config_hash);
}

TEST_CASE("dataset snapshot command writes deterministically") {
  TempDir dir("pcb_cli_synth");
  const auto spec =
      parse_spec_json(tiny_spec_json((dir.path / "out").string()),
                      GlobalOptions{});
  CHECK(cmd_synth(spec) == 0);
  const auto first = slurp(dir.path / "out" / "dataset.json");
  CHECK(cmd_synth(spec) == 0);
  CHECK(slurp(dir.path / "out" / "dataset.json") == first);
}

TEST_CASE("training writes checkpoint, log and report; reruns are byte-identical") {
  TempDir dir("pcb_cli_train");
  const auto out = (dir.path / "run").string();
  const auto spec = parse_spec_json(tiny_spec_json(out), GlobalOptions{});
  CHECK(cmd_train(spec) == 0);
  for (const char* f :
       {"checkpoint.json", "epochs.csv", "final_report.json",
        "final_report.csv", "confmat.json"}) {
    CHECK(fs::exists(fs::path(out) / f));
  }
  const auto log1 = slurp(fs::path(out) / "epochs.csv");
  const auto ckpt1 = slurp(fs::path(out) / "checkpoint.json");
  CHECK(cmd_train(spec) == 0);
  CHECK(slurp(fs::path(out) / "epochs.csv") == log1);
  CHECK(slurp(fs::path(out) / "checkpoint.json") == ckpt1);
  // the log embeds one row per epoch plus a header
  CHECK(std::count(log1.begin(), log1.end(), '\n') == 4);
}

TEST_CASE("alpha zero and disabled regularizer train identical checkpoints") {
  TempDir dir("pcb_cli_degenerate");
  auto j = tiny_spec_json((dir.path / "a").string());
  j["loss"]["alpha"] = 0.0;
  CHECK(cmd_train(parse_spec_json(j, GlobalOptions{})) == 0);
  auto j2 = tiny_spec_json((dir.path / "b").string());
  j2["loss"] = {{"variant", "ce"}};
  CHECK(cmd_train(parse_spec_json(j2, GlobalOptions{})) == 0);
  // parameters identical although hashes differ
  const auto a = pcb::RecurrentHead::load((dir.path / "a" / "checkpoint.json").string());
  const auto b = pcb::RecurrentHead::load((dir.path / "b" / "checkpoint.json").string());
  CHECK((a.params() - b.params()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("evaluation and calibration emit their tables") {
  TempDir dir("pcb_cli_eval");
  const auto out = (dir.path / "run").string();
  const auto spec = parse_spec_json(tiny_spec_json(out), GlobalOptions{});
  REQUIRE(cmd_train(spec) == 0);
  const auto ckpt = out + "/checkpoint.json";
  CHECK(cmd_eval(spec, ckpt) == 0);
  CHECK(fs::exists(fs::path(out) / "report.csv"));
  CHECK(fs::exists(fs::path(out) / "confusion.svg"));
  const auto report_csv = slurp(fs::path(out) / "report.csv");
  // header + val row + one row per step
  CHECK(std::count(report_csv.begin(), report_csv.end(), '\n') == 4);

  CHECK(cmd_calibrate(spec, ckpt) == 0);
  const auto calib = slurp(fs::path(out) / "calibrate.csv");
  CHECK(calib.find("none,") != std::string::npos);
  CHECK(calib.find("ms_train,") != std::string::npos);
  CHECK(calib.find("ms_oracle,") != std::string::npos);
  CHECK(calib.find("cm_train,") != std::string::npos);
  CHECK(calib.find("cm_oracle,") != std::string::npos);

  CHECK_THROWS(cmd_eval(spec, out + "/missing.json"));
}

TEST_CASE("sweeps emit one row per value") {
  TempDir dir("pcb_cli_sweep");
  const auto out = (dir.path / "run").string();
  auto j = tiny_spec_json(out);
  j["train"]["epochs"] = 2;
  const auto spec = parse_spec_json(j, GlobalOptions{});
  CHECK(cmd_sweep(spec, "loss.alpha", {"0.0", "0.4"}, GlobalOptions{}) == 0);
  const auto csv = slurp(fs::path(out) / "sweep.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(csv.find("loss.alpha,0.0,") != std::string::npos);
  CHECK(csv.find("loss.alpha,0.4,") != std::string::npos);
}

TEST_CASE("report verb tabulates saved reports") {
  TempDir dir("pcb_cli_report");
  const auto out = (dir.path / "run").string();
  const auto spec = parse_spec_json(tiny_spec_json(out), GlobalOptions{});
  REQUIRE(cmd_train(spec) == 0);
  CHECK(cmd_report(out) == 0);
  CHECK(cmd_report(dir.path.string()) == 1);  // no reports here
}
