#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <string>

#include <sys/wait.h>

#include <json.hpp>

#include "test_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Runs the CLI inside `dir`; returns its exit status.
int run(const fs::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && '" SPECTRAL_CODEC_CLI "' " + args +
                          " > cli.log 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json read_json(const fs::path& p) { return json::parse(test_util::read_bytes(p)); }

void write_text(const fs::path& p, const std::string& text) { test_util::write_bytes(p, text); }

const char* kSmall = R"({"synth": {"count": 3, "height": 16, "width": 16},
  "fit": {"epochs": 10, "restarts": 1},
  "train": {"epochs": 2, "hidden": [16]}})";

}  // namespace

TEST_CASE("golden pipeline reproduces the recorded RMSE") {
  test_util::TempDir dir("cli_golden");
  REQUIRE(run(dir.path(), "synth --out corpus") == 0);
  REQUIRE(run(dir.path(), "design --in corpus --out design") == 0);
  REQUIRE(run(dir.path(), "encode --bank design/bank.hxp --in corpus --out codes") == 0);
  REQUIRE(run(dir.path(), "decode --bank design/bank.hxp --in codes --out recon") == 0);
  REQUIRE(run(dir.path(), "eval --pred recon --truth corpus --out ev") == 0);
  const json got = read_json(dir / "ev/eval.json");
  const json want = read_json(fs::path(GOLDEN_DIR) / "pipeline_baseline.json");
  const double tol = want["rel_tolerance"].get<double>();
  CHECK(got["mean"].get<double>() ==
        doctest::Approx(want["mean_rmse255"].get<double>()).epsilon(tol));
  REQUIRE(got["per_image"].size() == want["per_image"].size());
  for (std::size_t i = 0; i < got["per_image"].size(); ++i)
    CHECK(got["per_image"][i].get<double>() ==
          doctest::Approx(want["per_image"][i].get<double>()).epsilon(tol));

  const json side = read_json(dir / "recon/run.json");
  CHECK(side["command"] == "decode");
  CHECK(side["config"]["seed"] == 0);
  CHECK(side["config_hash"].get<std::string>().size() == 16);
  CHECK(side["outputs"].size() == 8);
}

TEST_CASE("rerun with the same seed gives byte-identical files") {
  test_util::TempDir dir("cli_rerun");
  for (const char* sub : {"a", "b"}) {
    const fs::path d = dir / sub;
    fs::create_directories(d);
    write_text(d / "cfg.json", kSmall);
    REQUIRE(run(d, "--config cfg.json --seed 7 synth --out corpus") == 0);
    REQUIRE(run(d, "--config cfg.json --seed 7 design --in corpus --out design") == 0);
    REQUIRE(run(d, "--config cfg.json --seed 7 fit --bank design/bank.hxp --out fitted") == 0);
    REQUIRE(run(d, "--config cfg.json --seed 7 encode --bank fitted/realized.hxp --in corpus --out codes") == 0);
    REQUIRE(run(d, "--config cfg.json --seed 7 train-decoder --bank fitted/realized.hxp --in corpus --out dec") == 0);
    REQUIRE(run(d, "--config cfg.json --seed 7 decode --bank fitted/realized.hxp --in codes "
                   "--decoder dec/decoder.mlp --out recon") == 0);
  }
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file() || e.path().filename() == "cli.log") continue;
    const fs::path rel = fs::relative(e.path(), dir / "a");
    INFO(rel.string());
    REQUIRE(fs::exists(dir / "b" / rel));
    CHECK(test_util::read_bytes(e.path()) == test_util::read_bytes(dir / "b" / rel));
    ++compared;
  }
  CHECK(compared > 20);

  // A different seed changes the corpus.
  write_text(dir / "cfg.json", kSmall);
  REQUIRE(run(dir.path(), "--config cfg.json --seed 8 synth --out other") == 0);
  CHECK(test_util::read_bytes(dir / "other/scene_000.hxc") !=
        test_util::read_bytes(dir / "a/corpus/scene_000.hxc"));
}

TEST_CASE("eval on identical inputs") {
  test_util::TempDir dir("cli_eval");
  write_text(dir / "cfg.json", kSmall);
  REQUIRE(run(dir.path(), "--config cfg.json synth --out corpus") == 0);
  // Cubes and masks share a directory; cubes take precedence, so split them.
  fs::create_directories(dir / "masks");
  for (const auto& e : fs::directory_iterator(dir / "corpus"))
    if (e.path().extension() == ".hxm") fs::copy_file(e.path(), dir / "masks" / e.path().filename());
  REQUIRE(run(dir.path(), "eval --pred corpus --truth corpus --out ev") == 0);
  CHECK(read_json(dir / "ev/eval.json")["mean"].get<double>() == 0.0);
  REQUIRE(run(dir.path(), "eval --pred masks --truth masks --out evm") == 0);
  CHECK(read_json(dir / "evm/eval.json")["miou"].get<double>() == 1.0);
}

TEST_CASE("classification and joint training run end to end") {
  test_util::TempDir dir("cli_cls");
  write_text(dir / "cfg.json", R"({"synth": {"count": 2, "height": 16, "width": 16},
    "fit": {"epochs": 5, "restarts": 1},
    "train": {"task": "classification", "epochs": 2, "hidden": [8], "joint": true}})");
  REQUIRE(run(dir.path(), "--config cfg.json synth --out corpus") == 0);
  REQUIRE(run(dir.path(), "--config cfg.json design --in corpus --out design") == 0);
  REQUIRE(run(dir.path(), "--config cfg.json fit --bank design/bank.hxp --out fitted") == 0);
  REQUIRE(run(dir.path(), "--config cfg.json train-decoder --bank fitted/realized.hxp --in corpus "
                          "--models fitted/models --out joint") == 0);
  CHECK(fs::exists(dir / "joint/realized.hxp"));
  REQUIRE(run(dir.path(), "--config cfg.json encode --bank joint/realized.hxp --in corpus --out codes") == 0);
  REQUIRE(run(dir.path(), "classify --decoder joint/decoder.mlp --in codes --out pred") == 0);
  CHECK(fs::exists(dir / "pred/scene_001.hxm"));
  // A classifier is not a reconstruction decoder.
  CHECK(run(dir.path(), "decode --bank joint/realized.hxp --in codes --decoder joint/decoder.mlp "
                        "--out bad") == 3);
  // Joint training needs the models.
  CHECK(run(dir.path(), "--config cfg.json train-decoder --bank fitted/realized.hxp --in corpus "
                        "--out nomodels") == 2);
}

TEST_CASE("exit codes") {
  test_util::TempDir dir("cli_exit");
  CHECK(run(dir.path(), "--help") == 0);
  CHECK(test_util::read_bytes(dir / "cli.log").find("Exit codes") != std::string::npos);
  CHECK(run(dir.path(), "") == 2);
  CHECK(run(dir.path(), "design --in nowhere") == 2);
  CHECK(run(dir.path(), "eval --pred nowhere --truth nowhere") == 7);
  write_text(dir / "bad.json", R"({"fit": {"epochz": 3}})");
  CHECK(run(dir.path(), "--config bad.json bench") == 2);
  write_text(dir / "typed.json", R"({"seed": "zero"})");
  CHECK(run(dir.path(), "--config typed.json bench") == 2);
  write_text(dir / "broken.json", "{");
  CHECK(run(dir.path(), "--config broken.json bench") == 2);
  write_text(dir / "notabank.hxp", "HXP0 garbage");
  fs::create_directories(dir / "codes");
  CHECK(run(dir.path(), "decode --bank notabank.hxp --in codes --out x") == 4);
  write_text(dir / "grid.json", R"({"grid": {"start_nm": 700.0, "stop_nm": 400.0, "step_nm": 10.0}})");
  CHECK(run(dir.path(), "--config grid.json synth --out s") == 6);
}

TEST_CASE("bench") {
  test_util::TempDir dir("cli_bench");
  write_text(dir / "one.json", R"({"bench": {"height": 1, "width": 1, "repetitions": 3}})");
  REQUIRE(run(dir.path(), "--config one.json bench --out b1") == 0);
  const json b1 = read_json(dir / "b1/bench.json");
  CHECK(std::isfinite(b1["encode_fps"].get<double>()));
  CHECK(b1["encode_fps"].get<double>() > 0.0);

  // Twice the pixels, roughly half the frame rate (within a factor 2).
  write_text(dir / "s.json", R"({"bench": {"height": 256, "width": 256, "repetitions": 7}})");
  write_text(dir / "d.json", R"({"bench": {"height": 512, "width": 256, "repetitions": 7}})");
  REQUIRE(run(dir.path(), "--config s.json bench --out bs") == 0);
  REQUIRE(run(dir.path(), "--config d.json bench --out bd") == 0);
  const double ratio = read_json(dir / "bs/bench.json")["encode_fps"].get<double>() /
                       read_json(dir / "bd/bench.json")["encode_fps"].get<double>();
  CHECK(ratio > 1.0);
  CHECK(ratio < 4.0);
}
