#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "hcp/cli.hpp"
#include "hcp/error.hpp"
#include "hcp/io_formats.hpp"
#include "hcp/run_config.hpp"

using namespace hcp;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("hcp_test_cli_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int hcp_run(std::vector<std::string> args) {
  args.insert(args.begin(), "hcp");
  return cli::run(args);
}

}  // namespace

TEST_CASE("defaults echo the headline hyperparameters") {
  const json j = run::to_json(run::RunConfig{});
  CHECK(j["hhoi"]["tau"] == 0.8);
  CHECK(j["hhoi"]["tokens"] == 256);
  CHECK(j["action"]["neighbors"] == 3);
  CHECK(j["action"]["grow_length"] == 0.2);
  CHECK(j["action"]["grow_width"] == 0.2);
  CHECK(j["eval"]["interpolation"] == "101");
}

TEST_CASE("config round-trips through json") {
  run::RunConfig cfg;
  cfg.seed = 9;
  cfg.hhoi.tau = 0.7;
  cfg.action.neighbors = 2;
  cfg.eval.interpolation = metrics::Interpolation::k41;
  const json j = run::to_json(cfg);
  CHECK(run::to_json(run::parse_config(j)) == j);
}

TEST_CASE("unknown keys and wrong types are rejected") {
  CHECK_THROWS_AS(run::parse_config(json::parse(R"({"hhoi": {"taux": 0.5}})")), ConfigError);
  CHECK_THROWS_AS(run::parse_config(json::parse(R"({"bogus": 1})")), ConfigError);
  CHECK_THROWS_AS(run::parse_config(json::parse(R"({"hhoi": {"tau": "high"}})")), ConfigError);
  CHECK_THROWS_AS(run::parse_config(json::parse(R"({"action": {"neighbors": -1}})")), ConfigError);
  CHECK_THROWS_AS(run::parse_config(json::parse(R"({"eval": {"interpolation": "11"}})")), ConfigError);
  try {
    run::parse_config(json::parse(R"({"hhoi": {"taux": 0.5}})"));
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("hhoi.taux") != std::string::npos);
  }
}

TEST_CASE("overrides apply dotted paths") {
  json doc = json::object();
  run::apply_override(doc, "hhoi.tau=0.6");
  run::apply_override(doc, "synth.preset=context-actions");
  run::apply_override(doc, "action.neighbors=0");
  const run::RunConfig cfg = run::parse_config(doc);
  CHECK(cfg.hhoi.tau == 0.6);
  CHECK(cfg.action.neighbors == 0);
  CHECK(cfg.synth == *synth::preset("context-actions"));
  CHECK_THROWS_AS(run::apply_override(doc, "novalue"), ConfigError);
}

TEST_CASE("load_config reports missing files and bad json") {
  TempDir tmp("load");
  CHECK_THROWS_AS(run::load_config((tmp.path / "absent.json").string(), {}), IoError);
  io::write_text(tmp.path / "bad.json", "{ not json");
  CHECK_THROWS_AS(run::load_config((tmp.path / "bad.json").string(), {}), ConfigError);
  io::write_text(tmp.path / "ok.json", R"({"seed": 3, "hhoi": {"tau": 0.9}})");
  const auto cfg = run::load_config((tmp.path / "ok.json").string(), {"hhoi.tau=0.85"});
  CHECK(cfg.seed == 3);
  CHECK(cfg.hhoi.tau == 0.85);
}

TEST_CASE("exit codes") {
  TempDir tmp("exit");
  const std::string out = (tmp.path / "o").string();
  CHECK(hcp_run({"--help"}) == cli::kOk);
  CHECK(hcp_run({"no-such-command"}) == cli::kConfigError);
  CHECK(hcp_run({"synth", "--set", "hhoi.taux=1", "--out", out}) == cli::kConfigError);
  CHECK(hcp_run({"synth", "--config", (tmp.path / "missing.json").string(), "--out", out}) == cli::kIoError);
  CHECK(hcp_run({"eval-seg", "--data", (tmp.path / "nothing").string(), "--pred", (tmp.path / "nothing").string(),
                 "--out", out}) == cli::kIoError);
}

TEST_CASE("synth is byte-identical across runs and evaluation of ground truth is perfect") {
  TempDir tmp("synth");
  const fs::path a = tmp.path / "a", b = tmp.path / "b";
  REQUIRE(hcp_run({"synth", "--seed", "7", "--frames", "10", "--out", a.string()}) == cli::kOk);
  REQUIRE(hcp_run({"synth", "--seed", "7", "--frames", "10", "--out", b.string()}) == cli::kOk);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    CHECK(slurp(e.path()) == slurp(b / fs::relative(e.path(), a)));
  }
  CHECK(files > 20);
  CHECK(io::list_frames(a / "train").size() + io::list_frames(a / "test").size() == 10);
  const json echoed = json::parse(slurp(a / "config.json"));
  CHECK(echoed["seed"] == 7);
  CHECK(echoed["frames"] == 10);

  // Ground truth written as predictions.
  const fs::path pred = tmp.path / "pred";
  fs::create_directories(pred);
  const auto frames = cli::load_frames(a / "test", run::RunConfig{}.taxonomy());
  for (const SceneFrame& f : frames) {
    FramePrediction p;
    p.frame_id = f.frame_id;
    p.labels = f.labels;
    for (const auto& g : f.instances) {
      PredictedInstance pi;
      pi.semantic_class = g.semantic_class;
      pi.indices = g.indices;
      pi.box = g.box;
      pi.action = g.action;
      pi.confidence = 1.0;
      p.instances.push_back(pi);
    }
    io::write_predictions(io::prediction_path(pred, f.frame_id), p, f.cloud.size());
  }
  const fs::path eval = tmp.path / "eval";
  REQUIRE(hcp_run({"eval-seg", "--data", (a / "test").string(), "--pred", pred.string(), "--out", eval.string()}) ==
          cli::kOk);
  const auto reports = io::decode_reports(slurp(eval / "report.json"));
  REQUIRE(!reports.empty());
  for (const auto& r : reports) CHECK(r.mean == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(fs::exists(eval / "report.txt"));
}

TEST_CASE("pair_actions picks the nearest predicted box within the radius") {
  SceneFrame f;
  f.cloud = PointCloud({{0, 0, 0, 0}});
  f.labels = {0};
  InstanceAnnotation g;
  g.semantic_class = 1;
  g.action = 2;
  g.box.x = 1.0;
  f.instances.push_back(g);
  g.action = 4;
  g.box.x = 5.0;
  f.instances.push_back(g);
  FramePrediction p;
  PredictedInstance near, far;
  near.action = 2;
  near.box.x = 1.1;
  far.action = 3;
  far.box.x = 1.2;
  p.instances = {far, near};
  const std::vector<SceneFrame> frames{f};
  const std::vector<FramePrediction> preds{p};
  const auto pairs = cli::pair_actions(frames, preds, 0.25);
  CHECK(pairs.truth == std::vector<int>{2, 4});
  CHECK(pairs.predicted == std::vector<int>{2, -1});
}
