#include <doctest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "g2l/app.hpp"
#include "g2l/errors.hpp"
#include "test_util.hpp"

using namespace g2l;
namespace fs = std::filesystem;

namespace {

json tiny_model() {
  G2LConfig c;
  c.net.n_seg_points = 96;
  c.net.n_canonical_points = 64;
  c.net.seg_point_widths = {16, 24};
  c.net.seg_head_widths = {16};
  c.net.trans_point_widths = {16, 24};
  c.net.trans_head_widths = {16};
  c.net.evf_point_widths = {16, 24};
  c.net.embedding_width = 24;
  c.net.rot_point_widths = {24};
  c.net.rot_head_widths = {24};
  c.net.rre_widths = {24};
  c.train.epochs = 2;
  c.train.batch_size = 4;
  return to_json(c);
}

void write_json(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

struct CliResult {
  int code;
  std::string err;
};

CliResult cli(const std::string& args, const fs::path& scratch) {
  const fs::path err = scratch / "stderr.txt";
  const std::string cmd =
      std::string(G2L_CLI_PATH) + " " + args + " > /dev/null 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, test_util::read_text(err)};
}

// Small dataset shared by the tests in this file.
const fs::path& smoke_dataset() {
  static test_util::TempDir dir("app_data");
  static bool made = false;
  if (!made) {
    RunConfig cfg;
    cfg.data.n_train = 10;
    cfg.data.n_test = 6;
    cmd_gen_data(cfg, dir.path);
    made = true;
  }
  return dir.path;
}

RunConfig smoke_config() {
  RunConfig cfg = run_config_from_json(json{{"model", tiny_model()}});
  cfg.dataset = smoke_dataset().string();
  return cfg;
}

void collect_keys(const json& j, const std::string& prefix, std::vector<std::string>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    out.push_back(it.key());
    if (it.value().is_object()) collect_keys(it.value(), prefix + it.key() + ".", out);
  }
}

}  // namespace

TEST_CASE("gen-data writes the requested records and is repeatable") {
  test_util::TempDir dir("cli_gen");
  write_json(dir.path / "cfg.json", {{"data", {{"n_train", 8}, {"n_test", 2}}}});
  for (const char* sub : {"a", "b"}) {
    const auto r = cli("gen-data --config " + (dir.path / "cfg.json").string() + " --out " +
                           (dir.path / sub).string(),
                       dir.path);
    CHECK(r.code == 0);
  }
  int records = 0;
  for (const auto& e : fs::directory_iterator(dir.path / "a")) records += e.path().extension() == ".bin";
  CHECK(records == 10);
  CHECK(test_util::read_bytes(dir.path / "a" / "manifest.json") ==
        test_util::read_bytes(dir.path / "b" / "manifest.json"));
}

TEST_CASE("CLI error exits name the problem") {
  test_util::TempDir dir("cli_err");
  auto r = cli("gen-data --out /proc/no_such_dir/x", dir.path);
  CHECK(r.code == 3);
  CHECK(r.err.find("--out") != std::string::npos);

  write_json(dir.path / "bad.json", {{"data", {{"n_trian", 8}}}});
  r = cli("gen-data --config " + (dir.path / "bad.json").string() + " --out " +
              (dir.path / "o").string(),
          dir.path);
  CHECK(r.code == 2);
  CHECK(r.err.find("data.n_trian") != std::string::npos);

  write_json(dir.path / "bad2.json", {{"model", {{"train", {{"epochs", "many"}}}}}});
  r = cli("train --config " + (dir.path / "bad2.json").string(), dir.path);
  CHECK(r.code == 2);
  CHECK(r.err.find("train.epochs") != std::string::npos);

  r = cli("train --config " + (dir.path / "missing.json").string(), dir.path);
  CHECK(r.code == 3);
  r = cli("frobnicate", dir.path);
  CHECK(r.code == 2);
}

TEST_CASE("help documents every configuration key") {
  const std::string help = config_help();
  std::vector<std::string> keys;
  collect_keys(run_config_to_json(RunConfig{}), "", keys);
  for (const auto& k : {"kind", "size", "n_points", "class_id", "name", "center", "radius",
                        "normal", "offset"})
    keys.push_back(k);
  for (const auto& k : keys) {
    INFO(k);
    CHECK(help.find(k) != std::string::npos);
  }
}

TEST_CASE("train smoke run, loss CSV and resume") {
  test_util::TempDir out("train");
  RunConfig cfg = smoke_config();
  const auto t0 = std::chrono::steady_clock::now();
  const G2LCheckpoint ck = cmd_train(cfg, out.path / "a");
  CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::seconds(60));
  CHECK(ck.epoch == 2);
  const G2LCheckpoint loaded = load_g2l_checkpoint(out.path / "a" / "checkpoint.g2l");
  CHECK(loaded.epoch == 2);
  CHECK(model_from_checkpoint(loaded).params().size() > 0);

  std::istringstream csv(test_util::read_text(out.path / "a" / "loss.csv"));
  std::string header, line;
  std::getline(csv, header);
  for (const char* col : {"seg", "trans", "vec", "rot", "rre"}) {
    CHECK(header.find(std::string(",") + col + ",") != std::string::npos);
  }
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 2);

  cmd_train(cfg, out.path / "b");
  CHECK(test_util::read_bytes(out.path / "a" / "checkpoint.g2l") ==
        test_util::read_bytes(out.path / "b" / "checkpoint.g2l"));

  RunConfig more = cfg;
  more.model.train.epochs = 3;
  more.fit.resume = (out.path / "a" / "checkpoint.g2l").string();
  const G2LCheckpoint resumed = cmd_train(more, out.path / "c");
  CHECK(resumed.epoch == 3);
  REQUIRE(resumed.history.size() == 3);
  CHECK(resumed.history[2].epoch == 2);
  RunConfig straight = more;
  straight.fit.resume.clear();
  CHECK(encode_g2l_checkpoint(cmd_train(straight, out.path / "d")) ==
        encode_g2l_checkpoint(resumed));
}

TEST_CASE("eval with oracle stages is perfect and CSVs are reproducible") {
  test_util::TempDir out("eval");
  RunConfig cfg = smoke_config();
  cfg.eval.oracle = true;
  const EvalReport r = cmd_eval(cfg, out.path / "a");
  REQUIRE(r.classes.size() == 1);
  CHECK(r.classes[0].accuracy == 1.0);
  CHECK(r.classes[0].add_accuracy == 1.0);
  cmd_eval(cfg, out.path / "b");
  for (const char* f : {"results.csv", "summary.csv", "accuracy_curve.csv"}) {
    CHECK(test_util::read_bytes(out.path / "a" / f) == test_util::read_bytes(out.path / "b" / f));
  }

  cmd_train(cfg, out.path / "m");
  RunConfig trained = cfg;
  trained.eval.oracle = false;
  trained.eval.checkpoint = (out.path / "m" / "checkpoint.g2l").string();
  cmd_eval(trained, out.path / "c");
  cmd_eval(trained, out.path / "d");
  CHECK(test_util::read_bytes(out.path / "c" / "results.csv") ==
        test_util::read_bytes(out.path / "d" / "results.csv"));
  CHECK(test_util::read_bytes(out.path / "c" / "summary.csv") ==
        test_util::read_bytes(out.path / "d" / "summary.csv"));
}

TEST_CASE("eval of an empty split fails") {
  test_util::TempDir data("empty_split");
  RunConfig gen;
  gen.data.n_train = 3;
  gen.data.n_test = 0;
  cmd_gen_data(gen, data.path);
  write_json(data.path / "cfg.json",
             {{"dataset", data.path.string()}, {"eval", {{"oracle", true}}}});
  const auto r = cli("eval --config " + (data.path / "cfg.json").string() + " --out " +
                         (data.path / "o").string(),
                     data.path);
  CHECK(r.code == 2);
  CHECK(r.err.find("split") != std::string::npos);
}

TEST_CASE("ablation grids have the expected rows and gate flags exactly") {
  test_util::TempDir out("ablate");
  RunConfig cfg = smoke_config();
  cfg.model.train.epochs = 1;
  cfg.ablate.seeds = {4};
  const AblationResult novelty = cmd_ablate(cfg, out.path / "n");
  REQUIRE(novelty.cells.size() == 4);
  CHECK(novelty.cells[0].name == "EXP1");
  CHECK(novelty.cells[3].name == "EXP4");
  CHECK(novelty.containment_violations.empty());
  CHECK(novelty.containment_checked == 6);

  RunConfig plain = cfg;
  plain.model.net.use_sphere = false;
  plain.model.net.use_evf = false;
  plain.model.net.use_rre = false;
  plain.model.train.seed = 4;
  cmd_train(plain, out.path / "plain");
  CHECK(test_util::read_bytes(out.path / "plain" / "checkpoint.g2l") ==
        test_util::read_bytes(out.path / "n" / "EXP1_seed4" / "checkpoint.g2l"));

  cfg.ablate.grid = "keypoints";
  const AblationResult kp = cmd_ablate(cfg, out.path / "k");
  std::vector<std::string> names;
  for (const auto& c : kp.cells) names.push_back(c.name);
  CHECK(names == std::vector<std::string>{"BBX-8", "FPS-4", "FPS-8", "FPS-12"});

  cfg.ablate.grid = "train_size";
  const AblationResult ts = cmd_ablate(cfg, out.path / "t");
  CHECK(ts.cells.size() == 4);
  CHECK(fs::exists(out.path / "t" / "ablation_train_size.csv"));
}

TEST_CASE("plot curves") {
  test_util::TempDir out("plot");
  RunConfig cfg = smoke_config();
  cfg.eval.oracle = true;
  cmd_eval(cfg, out.path / "e");
  cmd_train(cfg, out.path / "m");

  RunConfig p = cfg;
  p.plot.input = (out.path / "e" / "results.csv").string();
  const PlotSeries curve = cmd_plot(p, out.path / "p1");
  REQUIRE(curve.columns.size() == 2);
  for (std::size_t i = 1; i < curve.columns[1].size(); ++i) {
    CHECK(curve.columns[1][i] >= curve.columns[1][i - 1]);
  }
  CHECK(fs::exists(out.path / "p1" / "plot.svg"));

  p.plot.kind = "rre_impact";
  p.plot.input = (out.path / "m" / "loss.csv").string();
  const PlotSeries rre = cmd_plot(p, out.path / "p2");
  const G2LCheckpoint ck = load_g2l_checkpoint(out.path / "m" / "checkpoint.g2l");
  REQUIRE(rre.columns[3].size() == ck.history.size());
  for (std::size_t i = 0; i < ck.history.size(); ++i) {
    CHECK(rre.columns[3][i] ==
          doctest::Approx(ck.history[i].kp_err_refined / ck.history[i].kp_err_base).epsilon(1e-6));
  }

  write_json(out.path / "cfg.json",
             {{"plot", {{"input", (out.path / "nope.csv").string()}}}});
  const auto r = cli("plot --config " + (out.path / "cfg.json").string() + " --out " +
                         (out.path / "p3").string(),
                     out.path);
  CHECK(r.code == 3);
}
