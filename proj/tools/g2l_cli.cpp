#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "g2l/app.hpp"
#include "g2l/errors.hpp"

namespace {

int exit_code(g2l::ErrorCode code) {
  switch (code) {
    case g2l::ErrorCode::kConfigError:
      return 2;
    case g2l::ErrorCode::kIoError:
      return 3;
    default:
      return 4;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depth-image 6D pose estimation: data generation, training and evaluation"};
  app.footer("\n" + g2l::config_help());
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration");
    sub->add_option("--seed", seed, "overrides data.seed (gen-data), model.train.seed (train), "
                                    "ablate.seeds (ablate: N, N+1, N+2)");
    sub->add_option("--out", out_dir, "output directory")->capture_default_str();
  };
  auto* gen = app.add_subcommand("gen-data", "render a synthetic scene dataset");
  auto* train = app.add_subcommand("train", "train the pose networks");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or the oracle stages");
  auto* ablate = app.add_subcommand("ablate", "run an ablation grid");
  auto* plot = app.add_subcommand("plot", "turn result or loss CSVs into curves");
  for (auto* s : {gen, train, eval, ablate, plot}) {
    add_common(s);
    s->footer("\n" + g2l::config_help());
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    g2l::RunConfig cfg;
    if (!config_path.empty()) cfg = g2l::load_run_config(config_path);
    if (seed) {
      cfg.data.seed = *seed;
      cfg.model.train.seed = *seed;
      cfg.ablate.seeds = {*seed, *seed + 1, *seed + 2};
    }
    if (gen->parsed()) {
      const auto m = g2l::cmd_gen_data(cfg, out_dir);
      std::cout << "wrote " << m.train.size() << " train and " << m.test.size()
                << " test scenes to " << out_dir << '\n';
    } else if (train->parsed()) {
      const auto ckpt = g2l::cmd_train(cfg, out_dir, &std::cout);
      std::cout << "checkpoint at epoch " << ckpt.epoch << " written to " << out_dir << '\n';
    } else if (eval->parsed()) {
      const auto report = g2l::cmd_eval(cfg, out_dir);
      for (const auto& c : report.classes) {
        std::cout << c.name << ": accuracy " << c.accuracy << ", ADD-S AUC " << c.adds_auc
                  << ", median translation error " << c.median_translation_mm << " mm ("
                  << c.found << "/" << c.scenes << " found)\n";
      }
    } else if (ablate->parsed()) {
      const auto r = g2l::cmd_ablate(cfg, out_dir, &std::cout);
      for (const auto& c : r.cells) std::cout << c.name << " mean accuracy " << c.mean << '\n';
      if (r.grid == "novelty") {
        std::cout << "sphere crop outside frustum crop: " << r.containment_violations.size()
                  << " of " << r.containment_checked << " scenes\n";
      }
    } else if (plot->parsed()) {
      const auto s = g2l::cmd_plot(cfg, out_dir);
      std::cout << "wrote " << (s.columns.empty() ? 0 : s.columns[0].size()) << " points to "
                << out_dir << '\n';
    }
  } catch (const g2l::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
