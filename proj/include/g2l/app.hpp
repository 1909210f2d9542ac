#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "g2l/g2l_nets.hpp"
#include "g2l/json_util.hpp"
#include "g2l/metrics.hpp"
#include "g2l/synth.hpp"

namespace g2l {

struct FitOptions {
  double fraction = 1.0;   // leading share of the shuffled train split
  bool equal_steps = false;  // cycle a subset up to the full split length
  std::string resume;      // checkpoint to continue from
};

struct EvalOptions {
  std::string checkpoint;
  std::string split = "test";
  bool oracle = false;  // ground-truth stages instead of the networks
  double accuracy_fraction = 0.1;
  double curve_max_mm = 100.0;
  int curve_samples = 101;
};

struct AblateOptions {
  std::string grid = "novelty";  // novelty | keypoints | train_size
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<double> fractions{0.05, 0.15, 0.5, 1.0};
  std::vector<int> fps_counts{4, 8, 12};
};

struct PlotOptions {
  std::string input;
  std::string kind = "accuracy_curve";  // accuracy_curve | rre_impact | loss
  bool svg = true;
};

struct RunConfig {
  GenConfig data;
  std::string dataset;  // directory holding manifest.json
  G2LConfig model;
  FitOptions fit;
  EvalOptions eval;
  AblateOptions ablate;
  PlotOptions plot;
};

json run_config_to_json(const RunConfig& c);
RunConfig run_config_from_json(const json& j);
// kIoError if the file cannot be read, kConfigError if it is not valid.
RunConfig load_run_config(const std::filesystem::path& p);
std::string config_help();

struct Dataset {
  std::filesystem::path dir;
  DatasetManifest manifest;
  std::map<int, ObjectModel> models;  // by class id
};

Dataset open_dataset(const std::filesystem::path& dir);
std::vector<std::string> split_names(const Dataset& ds, const std::string& split,
                                     double fraction = 1.0);

std::vector<ClassInfo> class_infos(const Dataset& ds, const NetConfig& net);

std::vector<TrainSample> load_train_samples(const Dataset& ds, const std::vector<ClassInfo>& classes,
                                            const FitOptions& fit, bool use_sphere);

struct SceneEval {
  std::string scene_id;
  int class_id = 0;
  bool found = false;
  double add_mm = 0.0;
  double adds_mm = 0.0;
  double error_mm = 0.0;  // ADD-S for symmetric classes, else ADD; inf when not found
  double diameter = 0.0;
  double translation_error_mm = 0.0;
  double rotation_error_deg = 0.0;
  std::size_t frustum_points = 0;
  std::size_t sphere_points = 0;
  StageTimings timings;
};

struct ClassSummary {
  int class_id = 0;
  std::string name;
  int scenes = 0;
  int found = 0;
  double diameter = 0.0;
  double accuracy = 0.0;  // ADD-S for symmetric classes, else ADD
  double add_accuracy = 0.0;
  double adds_accuracy = 0.0;
  double adds_auc = 0.0;
  double mean_translation_mm = 0.0;
  double median_translation_mm = 0.0;
  double mean_rotation_deg = 0.0;
  AccuracyCurve curve;
};

struct EvalReport {
  std::vector<SceneEval> scenes;
  std::vector<ClassSummary> classes;
  double mean_accuracy() const;
  // Mean of the per-class rows.
  ClassSummary aggregate() const;
};

EvalReport evaluate(const Dataset& ds, const std::vector<std::string>& names,
                    const G2LCheckpoint* ckpt, const EvalOptions& opts,
                    const NetConfig& net_for_oracle);

// Subcommands. Each writes its artefacts into out and returns a summary.
DatasetManifest cmd_gen_data(const RunConfig& cfg, const std::filesystem::path& out);
G2LCheckpoint cmd_train(const RunConfig& cfg, const std::filesystem::path& out,
                        std::ostream* log = nullptr);
EvalReport cmd_eval(const RunConfig& cfg, const std::filesystem::path& out);

struct AblationCell {
  std::string name;
  std::map<std::uint64_t, double> accuracy;  // by seed
  double mean = 0.0;
};

struct AblationResult {
  std::string grid;
  std::vector<AblationCell> cells;
  // Novelty grid only: scenes whose sphere crop is not a subset of the
  // frustum crop (expected empty).
  std::vector<std::string> containment_violations;
  int containment_checked = 0;
};

// One seeded train + test-split evaluation; artefacts go to run_dir. Returns
// the mean per-class accuracy.
double train_and_evaluate(const Dataset& ds, const G2LConfig& model, const FitOptions& fit,
                          const EvalOptions& eval, const std::filesystem::path& run_dir);

AblationResult cmd_ablate(const RunConfig& cfg, const std::filesystem::path& out,
                          std::ostream* log = nullptr);

struct PlotSeries {
  std::vector<std::string> labels;  // x label, y labels
  std::vector<std::vector<double>> columns;
};

PlotSeries cmd_plot(const RunConfig& cfg, const std::filesystem::path& out);

std::string scene_results_csv(const EvalReport& r);
std::string class_summary_csv(const EvalReport& r);
std::string loss_csv(const std::vector<EpochLog>& history);

}  // namespace g2l
