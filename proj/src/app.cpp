#include "g2l/app.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>

#include "g2l/config_io.hpp"
#include "g2l/errors.hpp"

namespace g2l {

namespace fs = std::filesystem;

// --- run configuration ---------------------------------------------------------

json run_config_to_json(const RunConfig& c) {
  return {
      {"data", gen_config_to_json(c.data)},
      {"dataset", c.dataset},
      {"model", to_json(c.model)},
      {"fit",
       {{"fraction", c.fit.fraction}, {"equal_steps", c.fit.equal_steps}, {"resume", c.fit.resume}}},
      {"eval",
       {{"checkpoint", c.eval.checkpoint},
        {"split", c.eval.split},
        {"oracle", c.eval.oracle},
        {"accuracy_fraction", c.eval.accuracy_fraction},
        {"curve_max_mm", c.eval.curve_max_mm},
        {"curve_samples", c.eval.curve_samples}}},
      {"ablate",
       {{"grid", c.ablate.grid},
        {"seeds", c.ablate.seeds},
        {"fractions", c.ablate.fractions},
        {"fps_counts", c.ablate.fps_counts}}},
      {"plot", {{"input", c.plot.input}, {"kind", c.plot.kind}, {"svg", c.plot.svg}}},
  };
}

RunConfig run_config_from_json(const json& j) {
  require_known_keys(j, {"data", "dataset", "model", "fit", "eval", "ablate", "plot"}, "config");
  RunConfig c;
  if (j.contains("data")) c.data = gen_config_from_json(j.at("data"));
  read_opt(j, "dataset", c.dataset, "config");
  if (j.contains("model")) c.model = g2l_config_from_json(j.at("model"));
  if (j.contains("fit")) {
    const auto& f = j.at("fit");
    require_known_keys(f, {"fraction", "equal_steps", "resume"}, "fit");
    read_opt(f, "fraction", c.fit.fraction, "fit");
    read_opt(f, "equal_steps", c.fit.equal_steps, "fit");
    read_opt(f, "resume", c.fit.resume, "fit");
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    require_known_keys(e, {"checkpoint", "split", "oracle", "accuracy_fraction", "curve_max_mm",
                           "curve_samples"},
                       "eval");
    read_opt(e, "checkpoint", c.eval.checkpoint, "eval");
    read_opt(e, "split", c.eval.split, "eval");
    read_opt(e, "oracle", c.eval.oracle, "eval");
    read_opt(e, "accuracy_fraction", c.eval.accuracy_fraction, "eval");
    read_opt(e, "curve_max_mm", c.eval.curve_max_mm, "eval");
    read_opt(e, "curve_samples", c.eval.curve_samples, "eval");
  }
  if (j.contains("ablate")) {
    const auto& a = j.at("ablate");
    require_known_keys(a, {"grid", "seeds", "fractions", "fps_counts"}, "ablate");
    read_opt(a, "grid", c.ablate.grid, "ablate");
    read_opt(a, "seeds", c.ablate.seeds, "ablate");
    read_opt(a, "fractions", c.ablate.fractions, "ablate");
    read_opt(a, "fps_counts", c.ablate.fps_counts, "ablate");
  }
  if (j.contains("plot")) {
    const auto& p = j.at("plot");
    require_known_keys(p, {"input", "kind", "svg"}, "plot");
    read_opt(p, "input", c.plot.input, "plot");
    read_opt(p, "kind", c.plot.kind, "plot");
    read_opt(p, "svg", c.plot.svg, "plot");
  }

  auto fail = [](const std::string& m) { throw Error(ErrorCode::kConfigError, m); };
  if (!(c.fit.fraction > 0.0 && c.fit.fraction <= 1.0)) fail("'fit.fraction' must be in (0, 1]");
  if (c.eval.split != "train" && c.eval.split != "test") fail("'eval.split' must be train or test");
  if (!(c.eval.accuracy_fraction > 0.0)) fail("'eval.accuracy_fraction' must be positive");
  if (!(c.eval.curve_max_mm > 0.0)) fail("'eval.curve_max_mm' must be positive");
  if (c.eval.curve_samples < 2) fail("'eval.curve_samples' must be >= 2");
  if (c.ablate.grid != "novelty" && c.ablate.grid != "keypoints" && c.ablate.grid != "train_size") {
    fail("'ablate.grid' must be novelty, keypoints or train_size");
  }
  if (c.ablate.seeds.empty()) fail("'ablate.seeds' must be non-empty");
  for (double f : c.ablate.fractions) {
    if (!(f > 0.0 && f <= 1.0)) fail("'ablate.fractions' entries must be in (0, 1]");
  }
  for (int k : c.ablate.fps_counts) {
    if (k < 3) fail("'ablate.fps_counts' entries must be >= 3");
  }
  if (c.plot.kind != "accuracy_curve" && c.plot.kind != "rre_impact" && c.plot.kind != "loss") {
    fail("'plot.kind' must be accuracy_curve, rre_impact or loss");
  }
  c.model.validate();
  return c;
}

RunConfig load_run_config(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read config " + p.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfigError, "config is not valid JSON: " + std::string(e.what()));
  }
  return run_config_from_json(j);
}

std::string config_help() {
  return R"(Configuration file (JSON). Every key is optional; unknown keys are errors.

  data                     scene generator settings (gen-data)
    objects[]              list of objects, each with:
      kind                 cube | l_prism | blob            (l_prism)
      size                 longest nominal extent, mm       (120)
      n_points             model surface samples, >= 100    (2048)
      seed                 shape seed (blob)                (0)
      class_id             class index                      (0)
      name                 label used in file names         (kind)
    n_train, n_test        scenes per object                (500, 100)
    seed                   generator seed                   (1)
    poses.mode             view_cone | uniform              (view_cone)
    poses.min_elevation_deg, poses.max_elevation_deg        (20, 90)
    poses.max_inplane_deg  roll about the optical axis      (30)
    poses.translation_min, poses.translation_max  [x,y,z] mm
                                             ([-60,-40,550], [60,40,700])
    render.noise_sigma     depth noise, mm                  (2)
    render.epsilon         labelling distance, mm           (8)
    render.bbox_margin_px  box padding                      (3)
    render.num_classes     one-hot length                   (1)
    render.render_spacing  splat sample spacing, mm         (1)
    render.clutter.background_plane                         (true)
    render.clutter.max_spheres                              (3)
    render.clutter.sphere_radius_min, sphere_radius_max     (15, 40)
    render.clutter.min_visibility  visible share required   (0.3)
    render.clutter.object_gap      clutter clearance, mm    (16)
    render.clutter.spheres[]  fixed {center:[x,y,z], radius}
    render.clutter.planes[]   fixed {normal:[x,y,z], offset}
    intrinsics.fx, fy, cx, cy, width, height  (140, 140, 80, 60, 160, 120)

  dataset                  directory with manifest.json (train, eval, ablate)

  model.net
    num_classes                                             (1)
    keypoint_scheme        bbx8 | fps                       (bbx8)
    num_keypoints          8 for bbx8                       (8)
    n_seg_points           points fed to segmentation       (384)
    n_canonical_points     points fed to rotation nets      (256)
    coord_scale            input normalisation, mm          (100)
    seg_point_widths, seg_head_widths                       ([64,128], [128,64])
    trans_point_widths, trans_head_widths                   ([64,128], [64])
    evf_point_widths, embedding_width                       ([64,128], 128)
    rot_point_widths, rot_head_widths                       ([128], [128])
    rre_widths                                              ([128])
    one_hot_points, one_hot_global  class one-hot inputs    (true, true)
    use_sphere             sphere crop before segmentation  (true)
    use_evf                vector-field supervision         (true)
    use_rre                rotation residual head           (true)
  model.train
    epochs                                                  (60)
    batch_size                                              (8)
    learning_rate                                           (0.001)
    halve_every_epochs     step decay period                (50)
    max_epochs             hard cap                         (200)
    lambda_seg, lambda_t, lambda_v, lambda_r, lambda_rre    (1 each)
    translation_jitter_mm  centre noise for rotation input  (5)
    seed                   initialisation and shuffling     (7)

  fit.fraction             share of the train split used    (1)
  fit.equal_steps          cycle the subset to full length  (false)
  fit.resume               checkpoint to continue from      ("")

  eval.checkpoint          trained model                    ("")
  eval.split               train | test                     (test)
  eval.oracle              ground-truth stages, no model    (false)
  eval.accuracy_fraction   threshold as share of diameter   (0.1)
  eval.curve_max_mm, eval.curve_samples                     (100, 101)

  ablate.grid              novelty | keypoints | train_size (novelty)
  ablate.seeds             training seeds                   ([1,2,3])
  ablate.fractions         train_size grid                  ([0.05,0.15,0.5,1])
  ablate.fps_counts        keypoints grid, FPS sizes        ([4,8,12])

  plot.input               results.csv or loss.csv          ("")
  plot.kind                accuracy_curve | rre_impact | loss (accuracy_curve)
  plot.svg                 also write plot.svg              (true)
)";
}

// --- dataset access ------------------------------------------------------------

Dataset open_dataset(const fs::path& dir) {
  if (dir.empty()) throw Error(ErrorCode::kConfigError, "'dataset' is not set");
  Dataset ds;
  ds.dir = dir;
  try {
    ds.manifest = read_manifest(dir / "manifest.json");
  } catch (const Error& e) {
    throw Error(e.code(), std::string("'dataset': ") + e.what());
  }
  for (const auto& spec : ds.manifest.config.objects) {
    ds.models.emplace(spec.class_id, make_object(spec));
  }
  return ds;
}

std::vector<std::string> split_names(const Dataset& ds, const std::string& split,
                                     double fraction) {
  if (split == "test") return ds.manifest.test;
  if (split == "train") {
    if (ds.manifest.train.empty()) return {};
    return train_subset(ds.manifest, fraction);
  }
  throw Error(ErrorCode::kConfigError, "unknown split '" + split + "'");
}

std::vector<ClassInfo> class_infos(const Dataset& ds, const NetConfig& net) {
  std::vector<ClassInfo> out;
  for (const auto& [id, model] : ds.models) {
    if (id < 0 || id >= net.num_classes) {
      throw Error(ErrorCode::kConfigError,
                  "dataset class " + std::to_string(id) + " exceeds 'model.net.num_classes'");
    }
    out.push_back(make_class_info(model, net));
  }
  return out;
}

namespace {

const ClassInfo& find_class(const std::vector<ClassInfo>& classes, int id) {
  for (const auto& c : classes) {
    if (c.class_id == id) return c;
  }
  throw Error(ErrorCode::kConfigError, "class " + std::to_string(id) + " unknown");
}

}  // namespace

std::vector<TrainSample> load_train_samples(const Dataset& ds, const std::vector<ClassInfo>& classes,
                                            const FitOptions& fit, bool use_sphere) {
  const auto names = split_names(ds, "train", fit.fraction);
  if (names.empty()) throw Error(ErrorCode::kConfigError, "train split is empty");
  std::vector<TrainSample> samples;
  for (const auto& n : names) {
    const SceneRecord rec = read_record(ds.dir / n);
    auto s = make_train_sample(rec, find_class(classes, rec.class_id), use_sphere, n);
    if (s) samples.push_back(std::move(*s));
  }
  if (samples.empty()) throw Error(ErrorCode::kConfigError, "no usable training scenes");
  if (fit.equal_steps) {
    const std::size_t full = ds.manifest.train.size();
    const std::size_t base = samples.size();
    for (std::size_t i = base; i < full; ++i) samples.push_back(samples[i % base]);
  }
  return samples;
}

// --- evaluation ----------------------------------------------------------------

double EvalReport::mean_accuracy() const {
  if (classes.empty()) return 0.0;
  double s = 0.0;
  for (const auto& c : classes) s += c.accuracy;
  return s / static_cast<double>(classes.size());
}

ClassSummary EvalReport::aggregate() const {
  ClassSummary a;
  a.class_id = -1;
  a.name = "all";
  if (classes.empty()) return a;
  const double n = static_cast<double>(classes.size());
  for (const auto& c : classes) {
    a.scenes += c.scenes;
    a.found += c.found;
    a.diameter += c.diameter / n;
    a.accuracy += c.accuracy / n;
    a.add_accuracy += c.add_accuracy / n;
    a.adds_accuracy += c.adds_accuracy / n;
    a.adds_auc += c.adds_auc / n;
    a.mean_translation_mm += c.mean_translation_mm / n;
    a.median_translation_mm += c.median_translation_mm / n;
    a.mean_rotation_deg += c.mean_rotation_deg / n;
  }
  return a;
}

EvalReport evaluate(const Dataset& ds, const std::vector<std::string>& names,
                    const G2LCheckpoint* ckpt, const EvalOptions& opts,
                    const NetConfig& net_for_oracle) {
  if (names.empty()) throw Error(ErrorCode::kConfigError, "evaluation split is empty");
  if (!opts.oracle && !ckpt) throw Error(ErrorCode::kConfigError, "'eval.checkpoint' is not set");
  const NetConfig net = opts.oracle ? net_for_oracle : ckpt->config.net;
  const std::vector<ClassInfo> classes = opts.oracle ? class_infos(ds, net) : ckpt->classes;
  std::optional<G2LModel> model;
  if (!opts.oracle) model.emplace(model_from_checkpoint(*ckpt));
  const PipelineOptions popts = pipeline_options(net);
  const double inf = std::numeric_limits<double>::infinity();

  EvalReport report;
  for (const auto& name : names) {
    const SceneRecord rec = read_record(ds.dir / name);
    const auto mit = ds.models.find(rec.class_id);
    if (mit == ds.models.end()) throw Error(ErrorCode::kIoError, name + ": unknown class");
    const ClassInfo& cls = find_class(classes, rec.class_id);
    InferenceResult res;
    if (opts.oracle) {
      res = infer(rec, cls, OracleStages(rec.gt_pose, cls.keypoints), popts);
    } else {
      res = infer(rec, cls, *model, popts);
    }
    SceneEval e;
    e.scene_id = name;
    e.class_id = rec.class_id;
    e.found = res.found;
    e.diameter = mit->second.diameter;
    e.frustum_points = res.frustum_points;
    e.sphere_points = res.sphere_points;
    e.timings = res.timings;
    if (res.found) {
      const PoseErrorRecord pe = evaluate_pose(mit->second, rec.gt_pose, res.pose, name);
      e.add_mm = pe.add_mm;
      e.adds_mm = pe.adds_mm;
      e.error_mm = pe.error();
      e.translation_error_mm = (res.pose.translation - rec.gt_pose.translation).norm();
      e.rotation_error_deg =
          rotation_geodesic_error(res.pose.rotation, rec.gt_pose.rotation) * 180.0 / std::numbers::pi;
    } else {
      e.add_mm = e.adds_mm = e.error_mm = inf;
      e.translation_error_mm = e.rotation_error_deg = inf;
    }
    report.scenes.push_back(std::move(e));
  }

  for (const auto& [id, model_obj] : ds.models) {
    ClassSummary s;
    s.class_id = id;
    s.name = model_obj.name;
    s.diameter = model_obj.diameter;
    std::vector<double> errors, add_v, adds, terr;
    double rot_sum = 0.0;
    for (const auto& e : report.scenes) {
      if (e.class_id != id) continue;
      ++s.scenes;
      if (e.found) ++s.found;
      errors.push_back(e.error_mm);
      add_v.push_back(e.add_mm);
      adds.push_back(e.adds_mm);
      terr.push_back(e.translation_error_mm);
      rot_sum += e.rotation_error_deg;
    }
    if (s.scenes == 0) continue;
    s.accuracy = accuracy_at_threshold(errors, s.diameter, opts.accuracy_fraction);
    s.add_accuracy = accuracy_at_threshold(add_v, s.diameter, opts.accuracy_fraction);
    s.adds_accuracy = accuracy_at_threshold(adds, s.diameter, opts.accuracy_fraction);
    s.adds_auc = adds_auc(adds, opts.curve_max_mm);
    s.mean_translation_mm =
        std::accumulate(terr.begin(), terr.end(), 0.0) / static_cast<double>(terr.size());
    s.mean_rotation_deg = rot_sum / static_cast<double>(s.scenes);
    std::sort(terr.begin(), terr.end());
    const std::size_t n = terr.size();
    s.median_translation_mm = n % 2 ? terr[n / 2] : 0.5 * (terr[n / 2 - 1] + terr[n / 2]);
    s.curve = accuracy_curve(errors, opts.curve_max_mm, opts.curve_samples);
    report.classes.push_back(std::move(s));
  }
  return report;
}

// --- CSV output ----------------------------------------------------------------

namespace {

std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string num_g(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + p.string());
  out << text;
  if (!out) throw Error(ErrorCode::kIoError, "write failed: " + p.string());
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw Error(ErrorCode::kIoError, "cannot create " + p.string());
}

}  // namespace

std::string scene_results_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "scene_id,class_id,found,add_mm,adds_mm,error_mm,diameter_mm,translation_error_mm,"
        "rotation_error_deg,frustum_points,sphere_points\n";
  for (const auto& e : r.scenes) {
    os << e.scene_id << ',' << e.class_id << ',' << (e.found ? 1 : 0) << ',' << num(e.add_mm)
       << ',' << num(e.adds_mm) << ',' << num(e.error_mm) << ',' << num(e.diameter) << ','
       << num(e.translation_error_mm) << ',' << num(e.rotation_error_deg) << ','
       << e.frustum_points << ',' << e.sphere_points << '\n';
  }
  return os.str();
}

std::string class_summary_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "class_id,name,scenes,found,diameter_mm,accuracy,add_accuracy,adds_accuracy,adds_auc,"
        "mean_translation_mm,median_translation_mm,mean_rotation_deg\n";
  auto row = [&](const ClassSummary& c) {
    os << c.class_id << ',' << c.name << ',' << c.scenes << ',' << c.found << ','
       << num(c.diameter) << ',' << num(c.accuracy) << ',' << num(c.add_accuracy) << ','
       << num(c.adds_accuracy) << ',' << num(c.adds_auc) << ',' << num(c.mean_translation_mm)
       << ',' << num(c.median_translation_mm) << ',' << num(c.mean_rotation_deg) << '\n';
  };
  for (const auto& c : r.classes) row(c);
  if (!r.classes.empty()) row(r.aggregate());
  return os.str();
}

std::string loss_csv(const std::vector<EpochLog>& history) {
  std::ostringstream os;
  os << "epoch,lr,seg,trans,vec,rot,rre,total,kp_err_base_mm,kp_err_refined_mm\n";
  for (const auto& l : history) {
    os << l.epoch << ',' << num_g(l.lr) << ',' << num_g(l.seg) << ',' << num_g(l.trans) << ','
       << num_g(l.vec) << ',' << num_g(l.rot) << ',' << num_g(l.rre) << ',' << num_g(l.total)
       << ',' << num_g(l.kp_err_base) << ',' << num_g(l.kp_err_refined) << '\n';
  }
  return os.str();
}

// --- subcommands ---------------------------------------------------------------

DatasetManifest cmd_gen_data(const RunConfig& cfg, const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) {
    throw Error(ErrorCode::kIoError, "--out: cannot create directory " + out.string());
  }
  return gen_dataset(cfg.data, out);
}

G2LCheckpoint cmd_train(const RunConfig& cfg, const fs::path& out, std::ostream* log) {
  const Dataset ds = open_dataset(cfg.dataset);
  const auto classes = class_infos(ds, cfg.model.net);
  const auto samples = load_train_samples(ds, classes, cfg.fit, cfg.model.net.use_sphere);
  std::optional<G2LCheckpoint> resume;
  if (!cfg.fit.resume.empty()) resume = load_g2l_checkpoint(cfg.fit.resume);
  ensure_dir(out);
  auto on_epoch = [&](const EpochLog& l) {
    if (!log) return;
    *log << "epoch " << l.epoch << " lr " << num_g(l.lr) << " total " << num_g(l.total)
         << " seg " << num_g(l.seg) << " trans " << num_g(l.trans) << " vec " << num_g(l.vec)
         << " rot " << num_g(l.rot) << " rre " << num_g(l.rre) << '\n'
         << std::flush;
  };
  G2LCheckpoint ckpt =
      train_g2l(samples, classes, cfg.model, resume ? &*resume : nullptr, on_epoch);
  save_g2l_checkpoint(ckpt, out / "checkpoint.g2l");
  write_text(out / "loss.csv", loss_csv(ckpt.history));
  write_text(out / "config.json", run_config_to_json(cfg).dump(2) + "\n");
  return ckpt;
}

namespace {

void write_eval_outputs(const EvalReport& report, const fs::path& out) {
  ensure_dir(out);
  write_text(out / "results.csv", scene_results_csv(report));
  write_text(out / "summary.csv", class_summary_csv(report));
  std::ostringstream curve;
  curve << "class_id,threshold_mm,accuracy\n";
  for (const auto& c : report.classes) {
    for (std::size_t i = 0; i < c.curve.thresholds.size(); ++i) {
      curve << c.class_id << ',' << num(c.curve.thresholds[i]) << ',' << num(c.curve.accuracy[i])
            << '\n';
    }
  }
  write_text(out / "accuracy_curve.csv", curve.str());
  // Wall-clock timings vary run to run, so they stay out of the CSVs.
  json timing = json::array();
  for (const auto& e : report.scenes) {
    timing.push_back({{"scene_id", e.scene_id},
                      {"frustum_ms", e.timings.frustum_ms},
                      {"sphere_ms", e.timings.sphere_ms},
                      {"translation_ms", e.timings.translation_ms},
                      {"rotation_ms", e.timings.rotation_ms},
                      {"total_ms", e.timings.total_ms}});
  }
  write_text(out / "timing.json", timing.dump(1) + "\n");
}

}  // namespace

EvalReport cmd_eval(const RunConfig& cfg, const fs::path& out) {
  const Dataset ds = open_dataset(cfg.dataset);
  std::optional<G2LCheckpoint> ckpt;
  if (!cfg.eval.oracle) {
    if (cfg.eval.checkpoint.empty()) {
      throw Error(ErrorCode::kConfigError, "'eval.checkpoint' is not set");
    }
    ckpt = load_g2l_checkpoint(cfg.eval.checkpoint);
  }
  const auto names = split_names(ds, cfg.eval.split);
  if (names.empty()) {
    throw Error(ErrorCode::kConfigError, "split '" + cfg.eval.split + "' has no scenes");
  }
  EvalReport report = evaluate(ds, names, ckpt ? &*ckpt : nullptr, cfg.eval, cfg.model.net);
  write_eval_outputs(report, out);
  return report;
}

namespace {

struct CellSpec {
  std::string name;
  G2LConfig model;
  FitOptions fit;
};

std::vector<std::string> check_containment(const Dataset& ds, int* checked) {
  std::vector<std::string> bad;
  for (const auto& name : ds.manifest.test) {
    const SceneRecord rec = read_record(ds.dir / name);
    const double radius = ds.models.at(rec.class_id).diameter;
    PointCloud frustum;
    PointCloud sphere;
    try {
      frustum = frustum_crop(rec.depth, rec.intrinsics, rec.detection);
      const Vec3 c = sphere_center(rec.detection, rec.depth, rec.intrinsics);
      sphere = sphere_crop(frustum, SphereRegion{c, radius});
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kEmptyCloud && e.code() != ErrorCode::kMissingDepthAtPeak) throw;
    }
    ++*checked;
    std::set<std::tuple<double, double, double>> fset;
    for (const auto& p : frustum.points) fset.emplace(p.x(), p.y(), p.z());
    for (const auto& p : sphere.points) {
      if (!fset.count({p.x(), p.y(), p.z()})) {
        bad.push_back(name);
        break;
      }
    }
  }
  return bad;
}

}  // namespace

double train_and_evaluate(const Dataset& ds, const G2LConfig& model, const FitOptions& fit,
                          const EvalOptions& eval, const fs::path& run_dir) {
  const auto classes = class_infos(ds, model.net);
  const auto samples = load_train_samples(ds, classes, fit, model.net.use_sphere);
  const G2LCheckpoint ckpt = train_g2l(samples, classes, model, nullptr, nullptr);
  ensure_dir(run_dir);
  save_g2l_checkpoint(ckpt, run_dir / "checkpoint.g2l");
  write_text(run_dir / "loss.csv", loss_csv(ckpt.history));
  EvalOptions e = eval;
  e.oracle = false;
  const EvalReport report = evaluate(ds, ds.manifest.test, &ckpt, e, model.net);
  write_eval_outputs(report, run_dir);
  return report.mean_accuracy();
}

AblationResult cmd_ablate(const RunConfig& cfg, const fs::path& out, std::ostream* log) {
  const Dataset ds = open_dataset(cfg.dataset);
  ensure_dir(out);
  std::vector<CellSpec> cells;
  const std::string& grid = cfg.ablate.grid;
  if (grid == "novelty") {
    const bool flags[4][3] = {{false, false, false}, {true, false, false}, {true, true, false},
                              {true, true, true}};
    for (int i = 0; i < 4; ++i) {
      CellSpec c{"EXP" + std::to_string(i + 1), cfg.model, cfg.fit};
      c.model.net.use_sphere = flags[i][0];
      c.model.net.use_evf = flags[i][1];
      c.model.net.use_rre = flags[i][2];
      cells.push_back(c);
    }
  } else if (grid == "keypoints") {
    CellSpec bbx{"BBX-8", cfg.model, cfg.fit};
    bbx.model.net.keypoint_scheme = KeypointScheme::kBbx8;
    bbx.model.net.num_keypoints = 8;
    cells.push_back(bbx);
    for (int k : cfg.ablate.fps_counts) {
      CellSpec c{"FPS-" + std::to_string(k), cfg.model, cfg.fit};
      c.model.net.keypoint_scheme = KeypointScheme::kFps;
      c.model.net.num_keypoints = k;
      cells.push_back(c);
    }
  } else {
    for (double f : cfg.ablate.fractions) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%g%%", f * 100.0);
      CellSpec c{buf, cfg.model, cfg.fit};
      c.fit.fraction = f;
      c.fit.equal_steps = true;
      cells.push_back(c);
    }
  }

  AblationResult result;
  result.grid = grid;
  for (const auto& cell : cells) {
    AblationCell row;
    row.name = cell.name;
    std::string dir_name = cell.name;
    std::replace(dir_name.begin(), dir_name.end(), '%', 'p');
    for (auto seed : cfg.ablate.seeds) {
      const fs::path run_dir = out / (dir_name + "_seed" + std::to_string(seed));
      G2LConfig model = cell.model;
      model.train.seed = seed;
      row.accuracy[seed] = train_and_evaluate(ds, model, cell.fit, cfg.eval, run_dir);
      if (log) {
        *log << cell.name << " seed " << seed << " accuracy " << num(row.accuracy[seed]) << '\n'
             << std::flush;
      }
    }
    double s = 0.0;
    for (const auto& [seed, acc] : row.accuracy) s += acc;
    row.mean = s / static_cast<double>(row.accuracy.size());
    result.cells.push_back(row);
  }

  std::ostringstream os;
  os << "cell";
  for (auto seed : cfg.ablate.seeds) os << ",seed_" << seed;
  os << ",mean_accuracy\n";
  for (const auto& c : result.cells) {
    os << c.name;
    for (auto seed : cfg.ablate.seeds) os << ',' << num(c.accuracy.at(seed));
    os << ',' << num(c.mean) << '\n';
  }
  write_text(out / ("ablation_" + grid + ".csv"), os.str());

  if (grid == "novelty") {
    result.containment_violations = check_containment(ds, &result.containment_checked);
    std::ostringstream cs;
    cs << "checked,violations\n"
       << result.containment_checked << ',' << result.containment_violations.size() << '\n';
    write_text(out / "crop_containment.csv", cs.str());
  }
  return result;
}

// --- plotting ------------------------------------------------------------------

namespace {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name, const std::string& file) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw Error(ErrorCode::kIoError, file + " has no column '" + name + "'");
  }
  std::vector<double> numbers(const std::string& name, const std::string& file) const {
    const std::size_t c = column(name, file);
    std::vector<double> v;
    for (const auto& r : rows) {
      if (c >= r.size()) throw Error(ErrorCode::kIoError, file + ": short row");
      const std::string& s = r[c];
      if (s == "inf") {
        v.push_back(std::numeric_limits<double>::infinity());
      } else {
        try {
          v.push_back(std::stod(s));
        } catch (const std::exception&) {
          throw Error(ErrorCode::kIoError, file + ": bad number '" + s + "'");
        }
      }
    }
    return v;
  }
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

CsvTable read_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + p.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kIoError, p.string() + " is empty");
  t.header = split_csv(line);
  while (std::getline(in, line)) {
    if (!line.empty()) t.rows.push_back(split_csv(line));
  }
  return t;
}

std::string series_csv(const PlotSeries& s) {
  std::ostringstream os;
  for (std::size_t i = 0; i < s.labels.size(); ++i) os << (i ? "," : "") << s.labels[i];
  os << '\n';
  const std::size_t n = s.columns.empty() ? 0 : s.columns[0].size();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < s.columns.size(); ++c) {
      os << (c ? "," : "") << num_g(s.columns[c][r]);
    }
    os << '\n';
  }
  return os.str();
}

std::string series_svg(const PlotSeries& s) {
  const double w = 640, h = 400, m = 50;
  const auto& x = s.columns[0];
  double x0 = x.empty() ? 0 : *std::min_element(x.begin(), x.end());
  double x1 = x.empty() ? 1 : *std::max_element(x.begin(), x.end());
  double y0 = 0.0, y1 = 0.0;
  for (std::size_t c = 1; c < s.columns.size(); ++c) {
    for (double v : s.columns[c]) {
      if (std::isfinite(v)) y1 = std::max(y1, v), y0 = std::min(y0, v);
    }
  }
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<line x1=\"" << m << "\" y1=\"" << h - m << "\" x2=\"" << w - m << "\" y2=\"" << h - m
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << m << "\" y1=\"" << m << "\" x2=\"" << m << "\" y2=\"" << h - m
     << "\" stroke=\"black\"/>\n"
     << "<text x=\"" << w / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\">" << s.labels[0]
     << "</text>\n"
     << "<text x=\"" << m << "\" y=\"" << m - 10 << "\">max " << num_g(y1) << "</text>\n";
  for (std::size_t c = 1; c < s.columns.size(); ++c) {
    const char* colour = colours[(c - 1) % 6];
    os << "<polyline fill=\"none\" stroke=\"" << colour << "\" points=\"";
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = s.columns[c][i];
      if (!std::isfinite(v)) continue;
      const double px = m + (x[i] - x0) / (x1 - x0) * (w - 2 * m);
      const double py = h - m - (v - y0) / (y1 - y0) * (h - 2 * m);
      os << num(px) << ',' << num(py) << ' ';
    }
    os << "\"/>\n<text x=\"" << w - m - 150 << "\" y=\"" << m + 18 * c << "\" fill=\"" << colour
       << "\">" << s.labels[c] << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace

PlotSeries cmd_plot(const RunConfig& cfg, const fs::path& out) {
  if (cfg.plot.input.empty()) throw Error(ErrorCode::kConfigError, "'plot.input' is not set");
  const std::string file = cfg.plot.input;
  const CsvTable t = read_csv(file);
  PlotSeries s;
  if (cfg.plot.kind == "accuracy_curve") {
    const auto errors = t.numbers("error_mm", file);
    const AccuracyCurve c = accuracy_curve(errors, cfg.eval.curve_max_mm, cfg.eval.curve_samples);
    s.labels = {"threshold_mm", "accuracy"};
    s.columns = {c.thresholds, c.accuracy};
  } else if (cfg.plot.kind == "rre_impact") {
    const auto base = t.numbers("kp_err_base_mm", file);
    const auto refined = t.numbers("kp_err_refined_mm", file);
    std::vector<double> ratio(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      ratio[i] = base[i] > 0.0 ? refined[i] / base[i] : 1.0;
    }
    s.labels = {"epoch", "kp_err_base_mm", "kp_err_refined_mm", "ratio"};
    s.columns = {t.numbers("epoch", file), base, refined, ratio};
  } else {
    s.labels = {"epoch", "seg", "trans", "vec", "rot", "rre", "total"};
    for (const auto& l : s.labels) s.columns.push_back(t.numbers(l, file));
  }
  ensure_dir(out);
  write_text(out / "plot.csv", series_csv(s));
  if (cfg.plot.svg) write_text(out / "plot.svg", series_svg(s));
  return s;
}

}  // namespace g2l
